import pytest
import torch

from promptseg3d.models.network import PromptSegNetwork, build_model


def _fwd(model, size=16, n_points=2, seed=0):
    torch.manual_seed(seed)
    image = torch.randn(1, 1, size, size, size)
    positions = torch.rand(n_points, 3) * (size - 1)
    labels = torch.randint(0, 2, (n_points,))
    with torch.no_grad():
        return model(image, positions, labels)


def test_forward_shape(micro_model_session):
    out = _fwd(micro_model_session)
    assert out.shape == (1, 1, 16, 16, 16)
    assert torch.isfinite(out).all()


def test_forward_without_prompts(micro_model_session):
    torch.manual_seed(1)
    image = torch.randn(1, 1, 16, 16, 16)
    with torch.no_grad():
        out = micro_model_session(image, torch.zeros(0, 3), torch.zeros(0))
    assert out.shape == (1, 1, 16, 16, 16)
    assert torch.isfinite(out).all()


def test_forward_validates_image(micro_model_session):
    with pytest.raises(ValueError, match="expected"):
        _ = micro_model_session(torch.randn(1, 2, 16, 16, 16),
                                torch.zeros(1, 3), torch.zeros(1))


def test_model_level_partition(micro_model_session):
    part = micro_model_session.parameter_partition()
    frozen = set(part.frozen)
    trainable = set(part.trainable)
    assert all(n.startswith("vit.") for n in frozen)
    # the underscore in self_attn keeps the prompt encoder out of the
    # transformer's ".attn." freezing rule
    assert any(n.startswith("prompt_encoder.self_attn.") for n in trainable)
    assert all(not n.startswith("cnn.") for n in frozen)
    assert all(not n.startswith("decoder.") for n in frozen)
    assert "vit.embed.pos_embed_2d" in frozen
    assert "vit.embed.depth_proj.weight" in trainable
    all_names = {n for n, _ in micro_model_session.named_parameters()}
    assert frozen | trainable == all_names and not frozen & trainable


def test_requires_grad_applied_at_build(micro_model_session):
    part = micro_model_session.parameter_partition()
    named = dict(micro_model_session.named_parameters())
    assert all(not named[n].requires_grad for n in part.frozen)
    assert all(named[n].requires_grad for n in part.trainable)


def test_trainable_parameters_match_partition(micro_model_session):
    part = micro_model_session.parameter_partition()
    params = micro_model_session.trainable_parameters()
    assert len(params) == len(part.trainable)
    assert sum(p.numel() for p in params) < sum(
        p.numel() for p in micro_model_session.parameters())


def test_build_model_seed_determinism(micro_config):
    a = build_model(micro_config, seed=3)
    b = build_model(micro_config, seed=3)
    c = build_model(micro_config, seed=4)
    names = [n for n, _ in a.named_parameters()]
    pa, pb, pc = (dict(m.named_parameters()) for m in (a, b, c))
    for n in names:
        assert torch.equal(pa[n], pb[n]), n
    assert any(not torch.equal(pa[n], pc[n]) for n in names)


def test_build_model_defaults_to_config_seed(micro_config):
    a = build_model(micro_config)
    b = build_model(micro_config, seed=micro_config.optim.seed)
    for (n, p), (_, q) in zip(a.named_parameters(), b.named_parameters()):
        assert torch.equal(p, q), n


def test_same_image_different_prompts_differ(micro_model_session):
    torch.manual_seed(2)
    image = torch.randn(1, 1, 16, 16, 16)
    with torch.no_grad():
        a = micro_model_session(image, torch.tensor([[2.0, 2.0, 2.0]]),
                                torch.tensor([1]))
        b = micro_model_session(image, torch.tensor([[13.0, 13.0, 13.0]]),
                                torch.tensor([1]))
    assert (a - b).abs().max().item() > 1e-6
