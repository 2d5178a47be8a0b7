"""End-to-end acceptance checks, one per shipped guarantee.

Each test states its criterion, measures it, and records a PASS/FAIL line
for the terminal summary. Tolerances are written next to the asserts.
"""

import io
import json
import os
import time

import jsonschema
import numpy as np
import pytest
import torch
from fastapi.testclient import TestClient

import promptseg3d
from promptseg3d.config import (DataConfig, ModelConfig, OptimConfig,
                                PromptConfig, ablation_presets)
from promptseg3d.data.io import save_volume
from promptseg3d.data.patches import derive_seed, sample_patch, upsample_patch
from promptseg3d.data.synthetic import SyntheticSpec, generate_synthetic_case
from promptseg3d.data.volume import LabelMask, Volume
from promptseg3d.inference import centroid_foreground_prompt, infer_volume
from promptseg3d.losses import BoundarySpec, LossWeights, boundary_map, total_loss
from promptseg3d.metrics import dice_score, nsd_score
from promptseg3d.models.decoder import DecoderConfig, predict_mask
from promptseg3d.models.network import build_model
from promptseg3d.models.vit3d import DepthAwareAdapter, EncoderConfig
from promptseg3d.prompts import prompts_to_arrays, simulate_prompts
from promptseg3d.service import create_app
from promptseg3d.training import (load_checkpoint, lr_at, save_checkpoint,
                                  train_model)
from tests.conftest import make_micro_config, rand_binary, record_criterion
from tests.test_losses import boundary_map_oracle
from tests.test_metrics import _random_blob_pair, dice_oracle, nsd_oracle


def test_boundary_map_oracle_bulk():
    """Criterion: the soft boundary extractor agrees with an independent
    sliding-window implementation to 1e-6 over 100 random 16-cube masks,
    in under 30 seconds."""
    rng = np.random.default_rng(0)
    t0 = time.time()
    worst = 0.0
    for i in range(100):
        mask = rand_binary((16, 16, 16), rng, p=rng.uniform(0.05, 0.95))
        for k in (3, 5):
            got = boundary_map(torch.tensor(mask, dtype=torch.float32),
                               BoundarySpec(kernel_size=k)).numpy()
            want = boundary_map_oracle(mask.astype(np.float64), k)
            worst = max(worst, float(np.abs(got - want).max()))
    elapsed = time.time() - t0
    ok = worst < 1e-6 and elapsed < 30.0
    record_criterion("boundary map matches oracle on 100 random masks", ok,
                     f"max err {worst:.2e}, {elapsed:.1f}s")
    assert worst < 1e-6
    assert elapsed < 30.0


def test_metric_oracles_bulk():
    """Criterion: Dice agrees exactly and surface Dice to 1e-9 with
    brute-force oracles over 100 random blob pairs, in under 2 minutes."""
    rng = np.random.default_rng(1)
    t0 = time.time()
    worst_nsd = 0.0
    for i in range(100):
        a, b = _random_blob_pair(rng)
        assert dice_score(a, b) == dice_oracle(a, b)
        spacing = (1.0, 1.0, 1.0) if i % 10 else (0.5, 1.0, 2.0)
        tol = float(rng.uniform(0.5, 2.0))
        got = nsd_score(a, b, tolerance_mm=tol, spacing=spacing)
        want = nsd_oracle(a, b, tol, spacing)
        worst_nsd = max(worst_nsd, abs(got - want))
    elapsed = time.time() - t0
    ok = worst_nsd <= 1e-9 and elapsed < 120.0
    record_criterion("dice and surface dice match brute-force oracles", ok,
                     f"nsd err {worst_nsd:.2e}, {elapsed:.1f}s")
    assert worst_nsd <= 1e-9
    assert elapsed < 120.0


def test_loss_gradients_match_finite_differences():
    """Criterion: analytic gradients of the combined loss agree with central
    differences (h=1e-5, float64) to a relative error of 1e-4."""
    torch.manual_seed(2)
    rng = np.random.default_rng(2)
    logits = torch.randn(1, 1, 8, 8, 8, dtype=torch.float64,
                         requires_grad=True)
    target = torch.tensor(rand_binary((8, 8, 8), rng, 0.3),
                          dtype=torch.float64)[None, None]
    weights = LossWeights()
    spec = BoundarySpec()
    total_loss(logits, target, weights, spec).backward()
    grad = logits.grad.clone()

    h = 1e-5
    worst = 0.0
    flat_idx = rng.choice(8 ** 3, size=20, replace=False)
    for fi in flat_idx:
        idx = (0, 0, *np.unravel_index(fi, (8, 8, 8)))
        with torch.no_grad():
            for sign in (+1, -1):
                probe = logits.detach().clone()
                probe[idx] += sign * h
                if sign > 0:
                    up = total_loss(probe, target, weights, spec).item()
                else:
                    down = total_loss(probe, target, weights, spec).item()
        numeric = (up - down) / (2 * h)
        analytic = grad[idx].item()
        rel = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-8)
        worst = max(worst, rel)
    ok = worst <= 1e-4
    record_criterion("loss gradients match finite differences", ok,
                     f"worst rel err {worst:.2e} over 20 coordinates")
    assert worst <= 1e-4, worst


def test_adapters_identity_and_backbone_frozen():
    """Criterion: adapters are an exact identity at initialization, and a
    short training run leaves every frozen tensor bit-identical while moving
    at least 95% of the trainable ones."""
    torch.manual_seed(3)
    adapter = DepthAwareAdapter(32)
    x = torch.randn(2, 3, 4, 4, 32)
    with torch.no_grad():
        identity = torch.equal(adapter(x), x)

    cfg = make_micro_config(optim=OptimConfig(iterations_per_epoch=5,
                                              max_epochs=1))
    reference = build_model(cfg)
    before = {n: p.detach().clone() for n, p in reference.named_parameters()}
    case = generate_synthetic_case(
        SyntheticSpec(shape=(16, 16, 16), blob_radius_range=(3.0, 5.0)),
        rng_seed=30)
    result = train_model(cfg, cases=[case], n_epochs=1)
    part = result.model.parameter_partition()
    after = dict(result.model.named_parameters())
    frozen_ok = all(torch.equal(after[n], before[n]) for n in part.frozen)
    changed = sum(1 for n in part.trainable
                  if not torch.equal(after[n], before[n]))
    frac = changed / len(part.trainable)
    ok = identity and frozen_ok and frac >= 0.95
    record_criterion(
        "adapters start as identity; backbone stays frozen in training", ok,
        f"identity={identity}, frozen intact={frozen_ok}, "
        f"{frac:.0%} of trainable moved")
    assert identity
    assert frozen_ok
    assert frac >= 0.95


# --- single-case memorization ---------------------------------------------------

def _overfit_config() -> ModelConfig:
    return ModelConfig(
        encoder=EncoderConfig(n_blocks=2, embed_dim=32, n_heads=2,
                              spatial_patch=16, depth_patch=16,
                              pos_embed_grid=2, pos_embed_depth=2,
                              tap_blocks=(1, 2)),
        decoder=DecoderConfig(refine_channels=32),
        prompt=PromptConfig(n_train_points=4, n_queries=2, d_prompt=32,
                            n_heads=2),
        # augmentation off: this is a memorization probe, not a generalization one
        data=DataConfig(patch_size=16, model_input_size=64, augment=False),
        optim=OptimConfig(lr0=1e-3, lr_decrement_per_epoch=1e-5,
                          max_epochs=10, iterations_per_epoch=30, seed=0),
        cnn_channels=(8, 16),
    )


@pytest.fixture(scope="module")
def overfit():
    """One case, 300 gradient steps; shared by the capacity and prompt
    sensitivity criteria."""
    cfg = _overfit_config()
    spec = SyntheticSpec(shape=(32, 32, 32), blob_radius_range=(5.0, 7.0),
                         noise_std=0.05, foreground_contrast=1.5,
                         bias_strength=0.1, boundary_irregularity=0.1)
    case = generate_synthetic_case(spec, rng_seed=11)
    t0 = time.time()
    result = train_model(cfg, cases=[case], val_cases=[case])
    return {"config": cfg, "case": case, "result": result,
            "seconds": time.time() - t0}


def test_overfits_single_case(overfit):
    """Criterion: 300 steps on one synthetic case reach Dice >= 0.90 on a
    training patch and >= 0.85 on whole-volume inference, within 15 minutes,
    with the best-so-far loss improving at least 10 times."""
    cfg, (vol, mask) = overfit["config"], overfit["case"]
    result, seconds = overfit["result"], overfit["seconds"]
    model = result.model

    steps = [l for rec in result.history for l in rec["losses"]]
    assert len(steps) <= 300
    best, improvements = float("inf"), 0
    for l in steps:
        if l < best:
            best, improvements = l, improvements + 1

    patch = upsample_patch(sample_patch(vol, mask, 16,
                                        rng_seed=derive_seed(999, 0)), 64)
    positions, labels = prompts_to_arrays(
        simulate_prompts(patch.mask, 4, rng_seed=derive_seed(999, 2)))
    with torch.no_grad():
        logits = model(torch.from_numpy(patch.image)[None, None],
                       torch.from_numpy(positions), torch.from_numpy(labels))
    patch_dice = dice_score(predict_mask(logits)[0, 0], patch.mask)

    pred, _ = infer_volume(vol, [centroid_foreground_prompt(mask)], model, cfg)
    volume_dice = dice_score(pred.data, mask.data)

    ok = (patch_dice >= 0.90 and volume_dice >= 0.85 and seconds <= 900
          and improvements >= 10)
    record_criterion(
        "single-case training memorizes the case", ok,
        f"patch dice {patch_dice:.3f}, volume dice {volume_dice:.3f}, "
        f"{len(steps)} steps in {seconds:.0f}s, {improvements} loss improvements")
    assert patch_dice >= 0.90, patch_dice
    assert volume_dice >= 0.85, volume_dice
    assert seconds <= 900, seconds
    assert improvements >= 10, improvements


def test_prompts_steer_the_prediction(overfit):
    """Criterion: moving the click away from the object changes the
    prediction (Dice between the two predictions < 0.99)."""
    cfg, (vol, mask) = overfit["config"], overfit["case"]
    model = overfit["result"].model
    on_target = centroid_foreground_prompt(mask)
    off_target = type(on_target)(position=(2.0, 2.0, 2.0), label="bg")
    pred_on, _ = infer_volume(vol, [on_target], model, cfg)
    pred_off, _ = infer_volume(vol, [off_target], model, cfg)
    agreement = dice_score(pred_on.data, pred_off.data)
    ok = agreement < 0.99 and pred_on.data.sum() > 0
    record_criterion("predictions follow the prompt", ok,
                     f"dice between on/off-target predictions {agreement:.3f}")
    assert pred_on.data.sum() > 0
    assert agreement < 0.99, agreement


def test_architecture_variants_train_and_count():
    """Criterion: all six architecture/loss variants run two training steps
    plus inference without error; the loss switch is parameter-free, and the
    learned-upsampling step costs exactly its transposed convolutions."""
    presets = ablation_presets()
    counts = {name: sum(p.numel()
                        for p in build_model(cfg, seed=0).parameters())
              for name, cfg in presets.items()}
    eq_loss_free = (counts["up_conv"] == counts["residual_boundary"]
                    and counts["concat"] == counts["concat_boundary"])
    up_model = build_model(presets["up_conv"], seed=0)
    added = sum(p.numel() for p in up_model.decoder.up_convs.parameters())
    eq_up_conv = counts["up_conv"] - counts["two_adapters"] == added
    ordering = (counts["baseline"] < counts["two_adapters"]
                < counts["up_conv"] < counts["concat"])

    import dataclasses
    case = generate_synthetic_case(
        SyntheticSpec(shape=(32, 32, 32), blob_radius_range=(5.0, 7.0)),
        rng_seed=12)
    failures = []
    for name, preset in presets.items():
        small = dataclasses.replace(
            preset,
            data=DataConfig(patch_size=16, model_input_size=64, augment=False),
            optim=OptimConfig(iterations_per_epoch=2, max_epochs=1, seed=0))
        try:
            result = train_model(small, cases=[case], n_epochs=1)
            pred, _ = infer_volume(case[0],
                                   [centroid_foreground_prompt(case[1])],
                                   result.model, small)
            assert pred.shape == case[0].shape
        except Exception as exc:  # noqa: BLE001 - recorded then re-raised
            failures.append(f"{name}: {exc}")
    ok = eq_loss_free and eq_up_conv and ordering and not failures
    record_criterion(
        "all six architecture variants train, infer, and count correctly", ok,
        f"counts {counts}" + (f"; failures {failures}" if failures else ""))
    assert eq_loss_free
    assert eq_up_conv
    assert ordering
    assert not failures, failures


def test_learning_rate_schedule_contract():
    """Criterion: linear schedule hits the documented anchors exactly and
    rejects epochs outside its domain."""
    anchors = (lr_at(0) == pytest.approx(4e-4, rel=1e-12)
               and lr_at(100) == pytest.approx(2e-4, rel=1e-12)
               and lr_at(199) > 0)
    domain_ok = True
    for bad in (-1, 200):
        try:
            lr_at(bad)
            domain_ok = False
        except ValueError:
            pass
    try:
        OptimConfig(lr0=1e-4, lr_decrement_per_epoch=2e-6, max_epochs=60)
        invariant_ok = False
    except ValueError:
        invariant_ok = True
    ok = anchors and domain_ok and invariant_ok
    record_criterion("learning-rate schedule anchors and domain", ok,
                     f"lr(0)={lr_at(0):.1e}, lr(100)={lr_at(100):.1e}")
    assert ok


def test_sampling_statistics():
    """Criterion: the patch sampler centers on foreground half the time
    (within [0.47, 0.53] over 10k draws), and simulated prompts never carry
    a label contradicting the mask under them (0 violations in 1000 masks)."""
    rng = np.random.default_rng(4)
    data = rng.normal(size=(16, 16, 16)).astype(np.float32)
    mask_np = np.zeros((16, 16, 16), dtype=np.uint8)
    mask_np[8, 8, 8] = 1  # single foreground voxel: uniform draws ~never hit it
    vol = Volume(data=data, spacing=(1, 1, 1), origin=(0, 0, 0), id="v")
    mask = LabelMask(data=mask_np, spacing=(1, 1, 1), origin=(0, 0, 0), id="m")
    hits = sum(int(mask_np[sample_patch(vol, mask, 8, rng_seed=s).center])
               for s in range(10_000))
    frac = hits / 10_000

    violations = 0
    for i in range(1000):
        m = rand_binary((8, 8, 8), rng, p=rng.uniform(0.0, 0.6))
        if i % 2:
            m[:] = 0  # exercise the background-only branch too
        for p in simulate_prompts(m, 4, rng_seed=i):
            z, y, x = (int(v) for v in p.position)
            want = 1 if p.is_foreground else 0
            violations += int(m[z, y, x] != want)

    ok = 0.47 <= frac <= 0.53 and violations == 0
    record_criterion("patch sampler and prompt simulator statistics", ok,
                     f"fg-centered fraction {frac:.3f}, "
                     f"label violations {violations}")
    assert 0.47 <= frac <= 0.53, frac
    assert violations == 0, violations


def test_checkpoint_and_service_equivalence(tmp_path, micro_config,
                                            micro_model_session, synth_case):
    """Criterion: a checkpoint round trip is bit-exact, and segmenting over
    HTTP returns the same voxels as calling the library directly."""
    path = tmp_path / "model.pt"
    save_checkpoint(micro_model_session, micro_config, path)
    loaded, _ = load_checkpoint(path, expected_config=micro_config)
    before = dict(micro_model_session.named_parameters())
    bit_exact = all(torch.equal(p, before[n])
                    for n, p in loaded.named_parameters())

    vol_path = tmp_path / "case.nii.gz"
    save_volume(synth_case[0], vol_path)
    app = create_app(loaded, micro_config)
    with TestClient(app) as client:
        vid = client.post("/volumes",
                          content=vol_path.read_bytes()).json()["volume_id"]
        body = client.post(f"/volumes/{vid}/segment", json={
            "points": [{"x": 16, "y": 16, "z": 16, "label": "fg"}]}).json()
        jsonschema.validate(body, json.loads(
            promptseg3d.schema_path("segment_response").read_text()))
        raw = client.get(f"/masks/{body['mask_id']}").content
    api_path = tmp_path / "api_mask.nii.gz"
    api_path.write_bytes(raw)
    from promptseg3d.data.io import load_volume
    from promptseg3d.data.preprocess import preprocess_case
    from promptseg3d.prompts import PointPrompt
    api_mask, _ = load_volume(api_path)
    pre, _ = preprocess_case(synth_case[0], None,
                             micro_config.data.preprocess)
    lib_mask, _ = infer_volume(pre, [PointPrompt(position=(16.0, 16.0, 16.0),
                                                 label="fg")],
                               micro_model_session, micro_config)
    same = np.array_equal(api_mask.data.astype(np.uint8), lib_mask.data)
    ok = bit_exact and same
    record_criterion("checkpoint round trip and HTTP parity", ok,
                     f"weights bit-exact={bit_exact}, masks identical={same}")
    assert bit_exact
    assert same


def test_pretrained_2d_transplant_if_available():
    """Criterion (conditional): importing a real pretrained 2D encoder
    populates every mapped tensor and leaves it frozen. Runs only when
    PROMPTSEG3D_PRETRAINED_VIT points at such a checkpoint."""
    path = os.environ.get("PROMPTSEG3D_PRETRAINED_VIT")
    if not path or not os.path.exists(path):
        record_criterion("pretrained 2D encoder transplant", None,
                         "no PROMPTSEG3D_PRETRAINED_VIT checkpoint available")
        pytest.skip("no pretrained 2D checkpoint available")
    from promptseg3d.models.vit3d import (VolumeTransformerEncoder,
                                          transplant_pretrained)
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if isinstance(payload, dict):
        for key in ("state_dict", "model"):
            if key in payload:
                payload = payload[key]
                break
    enc = VolumeTransformerEncoder(EncoderConfig.vit_b())
    report = transplant_pretrained(enc, payload)
    named = dict(enc.named_parameters())
    frozen = set(report.partition.frozen)
    mapped_frozen = [row["target"] for row in report.mapping
                     if row["target"] in frozen]
    ok = (len(report.mapping) >= 100
          and all(not named[t].requires_grad for t in mapped_frozen))
    record_criterion("pretrained 2D encoder transplant", ok,
                     f"{len(report.mapping)} tensors mapped, "
                     f"{len(report.skipped)} skipped")
    assert ok
