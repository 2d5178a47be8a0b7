import numpy as np
import pytest
import torch
import torch.nn.functional as F

from promptseg3d.models.cnn import FusionBlock, LocalDetailEncoder


def test_level_shapes_and_strides():
    torch.manual_seed(0)
    enc = LocalDetailEncoder(channels=(8, 16, 32))
    with torch.no_grad():
        levels = enc(torch.randn(2, 1, 16, 16, 16))
    assert [lv.stride for lv in levels] == [1, 2, 4]
    assert levels[0].features.shape == (2, 8, 16, 16, 16)
    assert levels[1].features.shape == (2, 16, 8, 8, 8)
    assert levels[2].features.shape == (2, 32, 4, 4, 4)
    assert enc.strides == (1, 2, 4)


def test_input_validation():
    enc = LocalDetailEncoder(channels=(8, 16))
    with pytest.raises(ValueError, match="expected"):
        enc(torch.randn(1, 3, 8, 8, 8))
    with pytest.raises(ValueError, match="expected"):
        enc(torch.randn(8, 8, 8))
    with pytest.raises(ValueError, match="too small"):
        enc(torch.randn(1, 1, 1, 8, 8))
    with pytest.raises(ValueError, match="at least one"):
        LocalDetailEncoder(channels=())


def test_intensity_scale_invariance():
    """Convolution is linear in the input, so a positive global rescale
    multiplies the centered first-conv response and its spread by the same
    factor; instance norm cancels it exactly, borders included."""
    torch.manual_seed(2)
    enc = LocalDetailEncoder(channels=(8, 16))
    x = torch.randn(1, 1, 12, 12, 12)
    with torch.no_grad():
        a = enc(x)
        for scale in (2.5, 0.3):
            b = enc(scale * x)
            for la, lb in zip(a, b):
                np.testing.assert_allclose(lb.features.numpy(),
                                           la.features.numpy(), atol=1e-3)


def test_translation_consistency_interior_blob():
    """Shifting a compactly supported blob by a stride multiple shifts the
    features by the corresponding amount away from the borders. The volume
    must be roomy enough that the blob's receptive footprint never meets the
    zero-padding frame, else the instance statistics diverge."""
    torch.manual_seed(3)
    enc = LocalDetailEncoder(channels=(8, 16, 32))
    blob = torch.randn(4, 4, 4)
    x = torch.zeros(1, 1, 48, 48, 48)
    x[0, 0, 20:24, 20:24, 20:24] = blob
    x_shift = torch.zeros_like(x)
    x_shift[0, 0, 24:28, 20:24, 20:24] = blob
    halos = {1: 2, 2: 2, 4: 3}  # border frame width per level, in cells
    with torch.no_grad():
        a = enc(x)
        b = enc(x_shift)
    for la, lb in zip(a, b):
        step = 4 // la.stride
        h = halos[la.stride]
        n = la.features.shape[2]
        got = lb.features[:, :, h + step:n - h, h:n - h, h:n - h]
        want = la.features[:, :, h:n - h - step, h:n - h, h:n - h]
        assert got.abs().max() > 0.1  # crop actually contains the blob
        np.testing.assert_allclose(got.numpy(), want.numpy(), atol=1e-6)


def test_fusion_residual_recompute():
    torch.manual_seed(4)
    fb = FusionBlock(8, 16, mode="residual")
    cnn = torch.randn(1, 8, 4, 4, 4)
    dec = torch.randn(1, 16, 4, 4, 4)
    with torch.no_grad():
        out = fb(cnn, dec)
        want = dec + F.conv3d(cnn, fb.proj.weight, fb.proj.bias)
    np.testing.assert_allclose(out.numpy(), want.numpy(), atol=1e-6)


def test_fusion_concat_shape_and_recompute():
    torch.manual_seed(5)
    fb = FusionBlock(8, 16, mode="concatenate")
    cnn = torch.randn(1, 8, 4, 4, 4)
    dec = torch.randn(1, 16, 4, 4, 4)
    with torch.no_grad():
        out = fb(cnn, dec)
        want = F.conv3d(torch.cat([cnn, dec], dim=1),
                        fb.proj.weight, fb.proj.bias)
    assert out.shape == (1, 16, 4, 4, 4)
    np.testing.assert_allclose(out.numpy(), want.numpy(), atol=1e-6)


def test_fusion_mode_param_difference():
    """Concatenation costs exactly decoder_channels^2 extra weights (the 1x1
    kernel grows by the decoder width along its input axis)."""
    n = {m: sum(p.numel() for p in FusionBlock(8, 16, mode=m).parameters())
         for m in ("residual", "concatenate")}
    assert n["concatenate"] - n["residual"] == 16 * 16


def test_fusion_validation():
    fb = FusionBlock(8, 16, mode="residual")
    with pytest.raises(ValueError, match="shape mismatch"):
        fb(torch.randn(1, 8, 4, 4, 4), torch.randn(1, 16, 8, 8, 8))
    with pytest.raises(ValueError, match="unknown fusion mode"):
        FusionBlock(8, 16, mode="add")


def test_encoder_stays_small(vit_b_frozen_count):
    n = sum(p.numel() for p in LocalDetailEncoder((16, 32, 64)).parameters())
    assert n < 0.05 * vit_b_frozen_count
