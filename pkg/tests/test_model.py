import numpy as np
import pytest
import torch

from motifbox.errors import CompatibilityError, FormatError, ShapeError, StateError
from motifbox.gradcheck import finite_difference_check
from motifbox.model import (BaselineNet, Detector, DetectorConfig, count_params, forward_baseline,
                            forward_detector, load_checkpoint, save_checkpoint)

TINY = DetectorConfig(n_classes=2, channels=(2, 2, 4, 4, 4), depths=(1, 1, 1, 1, 1))


def zero_params(model):
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()


def test_detector_output_shape():
    out = forward_detector(np.random.default_rng(0).random((84, 646)), Detector())
    assert tuple(out.shape) == (1, 3, 11, 16)
    assert torch.isfinite(out).all()


def test_shape_error():
    with pytest.raises(ShapeError):
        Detector(TINY)(torch.zeros(1, 84, 600))
    with pytest.raises(ShapeError):
        BaselineNet(TINY)(torch.zeros(1, 80, 646))


def test_zero_in_zero_out():
    m = Detector(TINY)
    zero_params(m)
    assert not m(torch.zeros(1, 84, 646)).any()
    b = BaselineNet(TINY)
    zero_params(b)
    assert not b(torch.zeros(1, 84, 646)).any()


def test_early_frames_influence_output():
    m = Detector(TINY, seed=1)
    x = torch.rand(1, 84, 646)
    y = x.clone()
    y[..., :59] = torch.rand(1, 84, 59)
    assert not torch.equal(m(x), m(y))


def test_baseline_shape_and_range():
    b = BaselineNet(TINY, seed=2)
    logits = forward_baseline(np.random.default_rng(1).random((84, 646)), b)
    assert tuple(logits.shape) == (1, 2, 646)
    p = torch.sigmoid(logits)
    assert ((p > 0) & (p < 1)).all()


def test_count_params():
    assert count_params([]) == 0
    assert count_params([torch.zeros(64, 32, 3, 3), torch.zeros(64)]) == 18496
    m = Detector(TINY)
    before = count_params(m)
    m(torch.rand(2, 84, 646)).sum().backward()
    assert count_params(m) == before == count_params(m.param_store())


def test_default_parameter_scale():
    assert 1.5e6 <= count_params(Detector()) <= 2.5e6
    assert 1.6e6 <= count_params(BaselineNet()) <= 2.8e6


def test_seeded_init_reproducible():
    a, b = Detector(TINY, seed=5), Detector(TINY, seed=5)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)
    c = Detector(TINY, seed=6)
    assert not all(torch.equal(pa, pc) for pa, pc in zip(a.parameters(), c.parameters()))


def test_backward_requires_forward():
    with pytest.raises(StateError):
        Detector(TINY).backward(torch.zeros(1, 3, 11, 5))


def test_zero_output_gradient_gives_zero_grads():
    m = Detector(TINY, seed=3)
    out = m(torch.rand(1, 84, 646))
    grads = m.backward(torch.zeros_like(out))
    assert all(not g.any() for g in grads.values())


def test_head_gradient_is_outer_product():
    """The 1x1 head is linear in the pooled features: dL/dW = sum_cells g x feat^T."""
    m = Detector(TINY, seed=4).double()
    feats = {}
    m.pool.register_forward_hook(lambda mod, inp, out: feats.__setitem__("x", out.detach()))
    out = m(torch.rand(1, 84, 646, dtype=torch.float64))
    g = torch.randn_like(out)
    grads = m.backward(g)
    x = feats["x"][0, :, 0, :]  # (C_in, G)
    g_ch = g[0].permute(0, 2, 1).reshape(-1, x.shape[1])  # (n*(3+C), G) in head channel order
    expected = g_ch @ x.T
    assert torch.allclose(grads["head.weight"][:, :, 0, 0], expected, rtol=1e-12, atol=1e-12)
    assert torch.allclose(grads["head.bias"], g_ch.sum(1), rtol=1e-12, atol=1e-12)


def test_backward_deterministic():
    x = torch.rand(2, 84, 646)
    runs = []
    for _ in range(2):
        m = Detector(TINY, seed=9)
        out = m(x)
        runs.append([t.clone() for t in m.backward(torch.ones_like(out)).values()])
    assert all(torch.equal(a, b) for a, b in zip(*runs))


def test_baseline_gradient_finite_differences():
    torch.manual_seed(0)
    cfg = DetectorConfig(n_classes=2, channels=(2, 2, 2, 2, 2), depths=(1, 1, 1, 1, 1))
    m = BaselineNet(cfg, seed=1)
    x = torch.rand(1, 84, 646, dtype=torch.float64)
    labels = torch.rand(1, 2, 646) < 0.3
    rep = finite_difference_check(
        m, lambda mod: torch.nn.functional.binary_cross_entropy_with_logits(mod(x), labels.double()),
        max_coords=40)
    assert rep.n_checked >= 30
    assert rep.max_rel_error < 1e-4, rep.worst


def test_checkpoint_roundtrip(tmp_path):
    m = Detector(TINY, seed=7)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, m, (1.0, 2.0, 4.0), ["a", "b"], {"epoch": 3})
    raw = path.read_bytes()
    header, rest = raw.split(b"\n%%WEIGHTS%%\n", 1)
    assert len(rest) == 4 * count_params(m)
    loaded, meta = load_checkpoint(path)
    assert meta["class_names"] == ["a", "b"] and meta["training"]["epoch"] == 3
    for a, b in zip(m.parameters(), loaded.parameters()):
        assert torch.equal(a, b)
    with pytest.raises(CompatibilityError):
        load_checkpoint(path, n_classes=13)
    with pytest.raises(CompatibilityError):
        load_checkpoint(path, n_anchors=5)
    (tmp_path / "bad.ckpt").write_bytes(raw[:-4])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "bad.ckpt")
