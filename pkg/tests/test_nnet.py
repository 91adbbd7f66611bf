from __future__ import annotations

import numpy as np
import pytest

from wildlearn import nnet
from wildlearn.errors import FormatError, ValidationError
from wildlearn.nnet import (Architecture, ID_POSITIVE, OOD_NEGATIVE,
                            ce_loss_and_grad, detector_loss_and_grad, forward,
                            init_params, load_model, predict_label, save_model)

from conftest import finite_diff_grad, rel_err


def zero_params(arch):
    return np.zeros(arch.param_count)


def test_zero_network_outputs_zero():
    arch = Architecture(4, (8,), 3)
    out = forward(zero_params(arch), arch, np.array([1.0, -2.0, 0.5, 3.0]))
    assert np.all(out.logits == 0.0)
    assert out.detector_score == 0.0
    assert predict_label(zero_params(arch), arch, np.ones(4)) == 0  # tie-break low


def test_permuting_head_rows_permutes_logits():
    arch = Architecture(4, (8,), 3)
    params = init_params(arch, seed=0)
    x = np.array([0.3, -1.0, 2.0, 0.1])
    base = forward(params, arch, x).logits
    swapped = params.copy()
    lay = nnet._layout(arch)
    W = lay.view(swapped, "cls.W")
    W[[0, 1]] = W[[1, 0]]
    b = lay.view(swapped, "cls.b")
    b[[0, 1]] = b[[1, 0]]
    out = forward(swapped, arch, x).logits
    assert np.array_equal(out, base[[1, 0, 2]])


def test_forward_is_deterministic():
    arch = Architecture(6, (16, 8), 4)
    params = init_params(arch, seed=3)
    x = np.random.default_rng(1).standard_normal(6)
    a = forward(params, arch, x)
    b = forward(params, arch, x)
    assert np.array_equal(a.logits, b.logits) and a.detector_score == b.detector_score


def test_dimension_mismatch_rejected():
    arch = Architecture(4, (8,), 3)
    with pytest.raises(ValidationError):
        forward(zero_params(arch), arch, np.ones(5))
    with pytest.raises(ValidationError):
        forward(np.zeros(3), arch, np.ones(4))


def test_ce_loss_uniform_softmax():
    arch = Architecture(5, (8,), 4)
    loss, _ = ce_loss_and_grad(zero_params(arch), arch, np.ones(5), 2)
    assert np.isclose(loss, np.log(4.0), rtol=1e-12)


def test_ce_rejects_out_of_range_label():
    arch = Architecture(5, (8,), 4)
    with pytest.raises(ValidationError):
        ce_loss_and_grad(zero_params(arch), arch, np.ones(5), 4)


def test_ce_loss_saturates_to_zero_monotonically():
    arch = Architecture(2, (4,), 3)
    lay = nnet._layout(arch)
    losses = []
    for t in (0.0, 1.0, 2.0, 4.0, 8.0, 16.0):
        params = zero_params(arch)
        lay.view(params, "cls.b")[1] = t
        loss, _ = ce_loss_and_grad(params, arch, np.zeros(2), 1)
        losses.append(loss)
    assert all(a > b for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 1e-6


def test_ce_gradient_matches_finite_differences():
    arch = Architecture(4, (10, 6), 3)
    rng = np.random.default_rng(12)
    params = init_params(arch, seed=12)
    x = rng.standard_normal(4)
    y = 2
    _, grad = ce_loss_and_grad(params, arch, x, y)
    coords = rng.choice(arch.param_count, size=20, replace=False)
    fd = finite_diff_grad(lambda p: ce_loss_and_grad(p, arch, x, y)[0], params, coords)
    assert rel_err(grad[coords], fd).max() < 1e-5


def test_detector_loss_at_zero_score():
    arch = Architecture(3, (5,), 2)
    l_id, _ = detector_loss_and_grad(zero_params(arch), arch, np.ones(3), ID_POSITIVE)
    l_ood, _ = detector_loss_and_grad(zero_params(arch), arch, np.ones(3), OOD_NEGATIVE)
    assert l_id == 0.5 and l_ood == 0.5


def test_detector_loss_limits():
    arch = Architecture(3, (5,), 2)
    lay = nnet._layout(arch)
    params = zero_params(arch)
    lay.view(params, "det.b")[0] = 100.0
    l_id, _ = detector_loss_and_grad(params, arch, np.zeros(3), ID_POSITIVE)
    l_ood, _ = detector_loss_and_grad(params, arch, np.zeros(3), OOD_NEGATIVE)
    assert l_id < 1e-12 and l_ood > 1.0 - 1e-12


def test_detector_gradient_matches_finite_differences():
    arch = Architecture(4, (6,), 3)
    rng = np.random.default_rng(7)
    params = init_params(arch, seed=7)
    x = rng.standard_normal(4)
    for side in (ID_POSITIVE, OOD_NEGATIVE):
        _, grad = detector_loss_and_grad(params, arch, x, side)
        coords = rng.choice(arch.param_count, size=20, replace=False)
        fd = finite_diff_grad(lambda p: detector_loss_and_grad(p, arch, x, side)[0],
                              params, coords)
        assert rel_err(grad[coords], fd).max() < 1e-5


def test_gradcheck_over_random_architectures():
    # random depth <= 3, width <= 32, both activations, both losses
    rng = np.random.default_rng(99)
    worst = 0.0
    for trial in range(12):
        depth = int(rng.integers(1, 4))
        hidden = tuple(int(rng.integers(2, 33)) for _ in range(depth))
        arch = Architecture(int(rng.integers(2, 9)), hidden, int(rng.integers(2, 6)),
                            activation="tanh" if trial % 2 == 0 else "relu",
                            shared_trunk=bool(trial % 3))
        # jitter off zero-bias relu kinks, where central differences are undefined
        params = init_params(arch, seed=trial) + 0.01 * rng.standard_normal(arch.param_count)
        x = rng.standard_normal(arch.input_dim)
        y = int(rng.integers(arch.num_classes))
        coords = rng.choice(arch.param_count, size=12, replace=False)
        _, g = ce_loss_and_grad(params, arch, x, y)
        fd = finite_diff_grad(lambda p: ce_loss_and_grad(p, arch, x, y)[0], params, coords)
        worst = max(worst, rel_err(g[coords], fd).max())
        side = ID_POSITIVE if trial % 2 else OOD_NEGATIVE
        _, g = detector_loss_and_grad(params, arch, x, side)
        fd = finite_diff_grad(lambda p: detector_loss_and_grad(p, arch, x, side)[0],
                              params, coords)
        worst = max(worst, rel_err(g[coords], fd).max())
    assert worst < 1e-4


def test_predict_label_from_controlled_logits():
    arch = Architecture(2, (4,), 3)
    lay = nnet._layout(arch)
    params = zero_params(arch)
    lay.view(params, "cls.b")[:] = (0.1, 5.0, -2.0)
    assert predict_label(params, arch, np.zeros(2)) == 1


def test_logit_shift_invariance():
    arch = Architecture(3, (6,), 4)
    params = init_params(arch, seed=5)
    x = np.array([0.2, -0.4, 1.5])
    loss0, _ = ce_loss_and_grad(params, arch, x, 1)
    label0 = predict_label(params, arch, x)
    shifted = params.copy()
    lay = nnet._layout(arch)
    lay.view(shifted, "cls.b")[:] += 7.5
    loss1, _ = ce_loss_and_grad(shifted, arch, x, 1)
    assert predict_label(shifted, arch, x) == label0
    assert np.isclose(loss0, loss1, rtol=1e-9)


def test_ce_loss_nonnegative_and_detector_in_unit_interval():
    rng = np.random.default_rng(4)
    arch = Architecture(5, (12, 7), 4)
    for seed in range(5):
        params = init_params(arch, seed=seed)
        x = rng.standard_normal(5)
        loss, _ = ce_loss_and_grad(params, arch, x, int(rng.integers(4)))
        assert loss >= 0.0
        for side in (ID_POSITIVE, OOD_NEGATIVE):
            dl, _ = detector_loss_and_grad(params, arch, x, side)
            assert 0.0 < dl < 1.0


def test_layout_is_a_bijection():
    arch = Architecture(5, (7, 3), 4, shared_trunk=False)
    lay = nnet._layout(arch)
    covered = np.zeros(lay.total, dtype=int)
    for _, shape, off in lay.blocks:
        covered[off: off + int(np.prod(shape))] += 1
    assert np.all(covered == 1)
    assert arch.param_count == lay.total


def test_checkpoint_roundtrip(tmp_path):
    arch = Architecture(6, (9, 4), 3, activation="relu")
    params = init_params(arch, seed=2)
    save_model(tmp_path / "m.wnn", arch, params)
    arch2, params2 = load_model(tmp_path / "m.wnn")
    assert arch2 == arch
    assert np.array_equal(params2, params)
    # same bytes when re-saved
    save_model(tmp_path / "m2.wnn", arch2, params2)
    assert (tmp_path / "m.wnn").read_bytes() == (tmp_path / "m2.wnn").read_bytes()


def test_checkpoint_corruption(tmp_path):
    arch = Architecture(3, (4,), 2)
    save_model(tmp_path / "m.wnn", arch, init_params(arch, 0))
    raw = bytearray((tmp_path / "m.wnn").read_bytes())
    raw[1] ^= 0x55
    (tmp_path / "bad.wnn").write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        load_model(tmp_path / "bad.wnn")
    (tmp_path / "short.wnn").write_bytes((tmp_path / "m.wnn").read_bytes()[:-4])
    with pytest.raises(FormatError):
        load_model(tmp_path / "short.wnn")
