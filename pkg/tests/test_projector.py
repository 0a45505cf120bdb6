import numpy as np
import pytest

from modalbridge import numerics as nm
from modalbridge.encoder import LatentSeq
from modalbridge.numerics import Tape, Tensor
from modalbridge.projector import Projector
from tests.test_numerics import finite_diff_grad


def make(seed=0, d_u=8, d_h=16, d_m=12):
    return Projector(np.random.default_rng(seed), d_u, d_h, d_m)


def test_zero_init_second_layer_gives_zero_outputs():
    p = make()
    out = p(Tensor(np.random.default_rng(1).standard_normal((5, 8))))
    np.testing.assert_array_equal(out.data, 0.0)


def test_length_preserved():
    p = make()
    for L in (1, 3, 17):
        out = p(LatentSeq(np.zeros((L, 8), dtype=np.float32)))
        assert out.shape == (L, 12)


def test_dim_mismatch():
    p = make()
    with pytest.raises(nm.ShapeError):
        p(Tensor(np.zeros((3, 9))))


def test_param_count_reported():
    p = make(d_u=8, d_h=16, d_m=12)
    assert p.param_count == 8 * 16 + 16 + 16 * 12 + 12


def test_weight_gradients_match_finite_difference():
    rng = np.random.default_rng(2)
    p = make(seed=3)
    # move off the zero init so layer-1 grads are nonzero
    p.l2.w.data[...] = rng.standard_normal(p.l2.w.shape).astype(np.float32)
    x = rng.standard_normal((4, 8))
    w_read = rng.standard_normal((4, 12))

    for param in p.parameters():
        param.data = param.data.astype(np.float64)
    xt = Tensor(x, dtype=np.float64)
    with Tape() as tape:
        out = p(xt)
        tape.backward(nm.mean_all(nm.mul(out, Tensor(w_read, dtype=np.float64))))

    for param in p.parameters():
        def f(a, param=param):
            saved = param.data.copy()
            param.data = a
            val = nm.mean_all(nm.mul(p(xt), Tensor(w_read, dtype=np.float64))).item()
            param.data = saved
            return val
        num = finite_diff_grad(f, param.data.copy())
        denom = max(np.abs(num).max(), 1e-8)
        assert np.abs(param.grad - num).max() / denom < 1e-4


def test_snapshot_restore_round_trip():
    p = make()
    snap = p.snapshot()
    p.l1.w.data += 1.0
    p.restore(snap)
    np.testing.assert_array_equal(p.l1.w.data, snap["proj.0"])
