import numpy as np
import pytest

from condseq import autograd as ag


def rel_err(a, b, floor=1e-8):
    """Elementwise relative error with an absolute floor for tiny values."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.abs(a - b) / denom


def finite_diff(f, arrays, h=1e-5, coords=None, rng=None, max_coords=None):
    """Central finite differences of scalar f() w.r.t. a list of arrays.

    f re-evaluates from the (mutated) arrays each call. Returns one
    gradient array per input. When max_coords is given, a seeded subset
    of coordinates per array is checked (others left as NaN).
    """
    grads = []
    for arr in arrays:
        g = np.full(arr.shape, np.nan)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        idxs = range(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idxs = (rng or np.random.default_rng(0)).choice(
                flat.size, size=max_coords, replace=False
            )
            idxs = sorted(int(i) for i in idxs)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            fp = f()
            flat[i] = orig - h
            fm = f()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def check_grads(analytic, numeric, tol, floor=1e-6):
    """Assert agreement where the numeric gradient was evaluated."""
    worst = 0.0
    for ga, gn in zip(analytic, numeric):
        mask = ~np.isnan(gn)
        if not mask.any():
            continue
        err = rel_err(ga[mask], gn[mask], floor=floor)
        worst = max(worst, float(err.max()))
    assert worst < tol, f"max relative gradient error {worst:.3e} >= {tol}"
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def scalar_loss(t):
    """Anything -> scalar via sum (test convenience)."""
    return ag.tsum(t) if t.shape != () else t
