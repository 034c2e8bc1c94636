"""Shared test utilities: the central finite-difference gradient oracle."""

import numpy as np

from gbrs.tensor import backward


def fd_gradcheck(build, params, h=1e-5, tol=1e-5):
    """Compare analytic gradients against central finite differences.

    ``build()`` must rebuild the scalar loss from the current ``.data`` of the
    given parameter tensors.  Returns the worst relative error
    ``|analytic - numeric| / (|analytic| + 1e-8)`` across all coordinates.
    """
    for p in params:
        p.grad = None
    out = build()
    backward(out)
    worst = 0.0
    for p in params:
        assert p.grad is not None, "parameter did not receive a gradient"
        ana = p.grad.ravel()
        flat = p.data.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(build().data)
            flat[i] = orig - h
            f_minus = float(build().data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            rel = abs(ana[i] - numeric) / (abs(ana[i]) + 1e-8)
            worst = max(worst, rel)
    assert worst < tol, f"gradient check failed: worst rel err {worst:.3e} >= {tol:g}"
    return worst


def rng_for(seed):
    return np.random.default_rng(seed)
