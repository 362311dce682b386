"""Central finite differences, used as the independent gradient oracle."""

import numpy as np


def fd_grad(f, arrays, eps=1e-6, coords=None):
    """d f / d array for every array in ``arrays`` (perturbed in place, float64).

    ``coords`` optionally restricts each array to a list of flat indices; the
    other entries of the returned gradient are NaN.
    """
    out = []
    for n, a in enumerate(arrays):
        g = np.full(a.shape, np.nan)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        idx = range(flat.size) if coords is None else coords[n]
        for i in idx:
            old = flat[i]
            flat[i] = old + eps
            fp = f()
            flat[i] = old - eps
            fm = f()
            flat[i] = old
            gflat[i] = (fp - fm) / (2 * eps)
        out.append(g)
    return out


def rel_err(analytic, numeric):
    """Norm-wise relative error over the finite entries of ``numeric``."""
    a = np.concatenate([np.asarray(x, dtype=np.float64).reshape(-1) for x in analytic])
    b = np.concatenate([np.asarray(x, dtype=np.float64).reshape(-1) for x in numeric])
    keep = np.isfinite(b)
    a, b = a[keep], b[keep]
    denom = max(np.linalg.norm(b), np.linalg.norm(a))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)
