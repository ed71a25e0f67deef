"""Central finite-difference gradient checks (double precision)."""
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """||a - n|| / max(||a||, ||n||, floor).

    The floor keeps exactly-zero gradients (e.g. attention key biases, which
    softmax cancels) from turning finite-difference round-off into large ratios.
    """
    num = np.linalg.norm(np.ravel(analytic) - np.ravel(numeric))
    den = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(num / den)


def numerical_grad(f: Callable[[], float], x: np.ndarray, eps: float = 1e-5, indices: Optional[Sequence] = None,
                   kink_tol: Optional[float] = None, kinks: Optional[list] = None, floor: float = 1e-6) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place.

    With ``indices`` only those flat positions are probed; the rest stay zero.
    With ``kink_tol`` the forward and backward one-sided slopes are compared
    too; positions where they disagree by more than ``kink_tol`` relative to
    the slope straddle a point of non-differentiability (a ReLU or max
    switching branch) and are appended to ``kinks`` instead of trusted.
    Slopes below ``floor`` count as ``floor`` in that comparison.
    """
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    f0 = f() if kink_tol is not None else None
    for i in range(flat.size) if indices is None else indices:
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
        if f0 is not None:
            ahead, behind = (fp - f0) / eps, (f0 - fm) / eps
            if abs(ahead - behind) > kink_tol * max(abs(ahead), abs(behind), floor):
                kinks.append(int(i))
    return grad


@dataclass
class GradientReport:
    worst: float     # worst relative error over the parameters
    probes: int      # entries compared
    skipped: int     # entries dropped because the difference stencil straddled a kink


def gradient_report(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    max_probes: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    kink_tol: Optional[float] = None,
    noise_factor: Optional[float] = None,
) -> GradientReport:
    """Compare backprop with finite differences over ``params``.

    ``loss_fn`` must rebuild the graph from the current parameter values on
    each call. With ``max_probes`` each parameter is checked on a random
    subset of that many entries. ``kink_tol`` enables kink detection (see
    ``numerical_grad``); detected entries are left out of the comparison.
    ``noise_factor`` raises the error floor to ``noise_factor`` times the
    finite-difference round-off scale ``machine_eps * |f| / eps``, so a
    gradient that vanishes exactly (a bias that softmax cancels) is not
    judged on round-off alone when the loss value is large.
    """
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward(params)

    def value() -> float:
        return float(loss_fn().data)

    floor = 1e-6
    if noise_factor is not None:
        floor = max(floor, noise_factor * np.finfo(np.float64).eps * abs(float(loss.data)) / eps)
    worst, probes, skipped = 0.0, 0, 0
    for p in params:
        idx = np.arange(p.size)
        if max_probes is not None and p.size > max_probes:
            rng = rng or np.random.default_rng(0)
            idx = rng.choice(p.size, size=max_probes, replace=False)
        kinks = []
        numeric = numerical_grad(value, p.data, eps, idx, kink_tol, kinks, floor).reshape(-1)[idx]
        analytic = p.grad.reshape(-1)[idx]
        keep = ~np.isin(idx, kinks)
        probes += int(keep.sum())
        skipped += len(kinks)
        worst = max(worst, relative_error(analytic[keep], numeric[keep], floor))
    return GradientReport(worst, probes, skipped)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    max_probes: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Worst relative error between backprop and finite differences over ``params``."""
    return gradient_report(loss_fn, params, eps, max_probes, rng).worst
