"""Shared numerical kernels.

Normalized sinc, the complementary error function and its inverse, and a
vectorized adaptive Simpson quadrature.  Everything here is pure and
reentrant; the rest of the package builds on these primitives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

__all__ = [
    "DomainError",
    "ToleranceNotMet",
    "QuadratureSpec",
    "sinc",
    "erfc",
    "erfc_inv",
    "integrate",
]


class DomainError(ValueError):
    """Argument outside the mathematical domain of the function."""


class ToleranceNotMet(RuntimeError):
    """Quadrature ran out of subdivisions before reaching the tolerance.

    Carries the best available estimate and the achieved error estimate so
    callers can decide whether the result is still usable.
    """

    def __init__(self, estimate: float, error_estimate: float):
        self.estimate = estimate
        self.error_estimate = error_estimate
        super().__init__(
            f"quadrature tolerance not met: estimate={estimate!r}, "
            f"error_estimate={error_estimate!r}"
        )


@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerances and budget for adaptive quadrature.

    rel_tol is dimensionless, abs_tol is in the units of the integral, and
    max_subdivisions bounds the total number of interval splits.
    """

    rel_tol: float = 1e-9
    abs_tol: float = 1e-15
    max_subdivisions: int = 2 ** 20

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise DomainError(f"rel_tol must be > 0, got {self.rel_tol}")
        if not self.abs_tol >= 0:
            raise DomainError(f"abs_tol must be >= 0, got {self.abs_tol}")
        if not self.max_subdivisions >= 1:
            raise DomainError(
                f"max_subdivisions must be >= 1, got {self.max_subdivisions}"
            )


def sinc(x):
    """Normalized sinc, sin(pi x) / (pi x), with sinc(0) = 1.

    Accepts scalars or arrays; zero at nonzero integers.
    """
    return np.sinc(x)


def erfc(x):
    """Complementary error function, elementwise."""
    return special.erfc(x)


def erfc_inv(y):
    """Inverse of erfc on (0, 2).

    Raises DomainError outside the open interval.  Round-trips with
    :func:`erfc` to better than 1e-10 relative error.
    """
    arr = np.asarray(y, dtype=float)
    if np.any(arr <= 0.0) or np.any(arr >= 2.0):
        raise DomainError(f"erfc_inv argument must lie in (0, 2), got {y!r}")
    out = special.erfcinv(arr)
    if np.ndim(y) == 0:
        return float(out)
    return out


def _eval(f, x: np.ndarray) -> np.ndarray:
    """Evaluate f on an array of abscissae, tolerating scalar-only callables."""
    fx = np.asarray(f(x), dtype=float)
    if fx.shape != x.shape:
        fx = np.broadcast_to(fx, x.shape).copy()
    if not np.all(np.isfinite(fx)):
        raise DomainError("integrand returned non-finite values")
    return fx


def integrate(f, lo: float, hi: float, spec: QuadratureSpec | None = None,
              initial_panels: int = 16) -> float:
    """Adaptive Simpson quadrature of ``f`` over [lo, hi].

    The interval is seeded with ``initial_panels`` uniform panels, then each
    panel is halved until its Richardson error estimate fits within its
    share of the global tolerance budget.  ``f`` is called on numpy arrays
    of abscissae, so vectorized integrands run at full numpy speed.
    Oscillatory integrands should be seeded with at least eight panels per
    period of the fastest oscillation.

    Raises ToleranceNotMet when max_subdivisions splits are exhausted; the
    exception carries the best estimate and its error estimate.
    """
    if spec is None:
        spec = QuadratureSpec()
    lo = float(lo)
    hi = float(hi)
    if not lo < hi:
        raise DomainError(f"integration bounds must satisfy lo < hi, got [{lo}, {hi}]")
    span = hi - lo

    n0 = max(1, int(initial_panels))
    edges = np.linspace(lo, hi, n0 + 1)
    a = edges[:-1].copy()
    b = edges[1:].copy()
    fa = _eval(f, a)
    fb = np.empty_like(fa)
    fb[:-1] = fa[1:]
    fb[-1] = _eval(f, b[-1:])[0]
    mid = 0.5 * (a + b)
    fm = _eval(f, mid)
    coarse = (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    accepted = 0.0
    accepted_err = 0.0
    splits = 0
    # width floor: below this the panel cannot be resolved in float64
    min_width = span * 1e-14

    while a.size:
        m = 0.5 * (a + b)
        lm = 0.5 * (a + m)
        rm = 0.5 * (m + b)
        flm = _eval(f, lm)
        frm = _eval(f, rm)
        left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        fine = left + right
        err = (fine - coarse) / 15.0

        total_guess = accepted + float(np.sum(fine))
        budget = max(spec.abs_tol, spec.rel_tol * abs(total_guess))
        tol_per_panel = budget * (b - a) / span
        done = (np.abs(err) <= tol_per_panel) | ((b - a) <= min_width)

        accepted += float(np.sum(fine[done] + err[done]))
        accepted_err += float(np.sum(np.abs(err[done])))

        keep = ~done
        n_keep = int(np.count_nonzero(keep))
        if n_keep == 0:
            break
        splits += n_keep
        if splits > spec.max_subdivisions:
            estimate = accepted + float(np.sum(fine[keep] + err[keep]))
            error_estimate = accepted_err + float(np.sum(np.abs(err[keep])))
            raise ToleranceNotMet(estimate, error_estimate)

        # split surviving panels in two
        a = np.concatenate([a[keep], m[keep]])
        b = np.concatenate([m[keep], b[keep]])
        fa = np.concatenate([fa[keep], fm[keep]])
        fb = np.concatenate([fm[keep], fb[keep]])
        fm = np.concatenate([flm[keep], frm[keep]])
        coarse = np.concatenate([left[keep], right[keep]])

    return accepted
