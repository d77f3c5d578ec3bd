"""Positioning geometry: line-of-sight matrix, dilution factors, accuracy.

A time-based fix maps per-station ranging errors into a position error
through the least-squares pseudoinverse of the unit line-of-sight matrix.
The per-station dilution factor is the horizontal norm of the
pseudoinverse column, so the horizontal accuracy is the root sum of
squares of dilution-weighted ranging sigmas.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Position",
    "GeometryResult",
    "DegenerateGeometry",
    "LengthMismatch",
    "los_matrix",
    "dilution",
    "horizontal_accuracy",
    "horizontal_accuracy_squared",
]

_MIN_RANGE = 1e-9  # meters; closer than this the LOS direction is undefined
_MAX_CONDITION = 1e12


class DegenerateGeometry(ValueError):
    """Station layout does not support a position fix (collinear or coincident)."""


class LengthMismatch(ValueError):
    """Paired per-station vectors have different lengths."""


@dataclass(frozen=True)
class Position:
    """Cartesian coordinates in meters."""

    x: float
    y: float
    z: float = 0.0

    def __post_init__(self):
        if not all(np.isfinite([self.x, self.y, self.z])):
            raise ValueError("coordinates must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)


@dataclass
class GeometryResult:
    """Least-squares geometry of one user against K stations.

    los is the (K, d) unit line-of-sight matrix, pseudoinverse its (d, K)
    left inverse, and dilution_factors the length-K horizontal dilution
    values (norm of the first two pseudoinverse rows per station).
    """

    los: np.ndarray
    pseudoinverse: np.ndarray
    dilution_factors: np.ndarray


def _positions_array(points) -> np.ndarray:
    rows = []
    for p in points:
        rows.append(p.as_array() if isinstance(p, Position) else np.asarray(p, dtype=float))
    arr = np.vstack(rows)
    if arr.shape[1] == 2:
        arr = np.hstack([arr, np.zeros((arr.shape[0], 1))])
    return arr


def los_matrix(gnbs, user, mode: str = "2d") -> np.ndarray:
    """(K, d) matrix of unit vectors pointing from each station to the user.

    mode "2d" keeps the x/y components (rows may then have norm below one
    for out-of-plane stations); "3d" keeps all three.
    """
    d = {"2d": 2, "3d": 3}.get(mode.lower())
    if d is None:
        raise ValueError(f"mode must be '2d' or '3d', got {mode!r}")
    stations = _positions_array(gnbs)
    u = user.as_array() if isinstance(user, Position) else np.asarray(user, dtype=float)
    if u.size == 2:
        u = np.append(u, 0.0)
    if stations.shape[0] < d:
        raise DegenerateGeometry(
            f"need at least {d} stations for a {d}-dimensional fix, got {stations.shape[0]}"
        )
    diff = u[None, :] - stations
    dist = np.linalg.norm(diff, axis=1)
    if np.any(dist < _MIN_RANGE):
        raise DegenerateGeometry("user coincides with a station")
    return diff[:, :d] / dist[:, None]


def dilution(gnbs, user, mode: str = "2d") -> GeometryResult:
    """Geometry pseudoinverse and per-station horizontal dilution factors.

    The pseudoinverse H satisfies H @ los = identity; station k's dilution
    factor is the Euclidean norm of the first two entries of H's column k.
    Raises DegenerateGeometry when the normal matrix is ill-conditioned
    (for example collinear stations).
    """
    los = los_matrix(gnbs, user, mode)
    normal = los.T @ los
    if np.linalg.cond(normal) > _MAX_CONDITION:
        raise DegenerateGeometry("stations are collinear or otherwise degenerate")
    pseudo = np.linalg.solve(normal, los.T)
    horiz = pseudo[: min(2, pseudo.shape[0]), :]
    lam = np.linalg.norm(horiz, axis=0)
    return GeometryResult(los=los, pseudoinverse=pseudo, dilution_factors=lam)


def _paired(lam, sigma) -> tuple[np.ndarray, np.ndarray]:
    lam = np.asarray(lam, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if lam.shape != sigma.shape:
        raise LengthMismatch(f"dilution and sigma lengths differ: {lam.shape} vs {sigma.shape}")
    if np.any(lam < 0) or np.any(sigma < 0):
        raise ValueError("dilution factors and sigmas must be >= 0")
    return lam, sigma


def horizontal_accuracy_squared(lam, sigma) -> float:
    """Squared horizontal accuracy, the optimizer's objective unit (m^2)."""
    lam, sigma = _paired(lam, sigma)
    return float(np.sum((lam * sigma) ** 2))


def horizontal_accuracy(lam, sigma) -> float:
    """Horizontal accuracy in meters: root sum of squared lam*sigma terms."""
    return float(np.sqrt(horizontal_accuracy_squared(lam, sigma)))
