"""Delay-locked-loop ranging error of each positioning signal.

The coherent early-late tracking loop's error variance is a quotient of
band-limited spectral integrals: the numerator collects noise,
communication-signal, and cross-station positioning power weighted by the
discriminator response, while the denominator squares the discriminator
S-curve slope.  This module evaluates that quotient exactly by quadrature,
provides the small-spacing closed form driven by three power ratios
(carrier-to-noise, communication-to-positioning, positioning-to-
positioning), and exposes the per-term integrals for cross-validation.

The closed form factors the tracked power out of the variance; the
remaining "ranging factor" depends only on channel gains and on the other
stations' powers, which is what the power allocator exploits.

Variances are in seconds squared; multiply the standard deviation by the
speed of light for meters.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import polygamma

from .mathkit import QuadratureSpec, integrate
from .signalmodel import ChannelGains, SignalPlan

__all__ = [
    "SPEED_OF_LIGHT",
    "ZeroPowerError",
    "DllConfig",
    "RangingBreakdown",
    "DllIntegrals",
    "equivalent_comm_gain",
    "ranging_var_exact",
    "ranging_var_approx",
    "ranging_factor",
    "dll_integrals",
]

SPEED_OF_LIGHT = 299_792_458.0


class ZeroPowerError(ValueError):
    """Tracked signal has zero power or zero gain; the variance diverges."""


@dataclass(frozen=True)
class DllConfig:
    """Delay-locked-loop parameters.

    loop_bandwidth (Hz) and integration_time (s) set the loop factor
    ``loop_bandwidth * (1 - 0.5 * loop_bandwidth * integration_time)``
    of a coherent early-late discriminator unless ``loop_factor``
    overrides it.  early_late_spacing is in chips, i.e. fractions of the
    positioning symbol period.
    """

    loop_bandwidth: float = 0.2
    integration_time: float = 0.02
    early_late_spacing: float = 0.02
    loop_factor: float | None = None

    def __post_init__(self):
        if self.loop_bandwidth <= 0:
            raise ValueError("loop_bandwidth must be > 0")
        if self.integration_time <= 0:
            raise ValueError("integration_time must be > 0")
        if not 0 < self.early_late_spacing < 1:
            raise ValueError("early_late_spacing must be in (0, 1) chips")
        if self.loop_factor is not None and self.loop_factor <= 0:
            raise ValueError("loop_factor must be > 0")

    @property
    def a(self) -> float:
        """Loop factor in Hz."""
        if self.loop_factor is not None:
            return float(self.loop_factor)
        return self.loop_bandwidth * (1.0 - 0.5 * self.loop_bandwidth * self.integration_time)


@dataclass
class RangingBreakdown:
    """Ranging variance split by cause, all in seconds squared.

    noise_var comes from the receiver noise floor, comm_var from every
    station's communication signals, crosspos_var from the other stations'
    positioning signals on the same sub-carrier.
    """

    noise_var: float
    comm_var: float
    crosspos_var: float
    total_var: float
    sigma_seconds: float
    sigma_meters: float


@dataclass
class DllIntegrals:
    """Per-term tracking-error integrals with closed-form counterparts.

    ``slope`` is the discriminator S-curve slope integral; ``noise``,
    ``comm`` and ``crosspos`` are the numerator terms.  The ``*_small_d``
    values integrate the same terms after the small-spacing Taylor step
    (discriminator sine replaced by its argument), which is the regime the
    closed forms live in.  ``curvature`` is the second-moment integral of
    the squared positioning PSD that the cross-station closed form uses.
    """

    slope: float
    noise: float
    comm: float
    crosspos: float
    slope_small_d: float
    noise_small_d: float
    comm_small_d: float
    crosspos_small_d: float
    slope_closed: float
    noise_closed: float
    comm_closed: float
    crosspos_closed: float
    curvature: float
    curvature_closed: float
    loop_factor: float
    tracked_power: float

    def reconstructed_variance(self) -> float:
        """Tracking variance assembled from the exact per-term integrals."""
        return (self.loop_factor * (self.noise + self.comm + self.crosspos)
                / ((2.0 * np.pi) ** 2 * self.tracked_power * self.slope ** 2))


# ---------------------------------------------------------------------------
# communication PSD on a shifted axis


@lru_cache(maxsize=16)
def _comm_weight_sins(n_users: int, ratio: int) -> np.ndarray:
    n = np.arange(1, n_users + 1)
    return np.sin(np.pi * n / ratio) ** 2


def _offgrid_partition(u: np.ndarray, n_total: int) -> np.ndarray:
    """Sum of sinc^2(u - n) over n = 1..n_total for arbitrary real u.

    Splits off the nearest sub-carrier exactly and folds the remaining
    terms through the trigamma function, which keeps the evaluation O(1)
    per abscissa and stable arbitrarily close to the grid.
    """
    u = np.asarray(u, dtype=float)
    n0 = np.clip(np.rint(u), 1, n_total)
    frac = u - n0
    main = np.sinc(frac) ** 2
    s2 = np.sin(np.pi * frac) ** 2 / np.pi ** 2
    # whenever a branch is non-empty its trigamma arguments are >= 0.5;
    # the clamps only sanitize lanes that the masks discard
    lo = 0.25
    below = n0 > 1
    left = np.where(
        below,
        polygamma(1, np.maximum(frac + 1.0, lo)) - polygamma(1, np.maximum(frac + n0, lo)),
        0.0,
    )
    above = n0 < n_total
    right = np.where(
        above,
        polygamma(1, np.maximum(1.0 - frac, lo))
        - polygamma(1, np.maximum(n_total - n0 + 1.0 - frac, lo)),
        0.0,
    )
    return main + s2 * (left + right)


def _comm_psd_shifted(plan: SignalPlan, weights: np.ndarray, m: int, f: np.ndarray) -> np.ndarray:
    """Communication PSD seen on positioning user m's shifted axis, W/Hz.

    ``weights`` holds the per-sub-carrier gain sums (length N).  ``f`` is
    the offset from the tracked sub-carrier.
    """
    n_users = plan.n_comm
    u = f / plan.subcarrier_spacing + plan.spacing_ratio * m
    w = np.asarray(weights, dtype=float)
    wmax = w.max(initial=0.0)
    if wmax == 0.0 or plan.comm_power == 0.0:
        return np.zeros_like(u)
    if np.ptp(w) <= 1e-12 * wmax:
        total = w[0] * _offgrid_partition(u, n_users)
    else:
        total = np.zeros_like(u)
        grid = np.arange(1, n_users + 1, dtype=float)
        step = max(1, int(2e6 // max(n_users, 1)))
        for start in range(0, u.size, step):
            chunk = u[start:start + step, None] - grid[None, :]
            total[start:start + step] = np.sinc(chunk) ** 2 @ w
    return plan.comm_power * plan.comm_period * total


# ---------------------------------------------------------------------------
# shared per-link quantities


def _own_link(plan: SignalPlan, gains: ChannelGains, powers: np.ndarray,
              k: int, m: int) -> tuple[float, float]:
    if not 1 <= k <= gains.n_gnbs:
        raise IndexError(f"base station index {k} outside 1..{gains.n_gnbs}")
    if not 1 <= m <= plan.n_pos:
        raise IndexError(f"positioning user index {m} outside 1..{plan.n_pos}")
    powers = np.asarray(powers, dtype=float)
    p_own = float(powers[k - 1, m - 1])
    h_own = float(gains.pos[k - 1, m - 1])
    if p_own <= 0.0 or h_own <= 0.0:
        raise ZeroPowerError(
            f"link (k={k}, m={m}) has power {p_own} and gain {h_own}; "
            "the tracked signal must be present"
        )
    return h_own, p_own


def _cross_pos_level(gains: ChannelGains, powers: np.ndarray, k: int, m: int) -> float:
    """Received power sum of the other stations' signals for user m, W."""
    powers = np.asarray(powers, dtype=float)
    level = gains.pos[:, m - 1] * powers[:, m - 1]
    return float(level.sum() - level[k - 1])


def equivalent_comm_gain(plan: SignalPlan, gains: ChannelGains, m: int) -> np.ndarray:
    """Per-station normalized equivalent communication gain at user m.

    Averages each station's per-sub-carrier gains with the squared-sine
    spectral weighting that survives inside the positioning main lobe:
    (2/N) * sum_n gain[k', n] * sin^2(pi n / G).  Returns a length-K array.
    """
    if not 1 <= m <= plan.n_pos:
        raise IndexError(f"positioning user index {m} outside 1..{plan.n_pos}")
    sins = _comm_weight_sins(plan.n_comm, plan.spacing_ratio)
    w = gains.comm_at_puser[m - 1]  # (K, N)
    return (2.0 / plan.n_comm) * (w @ sins)


# ---------------------------------------------------------------------------
# closed-form path


def ranging_factor(plan: SignalPlan, gains: ChannelGains, powers: np.ndarray,
                   dll: DllConfig, k: int, m: int) -> float:
    """Squared ranging factor of link (k, m) in s^2 * W.

    This is the closed-form tracking variance multiplied by the tracked
    power, which removes the tracked power from the expression entirely:
    only the link gains, the communication load, and the *other* stations'
    powers remain.
    """
    h_own, _ = _own_link(plan, gains, powers, k, m)
    tp = plan.pos_period
    bfe = plan.frontend
    pref = dll.a * tp ** 2 / 2.0
    heq = equivalent_comm_gain(plan, gains, m)
    cross = _cross_pos_level(gains, powers, k, m)
    noise = plan.noise_psd / (bfe * tp * h_own)
    comm = (plan.bandwidth * plan.spacing_ratio * plan.comm_power * heq.sum()
            / (bfe ** 2 * h_own))
    xpos = cross / (bfe ** 2 * tp * h_own)
    return float(pref * (noise + comm + xpos))


def ranging_var_approx(plan: SignalPlan, gains: ChannelGains, powers: np.ndarray,
                       dll: DllConfig, k: int, m: int) -> RangingBreakdown:
    """Closed-form tracking variance of link (k, m), split by cause.

    Expressed through the carrier-to-noise density ratio, the equivalent
    communication-to-positioning power ratios of every station, and the
    positioning-to-positioning ratios of the other stations.
    """
    h_own, p_own = _own_link(plan, gains, powers, k, m)
    tp = plan.pos_period
    bfe = plan.frontend
    pref = dll.a * tp ** 2 / 2.0
    received = h_own * p_own

    cn0 = received / plan.noise_psd
    heq = equivalent_comm_gain(plan, gains, m)
    cpr_sum = 2.0 * plan.spacing_ratio * plan.comm_power * heq.sum() / received
    ppr_sum = _cross_pos_level(gains, powers, k, m) / received

    noise = pref / (bfe * tp * cn0)
    comm = pref * plan.bandwidth * cpr_sum / (2.0 * bfe ** 2)
    xpos = pref * ppr_sum / (bfe ** 2 * tp)
    total = noise + comm + xpos
    sigma_s = float(np.sqrt(total))
    return RangingBreakdown(
        noise_var=float(noise),
        comm_var=float(comm),
        crosspos_var=float(xpos),
        total_var=float(total),
        sigma_seconds=sigma_s,
        sigma_meters=SPEED_OF_LIGHT * sigma_s,
    )


# ---------------------------------------------------------------------------
# exact quadrature path


def _default_quad() -> QuadratureSpec:
    # ranging integrals are tiny in absolute terms, so only the relative
    # tolerance is meaningful here
    return QuadratureSpec(rel_tol=1e-8, abs_tol=0.0)


def _exact_integrals(plan: SignalPlan, gains: ChannelGains, powers: np.ndarray,
                     dll: DllConfig, k: int, m: int, quad: QuadratureSpec,
                     small_d: bool = False) -> tuple[float, float, float, float]:
    """Slope, noise, communication, and cross-station integrals of link (k, m).

    With ``small_d`` the discriminator sine is replaced by its argument,
    matching the regime of the closed forms.
    """
    tp = plan.pos_period
    d = dll.early_late_spacing
    lo = plan.center_freq - plan.frontend / 2.0
    hi = plan.center_freq + plan.frontend / 2.0

    weights = np.asarray(gains.comm_at_puser[m - 1], dtype=float).sum(axis=0)  # (N,)
    cross = _cross_pos_level(gains, powers, k, m)
    comm_active = weights.max(initial=0.0) > 0.0 and plan.comm_power > 0.0

    def pos_psd(f):
        return tp * np.sinc(f * tp) ** 2

    if small_d:
        def disc_sin(f):
            return np.pi * f * d * tp

        def disc_sin2(f):
            return (np.pi * f * d * tp) ** 2
    else:
        def disc_sin(f):
            return np.sin(np.pi * f * d * tp)

        def disc_sin2(f):
            return np.sin(np.pi * f * d * tp) ** 2

    span = hi - lo
    # eight panels per period of the fastest oscillating factor in each term
    panels_pos = max(16, int(np.ceil(8.0 * span / (1.0 / tp))))
    panels_comm = max(panels_pos, int(np.ceil(8.0 * span / (1.0 / plan.comm_period))))

    slope = integrate(lambda f: f * pos_psd(f) * disc_sin(f), lo, hi, quad, panels_pos)
    noise = integrate(lambda f: plan.noise_psd * pos_psd(f) * disc_sin2(f), lo, hi, quad, panels_pos)
    if comm_active:
        comm = integrate(
            lambda f: _comm_psd_shifted(plan, weights, m, f) * pos_psd(f) * disc_sin2(f),
            lo, hi, quad, panels_comm)
    else:
        comm = 0.0
    if cross > 0.0:
        xpos = integrate(lambda f: cross * pos_psd(f) ** 2 * disc_sin2(f), lo, hi, quad, panels_pos)
    else:
        xpos = 0.0
    return slope, noise, comm, xpos


def ranging_var_exact(plan: SignalPlan, gains: ChannelGains, powers: np.ndarray,
                      dll: DllConfig, k: int, m: int,
                      quad: QuadratureSpec | None = None) -> float:
    """Tracking variance of link (k, m) by quadrature, in seconds squared.

    Integrates the discriminator-weighted noise, communication, and
    cross-station spectra over the front-end window centered on the
    tracked sub-carrier, and divides by the squared S-curve slope scaled
    by the received signal power.
    """
    h_own, p_own = _own_link(plan, gains, powers, k, m)
    if quad is None:
        quad = _default_quad()
    slope, noise, comm, xpos = _exact_integrals(plan, gains, powers, dll, k, m, quad)
    return float(dll.a * (noise + comm + xpos)
                 / (h_own * p_own * (2.0 * np.pi * slope) ** 2))


def dll_integrals(plan: SignalPlan, gains: ChannelGains, powers: np.ndarray,
                  dll: DllConfig, k: int, m: int,
                  quad: QuadratureSpec | None = None) -> DllIntegrals:
    """All tracking-error integrals of link (k, m) with their closed forms.

    Returns the exact quadratures (whose quotient reproduces
    :func:`ranging_var_exact` identically), the small-spacing quadratures,
    and the closed-form values they converge to when the front end is wide
    compared to the positioning symbol rate.
    """
    h_own, p_own = _own_link(plan, gains, powers, k, m)
    if quad is None:
        quad = _default_quad()
    tp = plan.pos_period
    d = dll.early_late_spacing
    bfe = plan.frontend
    lo = plan.center_freq - bfe / 2.0
    hi = plan.center_freq + bfe / 2.0

    exact = _exact_integrals(plan, gains, powers, dll, k, m, quad)
    small = _exact_integrals(plan, gains, powers, dll, k, m, quad, small_d=True)

    panels = max(16, int(np.ceil(8.0 * (hi - lo) / (1.0 / tp))))
    curvature = integrate(lambda f: f ** 2 * np.sinc(f * tp) ** 4, lo, hi, quad, panels)

    weights = np.asarray(gains.comm_at_puser[m - 1], dtype=float).sum(axis=0)
    sins = _comm_weight_sins(plan.n_comm, plan.spacing_ratio)
    cross = _cross_pos_level(gains, powers, k, m)

    slope_closed = d * bfe / (2.0 * np.pi)
    noise_closed = np.pi * d * tp * plan.noise_psd * slope_closed
    comm_closed = d ** 2 * tp * plan.comm_power * float(weights @ sins)
    curvature_closed = 1.0 / (2.0 * np.pi ** 2 * tp ** 3)
    crosspos_closed = np.pi ** 2 * d ** 2 * tp ** 4 * cross * curvature_closed

    return DllIntegrals(
        slope=exact[0], noise=exact[1], comm=exact[2], crosspos=exact[3],
        slope_small_d=small[0], noise_small_d=small[1],
        comm_small_d=small[2], crosspos_small_d=small[3],
        slope_closed=float(slope_closed), noise_closed=float(noise_closed),
        comm_closed=float(comm_closed), crosspos_closed=float(crosspos_closed),
        curvature=float(curvature), curvature_closed=float(curvature_closed),
        loop_factor=dll.a, tracked_power=h_own * p_own,
    )
