"""Spectral layout of the integrated signal and the communication-side model.

A signal plan places N communication sub-carriers at spacing ``delta_f_c``
and M positioning sub-carriers at spacing ``G * delta_f_c`` inside a total
bandwidth B.  Positioning symbols are G times shorter than communication
symbols, so each positioning sub-carrier leaks a sinc^2 tail across the
communication grid.  This module computes the normalized PSDs, the leaked
interference seen by each communication user, and the resulting bit error
rate.

Index conventions follow the 1-based math: positioning users m in 1..M,
communication users n in 1..N, base stations k in 1..K.  Internal numpy
storage is 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .mathkit import erfc, sinc

__all__ = [
    "SignalPlan",
    "ChannelGains",
    "psd_positioning",
    "psd_communication",
    "received_pos_power_at_cuser",
    "interference_at_cuser",
    "interference_matrix",
    "ber_cuser",
    "ber_matrix",
    "ber_single_cell",
    "single_cell_interference",
    "subcarrier_leakage",
]


@dataclass(frozen=True)
class SignalPlan:
    """Spectral layout and symbol timing of the integrated signal.

    Parameters
    ----------
    bandwidth : float
        Total signal bandwidth B in Hz.
    subcarrier_spacing : float
        Communication sub-carrier spacing in Hz.
    spacing_ratio : int
        Integer ratio G between positioning and communication sub-carrier
        spacings (positioning spacing = G * communication spacing).
    center_freq : float
        Center of the front-end window after downconversion, Hz.  The
        default 0 centers the window on the tracked sub-carrier.
    frontend_bandwidth : float, optional
        Double-sided receiver front-end bandwidth in Hz; defaults to 2B.
    ber_coef, snr_coef : float
        Modulation/coding coefficients of the bit-error-rate law
        ber = ber_coef * erfc(snr_coef * SNR).
    comm_power : float
        Transmit power of each communication user, W.
    noise_psd : float
        Single-sided noise power spectral density, W/Hz.
    num_pos_users, num_comm_users : int, optional
        Override the derived maximum user counts (must still fit in B).
    """

    bandwidth: float = 50e6
    subcarrier_spacing: float = 30e3
    spacing_ratio: int = 80
    center_freq: float = 0.0
    frontend_bandwidth: float | None = None
    ber_coef: float = 0.5
    snr_coef: float = 1.0
    comm_power: float = 0.5
    noise_psd: float = 4.0e-15
    num_pos_users: int | None = None
    num_comm_users: int | None = None

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ValueError(f"bandwidth must be > 0, got {self.bandwidth}")
        if self.subcarrier_spacing <= 0:
            raise ValueError("subcarrier_spacing must be > 0")
        g = self.spacing_ratio
        if not (isinstance(g, (int, np.integer)) and g >= 1):
            raise ValueError(f"spacing_ratio must be a positive integer, got {g!r}")
        if self.frontend_bandwidth is not None and self.frontend_bandwidth < self.bandwidth:
            raise ValueError("frontend_bandwidth must be >= bandwidth")
        for name in ("ber_coef", "snr_coef", "comm_power", "noise_psd"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.n_comm < 1 or self.n_pos < 1:
            raise ValueError("plan leaves no room for users; enlarge bandwidth")
        if self.n_pos * self.pos_spacing > self.bandwidth + 1e-9:
            raise ValueError("num_pos_users does not fit inside the bandwidth")
        if self.n_comm * self.subcarrier_spacing > self.bandwidth + 1e-9:
            raise ValueError("num_comm_users does not fit inside the bandwidth")

    @property
    def pos_spacing(self) -> float:
        """Positioning sub-carrier spacing in Hz."""
        return self.spacing_ratio * self.subcarrier_spacing

    @property
    def comm_period(self) -> float:
        """Communication symbol period T_c in seconds."""
        return 1.0 / self.subcarrier_spacing

    @property
    def pos_period(self) -> float:
        """Positioning symbol period T_p in seconds."""
        return 1.0 / self.pos_spacing

    @property
    def n_comm(self) -> int:
        """Number of communication users N."""
        if self.num_comm_users is not None:
            return int(self.num_comm_users)
        return int(np.floor(self.bandwidth / self.subcarrier_spacing)) - 1

    @property
    def n_pos(self) -> int:
        """Number of positioning users M."""
        if self.num_pos_users is not None:
            return int(self.num_pos_users)
        return int(np.floor(self.bandwidth / self.pos_spacing)) - 1

    @property
    def frontend(self) -> float:
        """Effective double-sided front-end bandwidth in Hz."""
        if self.frontend_bandwidth is not None:
            return float(self.frontend_bandwidth)
        return 2.0 * self.bandwidth


@dataclass
class ChannelGains:
    """Power gains of every link in a K-cell network.

    Attributes
    ----------
    pos : (K, M) array
        Gain between base station k and positioning user m.
    comm : (K, N) array
        Gain between base station k and its own communication user n.
    pos_at_cuser : (K, N, K, M) array
        Gain of base station k2's positioning transmission for user m as
        received at communication user (k, n)'s location.
    comm_at_puser : (M, K, N) array
        Gain of base station k2's transmission to communication user n as
        received at positioning user m's location.
    """

    pos: np.ndarray
    comm: np.ndarray
    pos_at_cuser: np.ndarray
    comm_at_puser: np.ndarray

    def __post_init__(self):
        self.pos = np.asarray(self.pos, dtype=float)
        self.comm = np.asarray(self.comm, dtype=float)
        self.pos_at_cuser = np.asarray(self.pos_at_cuser, dtype=float)
        self.comm_at_puser = np.asarray(self.comm_at_puser, dtype=float)
        k, m = self.pos.shape
        k2, n = self.comm.shape
        if k2 != k:
            raise ValueError("pos and comm disagree on the number of base stations")
        if self.pos_at_cuser.shape != (k, n, k, m):
            raise ValueError(
                f"pos_at_cuser must have shape {(k, n, k, m)}, got {self.pos_at_cuser.shape}"
            )
        if self.comm_at_puser.shape != (m, k, n):
            raise ValueError(
                f"comm_at_puser must have shape {(m, k, n)}, got {self.comm_at_puser.shape}"
            )
        for arr in (self.pos, self.comm, self.pos_at_cuser, self.comm_at_puser):
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ValueError("channel gains must be finite and non-negative")

    @property
    def n_gnbs(self) -> int:
        return self.pos.shape[0]

    @classmethod
    def uniform(cls, plan: SignalPlan, n_gnbs: int, value: float = 1.0) -> "ChannelGains":
        """All-links-equal gains, handy for single-cell checks."""
        k, m, n = n_gnbs, plan.n_pos, plan.n_comm
        return cls(
            pos=np.full((k, m), value),
            comm=np.full((k, n), value),
            pos_at_cuser=np.full((k, n, k, m), value),
            comm_at_puser=np.full((m, k, n), value),
        )

    def validate_against(self, plan: SignalPlan) -> None:
        if self.pos.shape[1] != plan.n_pos or self.comm.shape[1] != plan.n_comm:
            raise ValueError("gain tensor dimensions do not match the signal plan")


def _check_pos_index(plan: SignalPlan, m: int) -> None:
    if not 1 <= m <= plan.n_pos:
        raise IndexError(f"positioning user index {m} outside 1..{plan.n_pos}")


def _check_comm_index(plan: SignalPlan, n: int) -> None:
    if not 1 <= n <= plan.n_comm:
        raise IndexError(f"communication user index {n} outside 1..{plan.n_comm}")


def _check_gnb_index(gains: ChannelGains, k: int) -> None:
    if not 1 <= k <= gains.n_gnbs:
        raise IndexError(f"base station index {k} outside 1..{gains.n_gnbs}")


def psd_positioning(plan: SignalPlan, m: int, f):
    """Normalized PSD of positioning user m at frequency f (1/Hz).

    Peaks at T_p on the user's sub-carrier, integrates to one, and nulls at
    integer multiples of the positioning spacing away from the carrier.
    """
    _check_pos_index(plan, m)
    tp = plan.pos_period
    return tp * sinc((np.asarray(f, dtype=float) - m * plan.pos_spacing) * tp) ** 2


def psd_communication(plan: SignalPlan, n: int, f):
    """Normalized PSD of communication user n at frequency f (1/Hz)."""
    _check_comm_index(plan, n)
    tc = plan.comm_period
    return tc * sinc((np.asarray(f, dtype=float) - n * plan.subcarrier_spacing) * tc) ** 2


@lru_cache(maxsize=8)
def _leakage_cached(m_users: int, n_users: int, ratio: int, pos_period: float) -> np.ndarray:
    m_idx = np.arange(1, m_users + 1)[:, None]
    n_idx = np.arange(1, n_users + 1)[None, :]
    return pos_period * np.sinc(m_idx - n_idx / ratio) ** 2


def subcarrier_leakage(plan: SignalPlan) -> np.ndarray:
    """(M, N) table of T_p * sinc^2(m - n/G).

    Entry [m-1, n-1] is the positioning PSD of user m evaluated on
    communication sub-carrier n; it scales every leaked-power expression.
    """
    return _leakage_cached(plan.n_pos, plan.n_comm, plan.spacing_ratio, plan.pos_period)


def received_pos_power_at_cuser(plan: SignalPlan, gains: ChannelGains,
                                k: int, n: int, k2: int, m: int, power: float) -> float:
    """Positioning power of (k2, m) leaked onto communication user (k, n).

    Returns gain * power * T_p * sinc^2(m - n/G).  The T_p * sinc^2 factor
    carries the convention used consistently by the interference sums and
    the interference threshold, so the two are always comparable.
    """
    _check_gnb_index(gains, k)
    _check_gnb_index(gains, k2)
    _check_comm_index(plan, n)
    _check_pos_index(plan, m)
    if power < 0:
        raise ValueError("power must be >= 0")
    g = gains.pos_at_cuser[k - 1, n - 1, k2 - 1, m - 1]
    return float(g * power * subcarrier_leakage(plan)[m - 1, n - 1])


def interference_matrix(plan: SignalPlan, gains: ChannelGains, powers: np.ndarray) -> np.ndarray:
    """(K, N) positioning-to-communication interference for all users.

    Element [k-1, n-1] sums the leaked power of every positioning signal in
    the network at communication user (k, n).
    """
    powers = np.asarray(powers, dtype=float)
    leak = subcarrier_leakage(plan)  # (M, N)
    # sum over source station k2 and positioning user m
    return np.einsum("knjm,jm,mn->kn", gains.pos_at_cuser, powers, leak, optimize=True)


def interference_at_cuser(plan: SignalPlan, gains: ChannelGains,
                          powers: np.ndarray, k: int, n: int) -> float:
    """Total leaked positioning power at communication user (k, n)."""
    _check_gnb_index(gains, k)
    _check_comm_index(plan, n)
    powers = np.asarray(powers, dtype=float)
    leak = subcarrier_leakage(plan)[:, n - 1]  # (M,)
    g = gains.pos_at_cuser[k - 1, n - 1]       # (K, M)
    return float(np.sum(g * powers * leak[None, :]))


def ber_matrix(plan: SignalPlan, gains: ChannelGains, powers: np.ndarray) -> np.ndarray:
    """(K, N) bit error rate of every communication user."""
    interference = interference_matrix(plan, gains, powers)
    snr = (plan.snr_coef * gains.comm * plan.comm_power * plan.comm_period
           / (interference + 2.0 * plan.noise_psd))
    return plan.ber_coef * erfc(snr)


def ber_cuser(plan: SignalPlan, gains: ChannelGains, powers: np.ndarray,
              k: int, n: int) -> float:
    """Bit error rate of communication user (k, n).

    Monotone increasing in the leaked positioning interference and bounded
    by ber_coef.
    """
    _check_gnb_index(gains, k)
    _check_comm_index(plan, n)
    interference = interference_at_cuser(plan, gains, powers, k, n)
    snr = (plan.snr_coef * gains.comm[k - 1, n - 1] * plan.comm_power * plan.comm_period
           / (interference + 2.0 * plan.noise_psd))
    return float(plan.ber_coef * erfc(snr))


def single_cell_interference(plan: SignalPlan, powers_vec: np.ndarray, n: int) -> float:
    """Leaked positioning power at sub-carrier n in a unit-gain single cell."""
    _check_comm_index(plan, n)
    powers_vec = np.asarray(powers_vec, dtype=float)
    if powers_vec.shape != (plan.n_pos,):
        raise ValueError(f"expected {plan.n_pos} powers, got shape {powers_vec.shape}")
    leak = subcarrier_leakage(plan)[:, n - 1]
    return float(np.sum(powers_vec * leak))


def ber_single_cell(plan: SignalPlan, powers_vec: np.ndarray, n: int) -> float:
    """Single-cell, unit-gain bit error rate of communication user n.

    Equals :func:`ber_cuser` evaluated on a one-station network whose gains
    are all one.
    """
    interference = single_cell_interference(plan, powers_vec, n)
    snr = (plan.snr_coef * plan.comm_power * plan.comm_period
           / (interference + 2.0 * plan.noise_psd))
    return float(plan.ber_coef * erfc(snr))
