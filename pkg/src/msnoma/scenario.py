"""Network scenarios: station layout, random users, free-space gains.

A scenario fixes the base stations, scatters positioning users over the
coverage rectangle and communication users over each station's nearest-
station cell, and derives every channel-gain tensor from free-space
propagation at the carrier frequency.  Construction is deterministic in
the seed, and a line-oriented dump format supports reproducibility audits.

Hearability: a station's positioning signal is usable by a receiver only
if its received power clears the cross-correlation floor left by the
strongest other station's signal, scaled by a receiver margin.  Users that
cannot hear enough stations have no position fix.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .mathkit import DomainError
from .geometry import Position
from .ranging import SPEED_OF_LIGHT
from .signalmodel import ChannelGains, SignalPlan

__all__ = [
    "ConfigError",
    "HearabilityConfig",
    "ScenarioLayout",
    "Scenario",
    "free_space_gain",
    "build_scenario",
    "hearable_set",
    "hearable_matrix",
    "fix_available",
    "dump_scenario",
    "load_scenario",
]


class ConfigError(ValueError):
    """Scenario configuration is inconsistent or out of range."""


@dataclass(frozen=True)
class HearabilityConfig:
    """Receiver-side acquisition threshold.

    ``rho`` is the receiver margin (at least one), ``omega`` the
    cross-to-auto correlation power ratio of the spreading codes (below
    one), and ``min_gnbs`` the number of hearable stations required for a
    position fix.  The product rho * omega is the received-power ratio a
    signal must maintain against the strongest competing signal.
    """

    rho: float = 2.0
    omega: float = 0.0925
    min_gnbs: int = 3

    def __post_init__(self):
        if self.rho < 1.0:
            raise ConfigError(f"rho must be >= 1, got {self.rho}")
        if not 0.0 < self.omega:
            raise ConfigError(f"omega must be > 0, got {self.omega}")
        if self.rho * self.omega >= 1.0:
            raise ConfigError(
                "rho * omega must be < 1, otherwise no power assignment can make "
                "every station hearable"
            )
        if self.min_gnbs < 1:
            raise ConfigError("min_gnbs must be >= 1")

    @property
    def threshold(self) -> float:
        return self.rho * self.omega


@dataclass(frozen=True)
class ScenarioLayout:
    """Static part of a scenario: stations, region, carrier.

    ``gnbs`` are (x, y) pairs in meters; the coverage ``region`` is
    (x_min, y_min, x_max, y_max).  Heights default to a planar layout.
    """

    gnbs: tuple = ((0.0, 0.0), (0.0, 200.0), (200.0, 200.0), (200.0, 0.0))
    region: tuple = (0.0, 0.0, 200.0, 200.0)
    carrier_freq: float = 3.5e9
    gnb_height: float = 0.0
    user_height: float = 0.0

    def __post_init__(self):
        x0, y0, x1, y1 = self.region
        if not (x1 > x0 and y1 > y0):
            raise ConfigError(f"region must have positive extent, got {self.region}")
        if len(self.gnbs) < 1:
            raise ConfigError("need at least one base station")
        if self.carrier_freq <= 0:
            raise ConfigError("carrier_freq must be > 0")

    @property
    def n_gnbs(self) -> int:
        return len(self.gnbs)

    def gnb_positions(self) -> list[Position]:
        return [Position(x, y, self.gnb_height) for x, y in self.gnbs]


@dataclass
class Scenario:
    """One realized network: positions plus derived channel gains."""

    layout: ScenarioLayout
    gnbs: list
    pusers: list
    cusers: list  # list (per station) of lists of Position
    carrier_freq: float
    seed: int
    gains: ChannelGains = field(repr=False)

    @property
    def n_gnbs(self) -> int:
        return len(self.gnbs)

    @property
    def n_pusers(self) -> int:
        return len(self.pusers)


def free_space_gain(d: float, f: float):
    """Free-space power gain (c / (4 pi d f))^2; strictly decreasing in d."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise DomainError("distance must be > 0")
    if np.any(np.asarray(f) <= 0):
        raise DomainError("frequency must be > 0")
    g = (SPEED_OF_LIGHT / (4.0 * np.pi * d * f)) ** 2
    return float(g) if g.ndim == 0 else g


def _distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise Euclidean distances between rows of a (n,3) and b (m,3)."""
    return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)


def _sample_in_cell(rng: np.random.Generator, layout: ScenarioLayout, k: int,
                    count: int) -> np.ndarray:
    """Uniform points of the region whose nearest station is station k (0-based)."""
    x0, y0, x1, y1 = layout.region
    stations = np.asarray(layout.gnbs, dtype=float)
    out = np.empty((count, 2))
    got = 0
    while got < count:
        batch = max(4 * (count - got), 64)
        pts = rng.uniform((x0, y0), (x1, y1), size=(batch, 2))
        d2 = ((pts[:, None, :] - stations[None, :, :]) ** 2).sum(axis=-1)
        keep = pts[np.argmin(d2, axis=1) == k]
        take = min(keep.shape[0], count - got)
        out[got:got + take] = keep[:take]
        got += take
    return out


def build_scenario(plan: SignalPlan, layout: ScenarioLayout, seed: int) -> Scenario:
    """Place users at random and derive all channel gains, reproducibly.

    Positioning users are uniform over the region; each station's
    communication users are uniform over that station's nearest-station
    cell.  The same (plan, layout, seed) always yields a bit-identical
    scenario.
    """
    rng = np.random.default_rng(seed)
    x0, y0, x1, y1 = layout.region
    k_total, m_total, n_total = layout.n_gnbs, plan.n_pos, plan.n_comm

    puser_xy = rng.uniform((x0, y0), (x1, y1), size=(m_total, 2))
    pusers = [Position(x, y, layout.user_height) for x, y in puser_xy]
    cusers = []
    for k in range(k_total):
        pts = _sample_in_cell(rng, layout, k, n_total)
        cusers.append([Position(x, y, layout.user_height) for x, y in pts])

    gains = _derive_gains(plan, layout, pusers, cusers)
    return Scenario(
        layout=layout,
        gnbs=layout.gnb_positions(),
        pusers=pusers,
        cusers=cusers,
        carrier_freq=layout.carrier_freq,
        seed=int(seed),
        gains=gains,
    )


def _derive_gains(plan: SignalPlan, layout: ScenarioLayout, pusers, cusers) -> ChannelGains:
    k_total, m_total, n_total = layout.n_gnbs, len(pusers), plan.n_comm
    stations = np.array([[x, y, layout.gnb_height] for x, y in layout.gnbs])
    puser_arr = np.array([p.as_array() for p in pusers])
    cuser_arr = np.array([[c.as_array() for c in row] for row in cusers])  # (K, N, 3)

    f = layout.carrier_freq
    pos = free_space_gain(_distances(stations, puser_arr), f)               # (K, M)
    # station k2 -> location of communication user (k, n)
    flat_c = cuser_arr.reshape(k_total * n_total, 3)
    g_c = free_space_gain(_distances(flat_c, stations), f).reshape(k_total, n_total, k_total)
    comm = np.stack([g_c[k, :, k] for k in range(k_total)])                 # (K, N)
    pos_at_cuser = np.broadcast_to(g_c[:, :, :, None],
                                   (k_total, n_total, k_total, m_total))
    comm_at_puser = np.broadcast_to(pos.T[:, :, None], (m_total, k_total, n_total))
    return ChannelGains(pos=pos, comm=comm, pos_at_cuser=pos_at_cuser,
                        comm_at_puser=comm_at_puser)


def received_power(scenario: Scenario, powers: np.ndarray) -> np.ndarray:
    """(K, M) received positioning power at each user from each station."""
    return scenario.gains.pos * np.asarray(powers, dtype=float)


def hearable_matrix(scenario: Scenario, powers: np.ndarray,
                    hear: HearabilityConfig) -> np.ndarray:
    """(M, K) booleans: can user m acquire station k's signal.

    Station k is hearable if its received power is positive and at least
    rho * omega times the strongest other station's received power.
    """
    r = received_power(scenario, powers)  # (K, M)
    if r.shape[0] == 1:
        return (r.T > 0.0)
    order = np.sort(r, axis=0)
    top1 = order[-1]
    top2 = order[-2]
    strongest_other = np.where(r == top1[None, :], top2[None, :], top1[None, :])
    # duplicated maxima: the strongest other is the same value
    counts = (r == top1[None, :]).sum(axis=0)
    dup = counts > 1
    strongest_other[:, dup] = top1[dup]
    ok = (r > 0.0) & (r >= hear.threshold * strongest_other)
    return ok.T


def hearable_set(scenario: Scenario, powers: np.ndarray, hear: HearabilityConfig,
                 m: int) -> set:
    """1-based indices of the stations user m can acquire."""
    if not 1 <= m <= scenario.n_pusers:
        raise IndexError(f"positioning user index {m} outside 1..{scenario.n_pusers}")
    row = hearable_matrix(scenario, powers, hear)[m - 1]
    return {k + 1 for k in range(scenario.n_gnbs) if row[k]}


def fix_available(hearable, hear: HearabilityConfig) -> bool:
    """Whether the hearable set supports a position fix."""
    return len(hearable) >= hear.min_gnbs


# ---------------------------------------------------------------------------
# line-oriented serialization for reproducibility audits


def dump_scenario(scenario: Scenario) -> str:
    """Serialize positions one entity per line: kind index x y z.

    Communication users are numbered serially, (k-1) * N + n.  Header
    comments carry the carrier, the seed, and the shape needed to
    reconstruct the nested indexing.
    """
    buf = io.StringIO()
    n_per = len(scenario.cusers[0]) if scenario.cusers else 0
    buf.write(f"# carrier_hz={scenario.carrier_freq!r}\n")
    buf.write(f"# seed={scenario.seed}\n")
    buf.write(f"# n_gnbs={scenario.n_gnbs} n_cusers_per_gnb={n_per}\n")
    region = scenario.layout.region
    buf.write(f"# region={region[0]!r},{region[1]!r},{region[2]!r},{region[3]!r}\n")
    for i, p in enumerate(scenario.gnbs, start=1):
        buf.write(f"gnb {i} {p.x!r} {p.y!r} {p.z!r}\n")
    for i, p in enumerate(scenario.pusers, start=1):
        buf.write(f"puser {i} {p.x!r} {p.y!r} {p.z!r}\n")
    for k, row in enumerate(scenario.cusers):
        for n, p in enumerate(row, start=1):
            buf.write(f"cuser {k * n_per + n} {p.x!r} {p.y!r} {p.z!r}\n")
    return buf.getvalue()


def load_scenario(text: str, plan: SignalPlan) -> Scenario:
    """Rebuild a scenario (including gains) from :func:`dump_scenario` output."""
    header = {}
    gnbs, pusers, cuser_flat = [], [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    key, val = tok.split("=", 1)
                    header[key] = val
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ConfigError(f"line {lineno}: expected 'kind index x y z', got {raw!r}")
        kind, _, xs, ys, zs = parts
        pos = Position(float(xs), float(ys), float(zs))
        if kind == "gnb":
            gnbs.append(pos)
        elif kind == "puser":
            pusers.append(pos)
        elif kind == "cuser":
            cuser_flat.append(pos)
        else:
            raise ConfigError(f"line {lineno}: unknown entity kind {kind!r}")
    try:
        carrier = float(header["carrier_hz"])
        seed = int(header["seed"])
        n_per = int(header["n_cusers_per_gnb"])
        region = tuple(float(v) for v in header["region"].split(","))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"missing or malformed header: {exc}") from exc
    if len(cuser_flat) != len(gnbs) * n_per:
        raise ConfigError("communication user count does not match header shape")
    cusers = [cuser_flat[k * n_per:(k + 1) * n_per] for k in range(len(gnbs))]
    layout = ScenarioLayout(
        gnbs=tuple((p.x, p.y) for p in gnbs),
        region=region,
        carrier_freq=carrier,
        gnb_height=gnbs[0].z if gnbs else 0.0,
        user_height=pusers[0].z if pusers else 0.0,
    )
    gains = _derive_gains(plan, layout, pusers, cusers)
    return Scenario(layout=layout, gnbs=gnbs, pusers=pusers, cusers=cusers,
                    carrier_freq=carrier, seed=seed, gains=gains)
