"""Joint power allocation for the positioning sub-carriers.

The allocator minimizes the network-average squared horizontal positioning
accuracy subject to three constraint families: a per-communication-user
interference cap derived from the tolerable bit error rate, a per-station
positioning power budget, and the hearability (near-far) ratio between
every pair of stations at every user.  The dual of the problem splits into
per-link subproblems whose inner maximizer has a closed form: the power of
link (k, m) is the geometric dilution times the ranging factor, divided by
the square root of a multiplier bracket.  Nested projected-subgradient
loops update the multipliers: the inner loop adjusts the interference and
hearability multipliers, the outer loop the budget multipliers.

Internally the objective is kept in meters squared, so the ranging factor
enters as sigma_tilde = c * sqrt(variance * power), with units m * sqrt(W).
Multiplier updates are preconditioned by the natural scale of each
constraint family; this leaves the fixed point unchanged and makes one
step-size setting work across scenarios.

A note on the closed form's sign: the bracket that makes the per-link
Lagrangian attain an interior maximum is

    nu + sum_n mu * dI/dP - beta * gain,

which is positive exactly when the budget/interference pressure exceeds
the hearability pressure.  When it is not positive the subproblem pushes
the power to its cap and the multiplier dynamics bring the bracket back.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import dilution, horizontal_accuracy
from .mathkit import DomainError, erfc_inv
from .ranging import SPEED_OF_LIGHT, DllConfig, equivalent_comm_gain
from .scenario import HearabilityConfig, Scenario, hearable_matrix
from .signalmodel import ChannelGains, SignalPlan, interference_matrix, subcarrier_leakage

__all__ = [
    "InactiveBracket",
    "DualState",
    "Constraints",
    "AllocationReport",
    "SubgradientCheck",
    "TRACE_COLUMNS",
    "interference_threshold",
    "interference_threshold_matrix",
    "qos_band",
    "j_leakage",
    "closed_form_power",
    "kkt_power",
    "pcjpa",
    "equal_power",
    "evaluate_allocation",
    "dual_function_check",
]

TRACE_COLUMNS = (
    "iteration",
    "objective_m2",
    "max_qos_violation",
    "max_budget_violation",
    "max_hearability_violation",
)


class InactiveBracket(RuntimeError):
    """Multiplier state admits no interior stationary point for this link."""

    def __init__(self, bracket: float):
        self.bracket = bracket
        super().__init__(f"multiplier bracket {bracket!r} is not positive")


@dataclass
class DualState:
    """Lagrange multipliers with their update settings.

    mu (K, N) caps the per-communication-user interference, nu (K,) the
    per-station budget, beta (K, M) the hearability ratios.  b1..b3 are
    base step sizes (scaled by 1/sqrt(t) during the run), eps the
    multiplier-change stopping tolerance, iter_max the loop bound.
    """

    mu: np.ndarray
    nu: np.ndarray
    beta: np.ndarray
    b1: float = 1.0
    b2: float = 1.0
    b3: float = 1.0
    eps: float = 1e-6
    iter_max: int = 500

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.nu = np.asarray(self.nu, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        if np.any(self.mu < 0) or np.any(self.nu < 0) or np.any(self.beta < 0):
            raise ValueError("multipliers must be non-negative")
        if min(self.b1, self.b2, self.b3) <= 0:
            raise ValueError("step sizes must be > 0")
        if self.eps <= 0 or self.iter_max < 1:
            raise ValueError("eps must be > 0 and iter_max >= 1")

    @classmethod
    def zeros(cls, n_gnbs: int, n_comm: int, n_pos: int, **kwargs) -> "DualState":
        return cls(mu=np.zeros((n_gnbs, n_comm)), nu=np.zeros(n_gnbs),
                   beta=np.zeros((n_gnbs, n_pos)), **kwargs)


@dataclass(frozen=True)
class Constraints:
    """Constraint levels of the allocation problem.

    qos_ber is the tolerable communication bit error rate, power_budget the
    per-station positioning power in watts (scalar or length-K), hear the
    hearability threshold configuration.
    """

    qos_ber: float = 8e-3
    power_budget: float | np.ndarray = 0.8
    hear: HearabilityConfig = field(default_factory=HearabilityConfig)

    def budget_vector(self, n_gnbs: int) -> np.ndarray:
        budget = np.broadcast_to(np.asarray(self.power_budget, dtype=float), (n_gnbs,)).copy()
        if np.any(budget <= 0):
            raise ValueError("power budgets must be > 0")
        return budget


@dataclass
class AllocationReport:
    """Outcome of one allocation: powers, accuracy, coverage, diagnostics."""

    powers: np.ndarray
    psi: np.ndarray
    coverage: np.ndarray
    mean_psi_covered: float
    coverage_fraction: float
    iterations_outer: int
    iterations_inner: int
    converged: bool
    trace: list
    duals: DualState | None = None


@dataclass
class SubgradientCheck:
    """Result of the dual-function subgradient inequality verification."""

    passed: bool
    slack: float
    station_slacks: np.ndarray


# ---------------------------------------------------------------------------
# constraint ingredients


def interference_threshold(plan: SignalPlan, gains: ChannelGains, xi_th: float,
                           k: int, n: int) -> float:
    """Largest tolerable leaked power at communication user (k, n), W*s.

    Inverts the bit-error-rate law at the QoS level.  Clamped at zero when
    the noise floor alone already violates the QoS (the companion matrix
    routine reports which users are in that state).
    """
    values, _ = interference_threshold_matrix(plan, gains, xi_th)
    if not 1 <= k <= gains.n_gnbs:
        raise IndexError(f"base station index {k} outside 1..{gains.n_gnbs}")
    if not 1 <= n <= plan.n_comm:
        raise IndexError(f"communication user index {n} outside 1..{plan.n_comm}")
    return float(values[k - 1, n - 1])


def interference_threshold_matrix(plan: SignalPlan, gains: ChannelGains,
                                  xi_th: float) -> tuple[np.ndarray, np.ndarray]:
    """(K, N) interference caps and a feasibility mask.

    An entry is infeasible (cap clamped to zero, mask False) when even zero
    positioning power cannot meet the QoS there.
    """
    if not 0.0 < xi_th < plan.ber_coef:
        raise DomainError(
            f"qos level must lie in (0, ber_coef={plan.ber_coef}), got {xi_th}"
        )
    inv = erfc_inv(xi_th / plan.ber_coef)
    raw = (plan.snr_coef * gains.comm * plan.comm_power * plan.comm_period / inv
           - 2.0 * plan.noise_psd)
    feasible = raw > 0.0
    return np.where(feasible, raw, 0.0), feasible


def qos_band(plan: SignalPlan, m: int, mode: str = "blocks") -> range:
    """Communication sub-carriers tied to positioning user m's subproblem.

    "blocks" partitions the grid into consecutive runs of 2G-1 sub-carriers
    per positioning user (clipped at the spectrum edge, so high-index users
    may get an empty band); "mainlobe" takes the 2G-1 sub-carriers under
    the user's spectral main lobe; "all" couples every sub-carrier.
    Returns a 1-based range.
    """
    if not 1 <= m <= plan.n_pos:
        raise IndexError(f"positioning user index {m} outside 1..{plan.n_pos}")
    g, n_users = plan.spacing_ratio, plan.n_comm
    if mode == "blocks":
        width = 2 * g - 1
        lo, hi = width * (m - 1) + 1, width * m
    elif mode == "mainlobe":
        lo, hi = g * (m - 1) + 1, g * (m + 1) - 1
    elif mode == "all":
        lo, hi = 1, n_users
    else:
        raise ValueError(f"unknown band mode {mode!r}")
    lo = max(lo, 1)
    hi = min(hi, n_users)
    return range(lo, hi + 1)


def j_leakage(plan: SignalPlan, gains: ChannelGains, k: int, n: int, m: int) -> float:
    """Derivative of the interference at user (k, n) w.r.t. power (k, m).

    Only station k's own transmission of sub-carrier m moves with that
    power, so this is its link gain times the spectral leakage factor.
    Matches a central finite difference of the interference sum.
    """
    if not 1 <= k <= gains.n_gnbs:
        raise IndexError(f"base station index {k} outside 1..{gains.n_gnbs}")
    if not 1 <= n <= plan.n_comm:
        raise IndexError(f"communication user index {n} outside 1..{plan.n_comm}")
    if not 1 <= m <= plan.n_pos:
        raise IndexError(f"positioning user index {m} outside 1..{plan.n_pos}")
    return float(gains.pos_at_cuser[k - 1, n - 1, k - 1, m - 1]
                 * subcarrier_leakage(plan)[m - 1, n - 1])


# ---------------------------------------------------------------------------
# closed-form subproblem solution


def closed_form_power(lam: float, sigma_factor: float, m_users: int, inner: float) -> float:
    """Dilution times ranging factor over the root of the multiplier bracket.

    ``inner`` is the per-link bracket nu + sum(mu * J) - beta * gain; the
    full bracket is m_users * inner and must be positive.
    """
    bracket = m_users * inner
    if not bracket > 0.0:
        raise InactiveBracket(bracket)
    return float(lam * sigma_factor / np.sqrt(bracket))


def _sigma_factor_matrix(plan: SignalPlan, gains: ChannelGains, cross_powers: np.ndarray,
                         dll: DllConfig) -> np.ndarray:
    """(K, M) ranging factors in meter units: c * sqrt(variance * power)."""
    tp = plan.pos_period
    bfe = plan.frontend
    pref = dll.a * tp ** 2 / 2.0
    h = gains.pos  # (K, M)
    heq_sum = _equivalent_gain_sums(plan, gains)  # (M,)
    recv = h * np.asarray(cross_powers, dtype=float)
    cross = recv.sum(axis=0)[None, :] - recv
    rf = pref * (plan.noise_psd / (bfe * tp * h)
                 + plan.bandwidth * plan.spacing_ratio * plan.comm_power * heq_sum[None, :]
                 / (bfe ** 2 * h)
                 + cross / (bfe ** 2 * tp * h))
    return SPEED_OF_LIGHT * np.sqrt(rf)


def _equivalent_gain_sums(plan: SignalPlan, gains: ChannelGains) -> np.ndarray:
    """(M,) sum over stations of the equivalent communication gains."""
    return np.array([equivalent_comm_gain(plan, gains, m).sum()
                     for m in range(1, plan.n_pos + 1)])


def _own_j_tensor(plan: SignalPlan, gains: ChannelGains) -> np.ndarray:
    """(K, N, M) leakage derivatives dI(k, n)/dP(k, m)."""
    leak = subcarrier_leakage(plan)  # (M, N)
    k_total = gains.n_gnbs
    own = np.stack([gains.pos_at_cuser[k, :, k, :] for k in range(k_total)])  # (K, N, M)
    return own * leak.T[None, :, :]


def _band_slices(plan: SignalPlan, mode: str) -> list:
    return [qos_band(plan, m, mode) for m in range(1, plan.n_pos + 1)]


def _mu_j_matrix(mu: np.ndarray, own_j: np.ndarray, bands: list) -> np.ndarray:
    """(K, M) sum over each user's band of mu[k, n] * J[k, n, m]."""
    k_total, _, m_total = own_j.shape
    out = np.zeros((k_total, m_total))
    for m_idx, band in enumerate(bands):
        if len(band) == 0:
            continue
        sl = slice(band.start - 1, band.stop - 1)
        out[:, m_idx] = np.einsum("kn,kn->k", mu[:, sl], own_j[:, sl, m_idx])
    return out


def kkt_power(plan: SignalPlan, gains: ChannelGains, powers: np.ndarray, dll: DllConfig,
              geom_lambda: float, duals: DualState, k: int, m: int,
              band_mode: str = "blocks") -> float:
    """Closed-form stationary power of link (k, m) at the given multipliers.

    ``powers`` supplies the other stations' powers inside the ranging
    factor; the link's own entry does not influence the result.  Raises
    InactiveBracket when the multiplier state admits no interior stationary
    point (the per-link Lagrangian is then monotone in the power).
    """
    if not 1 <= k <= gains.n_gnbs:
        raise IndexError(f"base station index {k} outside 1..{gains.n_gnbs}")
    if not 1 <= m <= plan.n_pos:
        raise IndexError(f"positioning user index {m} outside 1..{plan.n_pos}")
    sigma_factor = _sigma_factor_matrix(plan, gains, powers, dll)[k - 1, m - 1]
    band = qos_band(plan, m, band_mode)
    mu_j = 0.0
    for n in band:
        mu_j += duals.mu[k - 1, n - 1] * j_leakage(plan, gains, k, n, m)
    inner = duals.nu[k - 1] + mu_j - duals.beta[k - 1, m - 1] * gains.pos[k - 1, m - 1]
    return closed_form_power(geom_lambda, sigma_factor, plan.n_pos, inner)


# ---------------------------------------------------------------------------
# allocation evaluation


def _sigma_matrix_meters(plan: SignalPlan, gains: ChannelGains, powers: np.ndarray,
                         dll: DllConfig) -> np.ndarray:
    """(K, M) closed-form ranging sigma in meters; inf for silent links."""
    powers = np.asarray(powers, dtype=float)
    factor = _sigma_factor_matrix(plan, gains, powers, dll)  # c * sqrt(rf)
    with np.errstate(divide="ignore"):
        return np.where(powers > 0.0, factor / np.sqrt(np.maximum(powers, 1e-300)), np.inf)


def _dilution_full(scenario: Scenario) -> np.ndarray:
    """(K, M) dilution factors of every station-user pair, full geometry."""
    k_total, m_total = scenario.n_gnbs, scenario.n_pusers
    lam = np.empty((k_total, m_total))
    for m_idx, user in enumerate(scenario.pusers):
        lam[:, m_idx] = dilution(scenario.gnbs, user).dilution_factors
    return lam


def evaluate_allocation(plan: SignalPlan, scenario: Scenario, dll: DllConfig,
                        powers: np.ndarray, hear: HearabilityConfig):
    """Per-user accuracy and coverage under a fixed power matrix.

    A user is covered when it hears at least ``hear.min_gnbs`` stations;
    its accuracy then uses the hearable subset's geometry and ranging
    sigmas.  Returns (psi, covered, hearable) where psi is NaN for
    uncovered users.
    """
    powers = np.asarray(powers, dtype=float)
    hearable = hearable_matrix(scenario, powers, hear)  # (M, K)
    sigma = _sigma_matrix_meters(plan, scenario.gains, powers, dll)  # (K, M)
    m_total = scenario.n_pusers
    psi = np.full(m_total, np.nan)
    covered = np.zeros(m_total, dtype=bool)
    for m_idx in range(m_total):
        idx = np.flatnonzero(hearable[m_idx])
        if idx.size < hear.min_gnbs:
            continue
        stations = [scenario.gnbs[i] for i in idx]
        lam = dilution(stations, scenario.pusers[m_idx]).dilution_factors
        covered[m_idx] = True
        psi[m_idx] = horizontal_accuracy(lam, sigma[idx, m_idx])
    return psi, covered, hearable


def _report(plan, scenario, dll, powers, hear, iterations_outer, iterations_inner,
            converged, trace, duals) -> AllocationReport:
    psi, covered, _ = evaluate_allocation(plan, scenario, dll, powers, hear)
    mean_psi = float(np.mean(psi[covered])) if covered.any() else float("nan")
    return AllocationReport(
        powers=powers,
        psi=psi,
        coverage=covered,
        mean_psi_covered=mean_psi,
        coverage_fraction=float(covered.mean()),
        iterations_outer=iterations_outer,
        iterations_inner=iterations_inner,
        converged=converged,
        trace=trace,
        duals=duals,
    )


# ---------------------------------------------------------------------------
# feasibility repair


def _strongest_other(recv: np.ndarray) -> np.ndarray:
    """(K, M) strongest received power among the other stations."""
    if recv.shape[0] == 1:
        return np.zeros_like(recv)
    order = np.sort(recv, axis=0)
    top1, top2 = order[-1], order[-2]
    out = np.where(recv == top1[None, :], top2[None, :], top1[None, :])
    dup = (recv == top1[None, :]).sum(axis=0) > 1
    out[:, dup] = top1[dup]
    return out


def _repair_feasibility(plan, gains, powers, i_th, feasible_qos, budget, hear):
    """Project an allocation onto the feasible set.

    First raise powers until every hearability ratio holds (possible since
    rho * omega < 1), then scale everything down uniformly to honor the
    budget and interference caps; uniform scaling preserves the ratios.
    """
    p = np.asarray(powers, dtype=float).copy()
    thr = hear.threshold
    for _ in range(32):
        recv = gains.pos * p
        need = thr * _strongest_other(recv)
        short = recv < need
        if not short.any():
            break
        p[short] = (need[short] / gains.pos[short]) * (1.0 + 1e-12)
    scale = 1.0
    row_sums = p.sum(axis=1)
    scale = min(scale, float(np.min(budget / np.maximum(row_sums, 1e-300))))
    interference = interference_matrix(plan, gains, p)
    active = feasible_qos & (interference > 0)
    if active.any():
        scale = min(scale, float(np.min(i_th[active] / interference[active])))
    return p * min(1.0, scale)


# ---------------------------------------------------------------------------
# the nested subgradient solver


def pcjpa(plan: SignalPlan, scenario: Scenario, dll: DllConfig,
          constraints: Constraints, duals: DualState | None = None,
          rng: np.random.Generator | None = None, *,
          band_mode: str = "blocks", lambda_mode: str = "true") -> AllocationReport:
    """Joint power allocation by nested projected subgradient iterations.

    The first outer pass optimizes pure ranging (unit dilution, no
    cross-station interference); later passes refresh the dilution factors
    and the cross-power snapshot from the previous iterate.  Within each
    outer pass the inner loop alternates closed-form power updates with
    interference / hearability multiplier steps; the outer loop updates the
    budget multipliers.  The returned powers are projected onto the
    feasible set, so every reported allocation satisfies the constraints.

    lambda_mode "estimated" perturbs user positions by the previous
    accuracy before computing dilution factors (requires ``rng``),
    emulating a receiver that only knows its rough position.
    """
    gains = scenario.gains
    k_total, m_total, n_total = gains.n_gnbs, plan.n_pos, plan.n_comm
    hear = constraints.hear
    budget = constraints.budget_vector(k_total)
    if duals is None:
        duals = DualState.zeros(k_total, n_total, m_total)
    if lambda_mode not in ("true", "estimated"):
        raise ValueError(f"unknown lambda_mode {lambda_mode!r}")
    if lambda_mode == "estimated" and rng is None:
        rng = np.random.default_rng(scenario.seed)

    i_th, feasible_qos = interference_threshold_matrix(plan, gains, constraints.qos_ber)
    own_j = _own_j_tensor(plan, gains)
    own_j2 = own_j ** 2
    bands = _band_slices(plan, band_mode)
    lam_true = _dilution_full(scenario)
    h = gains.pos

    # relative scales used for the convergence measure and the trace
    s_mu = np.maximum(i_th, 2.0 * plan.noise_psd)
    s_beta = np.maximum(h * (budget[:, None] / m_total), 1e-300)

    # warm-start the budget multipliers from the budget-only fixed point
    sigma0 = _sigma_factor_matrix(plan, gains, np.zeros((k_total, m_total)), dll)
    nu = ((sigma0.sum(axis=1) / budget) ** 2 / m_total
          if not duals.nu.any() else duals.nu.copy())
    mu = duals.mu.copy()
    beta = duals.beta.copy()

    p = np.zeros((k_total, m_total))
    trace: list = []
    total_inner = 0
    converged = False
    outer_done = 0
    res_mu_rel = np.zeros_like(mu)
    res_beta_rel = np.zeros_like(beta)

    for t in range(1, duals.iter_max + 1):
        outer_done = t
        if t == 1:
            lam = np.ones((k_total, m_total))
            cross_snapshot = np.zeros((k_total, m_total))
        else:
            lam = lam_true
            if lambda_mode == "estimated":
                lam = _dilution_perturbed(scenario, p, plan, dll, hear, rng)
            cross_snapshot = p.copy()
        sigma_factor = _sigma_factor_matrix(plan, gains, cross_snapshot, dll)

        # inner loop: interference and hearability multipliers.  Each
        # projected step follows the printed subgradient direction but is
        # scaled by the local Newton metric of its own constraint, which
        # keeps one step setting stable across the wildly different
        # constraint units.
        # bracket value at which a link's power reaches the cap; below it the
        # closed form is clipped, so it also floors the step metric
        cap_bracket = np.maximum((lam * sigma_factor / budget[:, None]) ** 2 / m_total,
                                 1e-300)

        for t_inner in range(1, duals.iter_max + 1):
            total_inner += 1
            inner = nu[:, None] + _mu_j_matrix(mu, own_j, bands) - beta * h
            active = inner > cap_bracket
            with np.errstate(divide="ignore", invalid="ignore"):
                p = np.where(active,
                             lam * sigma_factor / np.sqrt(m_total * np.abs(inner)),
                             budget[:, None])
            p = np.minimum(p, budget[:, None])

            interference = interference_matrix(plan, gains, p)
            recv = h * p
            res_mu_w = i_th - interference
            res_beta_w = recv - hear.threshold * _strongest_other(recv)
            res_mu_rel = res_mu_w / s_mu
            res_beta_rel = res_beta_w / s_beta

            safe_inner = np.maximum(np.abs(inner), cap_bracket)
            dp_dbracket = p / (2.0 * safe_inner)  # |dP/d(inner)| at the closed form
            kappa_mu = np.maximum(np.einsum("knm,km->kn", own_j2, dp_dbracket), 1e-300)
            kappa_beta = np.maximum(h ** 2 * dp_dbracket, 1e-300)

            rate2 = duals.b2 / np.sqrt(total_inner)
            rate3 = duals.b3 / np.sqrt(total_inner)
            mu_next = np.maximum(0.0, mu - rate2 * res_mu_w / kappa_mu)
            beta_next = np.maximum(0.0, beta - rate3 * res_beta_w / kappa_beta)
            # convergence measured as the constraint-space movement of the step
            d_mu = float(np.max(np.abs(mu_next - mu) * kappa_mu / s_mu))
            d_beta = float(np.max(np.abs(beta_next - beta) * kappa_beta / s_beta))
            mu, beta = mu_next, beta_next
            if d_mu <= duals.eps and d_beta <= duals.eps:
                break

        # outer step: budget multipliers, same Newton-metric scaling; the
        # multiplicative clip keeps one aggressive step from collapsing the
        # multiplier to zero (the budget-only fixed point moves as nu^-1/2)
        res_nu_w = budget - p.sum(axis=1)
        inner = nu[:, None] + _mu_j_matrix(mu, own_j, bands) - beta * h
        kappa_nu = np.maximum(
            (p / (2.0 * np.maximum(np.abs(inner), cap_bracket))).sum(axis=1), 1e-300)
        rate1 = duals.b1 / np.sqrt(t)
        nu_next = np.maximum(0.0, nu - rate1 * res_nu_w / kappa_nu)
        nu_next = np.clip(nu_next, 0.25 * nu, 4.0 * nu + 1e-300)
        d_nu = float(np.max(np.abs(nu_next - nu) * kappa_nu / budget))
        nu = nu_next

        trace.append((
            t,
            float(np.mean(_objective_psi2(lam_true, sigma_factor, p))),
            float(np.max(-res_mu_rel, initial=0.0)),
            float(np.max(-res_nu_w / budget, initial=0.0)),
            float(np.max(-res_beta_rel, initial=0.0)),
        ))
        if d_nu <= duals.eps:
            converged = True
            break

    p = _repair_feasibility(plan, gains, p, i_th, feasible_qos, budget, hear)
    final = DualState(mu=mu, nu=nu, beta=beta, b1=duals.b1, b2=duals.b2,
                      b3=duals.b3, eps=duals.eps, iter_max=duals.iter_max)
    return _report(plan, scenario, dll, p, hear, outer_done, total_inner,
                   converged, trace, final)


def _objective_psi2(lam: np.ndarray, sigma_factor: np.ndarray, powers: np.ndarray) -> np.ndarray:
    """(M,) squared accuracy proxy from the current factors, meters^2."""
    with np.errstate(divide="ignore"):
        var = np.where(powers > 0.0, sigma_factor ** 2 / np.maximum(powers, 1e-300), np.inf)
    return ((lam ** 2) * var).sum(axis=0)


def _dilution_perturbed(scenario, powers, plan, dll, hear, rng) -> np.ndarray:
    """Dilution factors at positions blurred by the previous accuracy."""
    psi, covered, _ = evaluate_allocation(plan, scenario, dll, powers, hear)
    default = 0.1 * max(
        scenario.layout.region[2] - scenario.layout.region[0],
        scenario.layout.region[3] - scenario.layout.region[1],
    )
    lam = np.empty((scenario.n_gnbs, scenario.n_pusers))
    for m_idx, user in enumerate(scenario.pusers):
        blur = psi[m_idx] if covered[m_idx] and np.isfinite(psi[m_idx]) else default
        shifted = user.as_array() + np.append(rng.normal(0.0, blur, size=2), 0.0)
        from .geometry import Position
        lam[:, m_idx] = dilution(scenario.gnbs, Position(*shifted)).dilution_factors
    return lam


# ---------------------------------------------------------------------------
# baseline


def equal_power(plan: SignalPlan, scenario: Scenario, dll: DllConfig,
                constraints: Constraints) -> AllocationReport:
    """Uniform per-station power, capped by the interference thresholds.

    Every user of station k gets budget/M, scaled down (uniformly over the
    whole network) until the tightest interference cap is met exactly.
    """
    gains = scenario.gains
    k_total, m_total = gains.n_gnbs, plan.n_pos
    budget = constraints.budget_vector(k_total)
    i_th, feasible = interference_threshold_matrix(plan, gains, constraints.qos_ber)
    p = np.repeat((budget / m_total)[:, None], m_total, axis=1)
    interference = interference_matrix(plan, gains, p)
    active = feasible & (interference > 0)
    if active.any():
        scale = float(np.min(i_th[active] / interference[active]))
        if scale < 1.0:
            p *= scale
    return _report(plan, scenario, dll, p, constraints.hear, 0, 0, True, [], None)


# ---------------------------------------------------------------------------
# dual function subgradient verification


def dual_function_check(plan: SignalPlan, scenario: Scenario, dll: DllConfig,
                        constraints: Constraints, duals_a: DualState,
                        duals_b: DualState, powers: np.ndarray,
                        n_grid: int = 24, flip_sign: bool = False) -> SubgradientCheck:
    """Verify the subgradient inequality of the per-station dual function.

    For each station the dual function is maximized by brute force over a
    power grid (other stations frozen at ``powers``); the constraint
    residuals at the maximizer must then be a valid subgradient, i.e.
    g(b) >= g(a) + s . (b - a) for every feasible pair of dual states.
    ``flip_sign`` negates the candidate subgradient (a negative control
    that must fail).  Intended for small instances: the grid is
    n_grid ** M points per station.
    """
    gains = scenario.gains
    k_total, m_total = gains.n_gnbs, plan.n_pos
    budget = constraints.budget_vector(k_total)
    hear = constraints.hear
    i_th, _ = interference_threshold_matrix(plan, gains, constraints.qos_ber)
    lam = _dilution_full(scenario)
    powers = np.asarray(powers, dtype=float)
    sigma_factor = _sigma_factor_matrix(plan, gains, powers, dll)
    own_j = _own_j_tensor(plan, gains)  # (K, N, M)

    slacks = np.empty(k_total)
    for k_idx in range(k_total):
        levels = np.geomspace(budget[k_idx] / m_total * 1e-3, budget[k_idx], n_grid)
        mesh = np.meshgrid(*([levels] * m_total), indexing="ij")
        rows = np.stack([g.ravel() for g in mesh], axis=1)  # (C, M)

        base = powers.copy()
        base[k_idx] = 0.0
        i_base = interference_matrix(plan, gains, base)[k_idx]  # (N,)
        i_all = i_base[None, :] + rows @ own_j[k_idx].T  # (C, N)

        obj = -((lam[k_idx] * sigma_factor[k_idx]) ** 2 / rows).sum(axis=1) / m_total
        recv = gains.pos[k_idx] * rows  # (C, M)
        other = _strongest_other_frozen(gains, powers, k_idx)  # (M,)
        hear_res = recv - hear.threshold * other[None, :]
        p_res = budget[k_idx] - rows.sum(axis=1)

        def g_of(d: DualState):
            vals = (obj
                    + (d.mu[k_idx][None, :] * (i_th[k_idx][None, :] - i_all)).sum(axis=1)
                    + d.nu[k_idx] * p_res
                    + (d.beta[k_idx][None, :] * hear_res).sum(axis=1))
            best = int(np.argmax(vals))
            return float(vals[best]), best

        g_a, best_a = g_of(duals_a)
        g_b, _ = g_of(duals_b)
        s_mu = i_th[k_idx] - i_all[best_a]
        s_nu = p_res[best_a]
        s_beta = hear_res[best_a]
        if flip_sign:
            s_mu, s_nu, s_beta = -s_mu, -s_nu, -s_beta
        predicted = (g_a
                     + float(np.dot(s_mu, duals_b.mu[k_idx] - duals_a.mu[k_idx]))
                     + s_nu * (duals_b.nu[k_idx] - duals_a.nu[k_idx])
                     + float(np.dot(s_beta, duals_b.beta[k_idx] - duals_a.beta[k_idx])))
        slacks[k_idx] = g_b - predicted

    return SubgradientCheck(passed=bool(np.all(slacks >= -1e-8)),
                            slack=float(slacks.min()),
                            station_slacks=slacks)


def _strongest_other_frozen(gains: ChannelGains, powers: np.ndarray, k_idx: int) -> np.ndarray:
    """(M,) strongest received power among stations other than k_idx."""
    recv = gains.pos * powers
    mask = np.ones(gains.n_gnbs, dtype=bool)
    mask[k_idx] = False
    if not mask.any():
        return np.zeros(gains.pos.shape[1])
    return recv[mask].max(axis=0)
