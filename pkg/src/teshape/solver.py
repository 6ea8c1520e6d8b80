"""Equilibrium price and allocation solvers.

Three routes to the market-clearing price:

* exact water-filling over sorted drop-out prices for all-quadratic instances,
* breakpoint search over sorted marginal rates for all-piecewise-linear
  instances,
* monotone bisection on the aggregate-demand balance for any mix of strictly
  concave differentiable preferences (quadratic and custom; PWL is excluded
  because its utility is not differentiable at the saturation load).

Trading-model instances reduce to the plain market: when the plain-market
price is positive the trading equilibrium is identical with e = a - x, and
when it is non-positive the trading price floors at zero with satiation
allocations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .model import (
    Custom,
    EquilibriumResult,
    Family,
    MarketInstance,
    ModelKind,
    PiecewiseLinear,
    Quadratic,
    SolveMethod,
    UtilityParams,
    ValidationError,
    validate_instance,
)


class SolverError(RuntimeError):
    pass


class BracketFailure(SolverError):
    """No sign change found for the demand-balance residual within the
    expanding price bracket; indicates a non-concave or non-monotone custom
    preference."""


class ConvergenceFailure(SolverError):
    """Bisection exhausted its iteration budget before meeting tolerances."""


@dataclass(frozen=True)
class SolverConfig:
    """Numerical tolerances for the solvers.

    ``balance_tol`` of None resolves to 1e-9 * max(1, C) per instance.
    ``lambda_tol`` is the absolute width at which the price bracket stops.
    """

    balance_tol: float | None = None
    lambda_tol: float = 1e-10
    max_bisection_iters: int = 200

    def __post_init__(self) -> None:
        if self.balance_tol is not None and not self.balance_tol > 0:
            raise ValueError("balance_tol must be positive")
        if not self.lambda_tol > 0:
            raise ValueError("lambda_tol must be positive")
        if self.max_bisection_iters < 1:
            raise ValueError("max_bisection_iters must be >= 1")

    def resolved_balance_tol(self, capacity: float) -> float:
        if self.balance_tol is not None:
            return self.balance_tol
        return 1e-9 * max(1.0, capacity)


DEFAULT_CONFIG = SolverConfig()


# ---------------------------------------------------------------------------
# Per-agent best responses
# ---------------------------------------------------------------------------


def quadratic_best_response(b: float, m: float, lam: float) -> float:
    """Payoff-maximizing consumption of a quadratic agent at price ``lam``.

    Equals max(m - lam/b, 0): the unconstrained stationary point, clipped at
    zero once the price exceeds the agent's maximum marginal value m*b.
    """
    if not (b > 0 and m > 0):
        raise ValidationError(["quadratic_best_response requires b > 0 and m > 0"])
    return max(m - lam / b, 0.0)


@dataclass(frozen=True)
class ResponseInterval:
    """Closed interval [lo, hi] of optimal consumptions; hi may be +inf."""

    lo: float
    hi: float

    def contains(self, x: float, tol: float = 0.0) -> bool:
        return self.lo - tol <= x <= self.hi + tol

    def distance(self, x: float) -> float:
        return max(self.lo - x, x - self.hi, 0.0)


def pwl_best_response(beta: float, phi: float, lam: float) -> ResponseInterval:
    """Optimal-consumption correspondence of a piece-wise linear agent.

    At zero price anything from the saturation load up is optimal; below the
    marginal rate exactly the saturation load; at the marginal rate the agent
    is indifferent on [0, phi]; above it the agent drops out.
    """
    if not (beta > 0 and phi > 0):
        raise ValidationError(["pwl_best_response requires beta > 0 and phi > 0"])
    if lam < 0:
        raise ValidationError(["pwl_best_response requires lam >= 0"])
    if lam == 0:
        return ResponseInterval(phi, math.inf)
    if lam < beta:
        return ResponseInterval(phi, phi)
    if lam == beta:
        return ResponseInterval(0.0, phi)
    return ResponseInterval(0.0, 0.0)


def _inverse_marginal(pref: UtilityParams, lam: float, scale: float) -> float:
    """Consumption at which the marginal value meets ``lam``, clipped at 0.

    Closed form for quadratic agents; expanding bisection on the derivative
    for custom agents. If the derivative never falls to ``lam`` within the
    expansion cap the cap is returned (demand effectively unbounded there).
    """
    if isinstance(pref, Quadratic):
        return max(pref.m - lam / pref.b, 0.0)
    if not isinstance(pref, Custom):
        raise ValidationError(["demand inversion requires a differentiable preference"])
    if pref.deriv(0.0) <= lam:
        return 0.0
    hi = max(1.0, scale)
    for _ in range(80):
        if pref.deriv(hi) <= lam:
            break
        hi *= 2.0
    else:
        return hi
    lo = 0.0
    while hi - lo > 1e-14 * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if pref.deriv(mid) > lam:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class AggregateDemand:
    """Price-to-demand maps for differentiable preferences.

    ``breakpoints[i]`` is the price at which agent i's demand reaches zero,
    i.e. its marginal value at zero consumption.
    """

    preferences: tuple[UtilityParams, ...]
    scale: float

    def __post_init__(self) -> None:
        for p in self.preferences:
            if isinstance(p, PiecewiseLinear):
                raise ValidationError(
                    ["aggregate demand is defined for differentiable preferences only"]
                )

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return tuple(p.deriv(0.0) for p in self.preferences)

    def agent(self, i: int, lam: float) -> float:
        return _inverse_marginal(self.preferences[i], lam, self.scale)

    def total(self, lam: float) -> float:
        return sum(_inverse_marginal(p, lam, self.scale) for p in self.preferences)


# ---------------------------------------------------------------------------
# Instance solvers (plain market)
# ---------------------------------------------------------------------------


def _require(instance: MarketInstance, family: Family | None) -> None:
    validate_instance(instance).raise_if_invalid()
    if family is not None and instance.family is not family:
        raise ValidationError(
            [f"solver requires a homogeneous {family.value} instance, got {instance.family.value}"]
        )


def _quadratic_arrays(instance: MarketInstance) -> tuple[np.ndarray, np.ndarray]:
    n = instance.n
    b = np.fromiter((p.b for p in instance.preferences), dtype=float, count=n)
    m = np.fromiter((p.m for p in instance.preferences), dtype=float, count=n)
    return b, m


def solve_mtes_quadratic(
    instance: MarketInstance, cfg: SolverConfig = DEFAULT_CONFIG
) -> EquilibriumResult:
    """Exact water-filling for all-quadratic instances.

    When total satiation does not exceed capacity every agent stays active and
    the price (possibly negative) comes from one linear equation. Otherwise
    the drop-out prices m_i*b_i are sorted and the price is solved on the
    unique segment where aggregate demand crosses capacity. Equal drop-out
    prices are grouped exactly, never perturbed.
    """
    _require(instance, Family.QUADRATIC)
    b, m = _quadratic_arrays(instance)
    capacity = instance.capacity
    sum_m = float(np.sum(m))

    if sum_m <= capacity:
        lam = (sum_m - capacity) / float(np.sum(1.0 / b))
    else:
        drop = m * b
        order = np.argsort(drop, kind="stable")
        drop_s = drop[order]
        m_s = m[order]
        binv_s = 1.0 / b[order]
        # suffix sums over the sorted agents: demand of actives {drop > u}
        suf_m = np.concatenate([np.cumsum(m_s[::-1])[::-1], [0.0]])
        suf_binv = np.concatenate([np.cumsum(binv_s[::-1])[::-1], [0.0]])
        starts = np.flatnonzero(np.concatenate([[True], drop_s[1:] != drop_s[:-1]]))
        ends = np.concatenate([starts[1:], [len(drop_s)]])
        demand_at_kink = suf_m[ends] - drop_s[starts] * suf_binv[ends]
        g = int(np.argmax(demand_at_kink <= capacity))  # first kink at/below capacity
        j = starts[g]  # actives on the crossing segment: sorted indices >= j
        lam = (suf_m[j] - capacity) / suf_binv[j]

    x = np.maximum(m - lam / b, 0.0)
    residual = abs(float(np.sum(x)) - capacity)
    result = EquilibriumResult(
        lambda_star=float(lam),
        x_star=tuple(x.tolist()),
        e_star=None,
        method=SolveMethod.CLOSED_FORM_QUADRATIC,
        balance_residual=residual,
        kkt_max_violation=math.nan,
    )
    return _with_kkt(instance, result, cfg)


def _pwl_arrays(instance: MarketInstance) -> tuple[np.ndarray, np.ndarray]:
    n = instance.n
    beta = np.fromiter((p.beta for p in instance.preferences), dtype=float, count=n)
    phi = np.fromiter((p.phi for p in instance.preferences), dtype=float, count=n)
    return beta, phi


def _pwl_zero_price_allocation(phi: np.ndarray, capacity: float) -> np.ndarray:
    # Equal split of the surplus keeps every agent at or above saturation.
    return phi + (capacity - float(np.sum(phi))) / len(phi)


def solve_mtes_pwl(
    instance: MarketInstance, cfg: SolverConfig = DEFAULT_CONFIG
) -> EquilibriumResult:
    """Breakpoint search for all-piecewise-linear instances.

    With total saturation below capacity the price is zero and the surplus is
    split equally. Otherwise agents are scanned by marginal rate, descending;
    the price is the first rate at which the saturated demand above it stays
    within capacity, and the marginal tier shares the remainder in proportion
    to saturation loads. The exact-saturation boundary is priced at zero and
    flagged degenerate (the equilibrium price is set-valued there).
    """
    _require(instance, Family.PWL)
    beta, phi = _pwl_arrays(instance)
    capacity = instance.capacity
    n = instance.n
    sum_phi = float(np.sum(phi))
    degenerate = False

    if sum_phi <= capacity:
        lam = 0.0
        degenerate = sum_phi == capacity
        x = _pwl_zero_price_allocation(phi, capacity)
    else:
        order = np.argsort(-beta, kind="stable")
        beta_s = beta[order]
        phi_s = phi[order]
        cum_phi = np.cumsum(phi_s)
        starts = np.flatnonzero(np.concatenate([[True], beta_s[1:] != beta_s[:-1]]))
        ends = np.concatenate([starts[1:], [n]])
        incl = cum_phi[ends - 1]  # saturated demand of tiers at or above each rate
        excl = np.concatenate([[0.0], incl[:-1]])
        g = int(np.argmax(incl >= capacity))  # first tier whose inclusive demand covers C
        lam = float(beta_s[starts[g]])
        remainder = capacity - float(excl[g])
        tier = slice(starts[g], ends[g])
        tier_total = float(incl[g] - excl[g])
        x_s = np.zeros(n)
        x_s[: starts[g]] = phi_s[: starts[g]]
        x_s[tier] = phi_s[tier] * (remainder / tier_total)
        x = np.empty(n)
        x[order] = x_s

    residual = abs(float(np.sum(x)) - capacity)
    result = EquilibriumResult(
        lambda_star=lam,
        x_star=tuple(x.tolist()),
        e_star=None,
        method=SolveMethod.BREAKPOINT_PWL,
        balance_residual=residual,
        kkt_max_violation=math.nan,
        degenerate=degenerate,
    )
    return _with_kkt(instance, result, cfg)


def solve_mtes_generic(
    instance: MarketInstance, cfg: SolverConfig = DEFAULT_CONFIG
) -> EquilibriumResult:
    """Bisection on the aggregate-demand balance for differentiable preferences.

    The initial bracket is [0, max marginal value at zero consumption], where
    demand is respectively at least the satiation total and exactly zero; if
    demand at zero price falls short of capacity the lower end expands into
    negative prices until the balance residual changes sign. Iterates until
    the bracket is narrower than ``lambda_tol`` and the balance residual is
    within ``balance_tol``.
    """
    validate_instance(instance).raise_if_invalid()
    if any(isinstance(p, PiecewiseLinear) for p in instance.preferences):
        raise ValidationError(
            ["bisection requires differentiable preferences; use the PWL solver instead"]
        )
    capacity = instance.capacity
    balance_tol = cfg.resolved_balance_tol(capacity)
    demand = AggregateDemand(preferences=instance.preferences, scale=capacity)

    def gap(lam: float) -> float:
        return demand.total(lam) - capacity

    hi = max(demand.breakpoints)
    if hi <= 0:
        hi = 1.0
    if gap(hi) > 0:
        raise BracketFailure(
            "aggregate demand positive at the zero-demand price; derivative not decreasing"
        )
    lo = 0.0
    if gap(lo) < 0:
        width = max(1.0, abs(hi))
        found = False
        for _ in range(80):
            lo -= width
            width *= 2.0
            if gap(lo) >= 0:
                found = True
                break
        if not found:
            raise BracketFailure("no sign change within the expanding negative bracket")

    lam = 0.5 * (lo + hi)
    converged = False
    for _ in range(cfg.max_bisection_iters):
        lam = 0.5 * (lo + hi)
        g = gap(lam)
        if g > 0:
            lo = lam
        else:
            hi = lam
        if hi - lo <= cfg.lambda_tol and abs(g) <= balance_tol:
            converged = True
            break
    if not converged:
        raise ConvergenceFailure(
            f"bisection did not meet tolerances in {cfg.max_bisection_iters} iterations"
        )

    x = np.array([demand.agent(i, lam) for i in range(instance.n)])
    residual = abs(float(np.sum(x)) - capacity)
    result = EquilibriumResult(
        lambda_star=float(lam),
        x_star=tuple(x.tolist()),
        e_star=None,
        method=SolveMethod.BISECTION,
        balance_residual=residual,
        kkt_max_violation=math.nan,
    )
    return _with_kkt(instance, result, cfg)


def _solve_plain(
    instance: MarketInstance, cfg: SolverConfig, method: str
) -> EquilibriumResult:
    family = instance.family
    if method == "closed":
        if family is Family.QUADRATIC:
            return solve_mtes_quadratic(instance, cfg)
        if family is Family.PWL:
            return solve_mtes_pwl(instance, cfg)
        raise ValidationError(["closed form requires homogeneous family"])
    if method == "bisect":
        return solve_mtes_generic(instance, cfg)
    if method == "auto":
        if family is Family.QUADRATIC:
            return solve_mtes_quadratic(instance, cfg)
        if family is Family.PWL:
            return solve_mtes_pwl(instance, cfg)
        return solve_mtes_generic(instance, cfg)
    raise ValidationError([f"unknown method {method!r}"])


def _zero_price_satiation(instance: MarketInstance) -> np.ndarray:
    """Per-agent optimal consumption at a zero price (satiation loads)."""
    if instance.family is Family.PWL:
        _, phi = _pwl_arrays(instance)
        return _pwl_zero_price_allocation(phi, instance.capacity)
    capacity = instance.capacity
    return np.array(
        [_inverse_marginal(p, 0.0, capacity) for p in instance.preferences], dtype=float
    )


def solve_mtes_st(
    instance: MarketInstance, cfg: SolverConfig = DEFAULT_CONFIG, method: str = "auto"
) -> EquilibriumResult:
    """Solve a trading-model instance via its plain-market counterpart.

    A positive plain-market price carries over unchanged with trades
    e = a - x. Otherwise the price floors at zero: agents consume their
    satiation loads and the production surplus is returned equally through
    the trade vector, keeping the total trade at zero and every x + e <= a.
    ``balance_residual`` reports |sum of trades| for trading instances.
    """
    if instance.model is not ModelKind.MTES_ST:
        raise ValidationError(["solve_mtes_st requires an MTES-ST instance"])
    plain = replace(instance, model=ModelKind.MTES)
    base = _solve_plain(plain, cfg, method)
    a = np.asarray(instance.production, dtype=float)
    capacity = instance.capacity

    if base.lambda_star > 0:
        x = np.asarray(base.x_star)
        e = a - x
        lam = base.lambda_star
        degenerate = base.degenerate
    else:
        x = _zero_price_satiation(plain)
        surplus_share = (capacity - float(np.sum(x))) / instance.n
        e = a - x - surplus_share
        lam = 0.0
        degenerate = base.degenerate
    result = EquilibriumResult(
        lambda_star=float(lam),
        x_star=tuple(np.asarray(x).tolist()),
        e_star=tuple(e.tolist()),
        method=base.method,
        balance_residual=abs(float(np.sum(e))),
        kkt_max_violation=math.nan,
        degenerate=degenerate,
    )
    return _with_kkt(instance, result, cfg)


def solve(
    instance: MarketInstance, cfg: SolverConfig = DEFAULT_CONFIG, method: str = "auto"
) -> EquilibriumResult:
    """Dispatch to the right solver for the instance's model and family."""
    if instance.model is ModelKind.MTES_ST:
        return solve_mtes_st(instance, cfg, method)
    return _solve_plain(instance, cfg, method)


# ---------------------------------------------------------------------------
# Optimality verification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KktReport:
    """Distances to per-agent optimality and to the balance constraints.

    ``stationarity[i]`` is the consumption-space distance from x_i to agent
    i's best-response set at the reported price. ``feasibility[i]`` covers
    x_i >= 0 and, for trading instances, x_i + e_i <= a_i. The balance
    violation is |sum x - C| for the plain market and |sum e| for trading.
    """

    stationarity: tuple[float, ...]
    feasibility: tuple[float, ...]
    balance_violation: float
    price_violation: float
    max_violation: float

    def ok(self, tol: float = 1e-6) -> bool:
        return self.max_violation <= tol


def _stationarity_distance(
    pref: UtilityParams, lam: float, x: float, scale: float, zero_price: bool
) -> float:
    """Distance from x to the best-response set at price lam (one agent)."""
    if isinstance(pref, PiecewiseLinear):
        eq_tol = 1e-9 * max(1.0, pref.beta)
        if lam <= eq_tol:
            return max(pref.phi - x, 0.0)
        if lam > pref.beta + eq_tol:
            return abs(x)
        if lam >= pref.beta - eq_tol:
            return ResponseInterval(0.0, pref.phi).distance(x)
        return abs(x - pref.phi)
    if zero_price and isinstance(pref, Custom):
        # satiation may sit past the inversion cap; measure in gradient units
        d = pref.deriv(x)
        return abs(d) if x > 0 else max(0.0, -d)
    return abs(x - _inverse_marginal(pref, lam, scale))


def verify_kkt(
    instance: MarketInstance,
    result: EquilibriumResult,
    cfg: SolverConfig = DEFAULT_CONFIG,
) -> KktReport:
    """Check a result against the equilibrium conditions of its instance.

    Report-style: never raises on a bad result, just measures violations.
    """
    capacity = instance.capacity
    lam = result.lambda_star
    x = np.asarray(result.x_star, dtype=float)
    n = instance.n
    is_st = instance.model is ModelKind.MTES_ST
    zero_price = is_st and lam <= cfg.lambda_tol

    if instance.family is Family.QUADRATIC:
        b, m = _quadratic_arrays(instance)
        br = np.maximum(m - lam / b, 0.0) if not zero_price else m
        stationarity = np.abs(x - br)
    elif instance.family is Family.PWL and not zero_price:
        beta, phi = _pwl_arrays(instance)
        eq_tol = 1e-9 * np.maximum(1.0, beta)
        zero = lam <= eq_tol
        above = (~zero) & (lam > beta + eq_tol)
        at = (~zero) & (~above) & (lam >= beta - eq_tol)
        stationarity = np.where(
            zero,
            np.maximum(phi - x, 0.0),
            np.where(
                above,
                np.abs(x),
                np.where(
                    at,
                    np.maximum(np.maximum(-x, x - phi), 0.0),
                    np.abs(x - phi),
                ),
            ),
        )
    else:
        stationarity = np.array(
            [
                _stationarity_distance(p, lam, float(xi), capacity, zero_price)
                for p, xi in zip(instance.preferences, x)
            ]
        )

    feasibility = np.maximum(-x, 0.0)
    price_violation = 0.0
    if is_st:
        e = np.asarray(result.e_star, dtype=float) if result.e_star is not None else None
        if e is None:
            balance_violation = math.inf
        else:
            a = np.asarray(instance.production, dtype=float)
            balance_violation = abs(float(np.sum(e)))
            trade_cap = np.maximum(x + e - a, 0.0)
            if lam > cfg.lambda_tol:
                # positive price forces the trading constraint active
                trade_cap = np.abs(x + e - a)
            feasibility = np.maximum(feasibility, trade_cap)
        price_violation = max(0.0, -lam)
    else:
        balance_violation = abs(float(np.sum(x)) - capacity)

    max_violation = max(
        float(np.max(stationarity)) if n else 0.0,
        float(np.max(feasibility)) if n else 0.0,
        balance_violation,
        price_violation,
    )
    return KktReport(
        stationarity=tuple(np.asarray(stationarity).tolist()),
        feasibility=tuple(feasibility.tolist()),
        balance_violation=balance_violation,
        price_violation=price_violation,
        max_violation=max_violation,
    )


def _with_kkt(
    instance: MarketInstance, result: EquilibriumResult, cfg: SolverConfig
) -> EquilibriumResult:
    report = verify_kkt(instance, result, cfg)
    return replace(result, kkt_max_violation=report.max_violation)
