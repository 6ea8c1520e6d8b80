"""Domain types, validation and JSON serialization for energy market instances.

A market instance bundles the per-agent production profile with each agent's
consumption preference. Three preference families are supported:

* ``Quadratic(b, m)`` -- concave quadratic with curvature scale ``b`` and
  satiation load ``m`` (kW); marginal value is ``b * (m - x)``.
* ``PiecewiseLinear(beta, phi)`` -- linear at rate ``beta`` ($/kWh) up to the
  saturation load ``phi`` (kW), flat beyond it.
* ``Custom(value_fn, deriv_fn)`` -- caller-supplied strictly concave utility
  with its analytic derivative. Never differentiated numerically for solving.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Callable, Union


class ValidationError(ValueError):
    """Raised when an instance (or a file being loaded) violates invariants."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class Quadratic:
    """Quadratic preference: value b*(m*x - x^2/2), satiated at x = m."""

    b: float
    m: float

    def value(self, x: float) -> float:
        return -0.5 * self.b * x * x + self.m * self.b * x

    def deriv(self, x: float) -> float:
        return self.b * (self.m - x)


@dataclass(frozen=True)
class PiecewiseLinear:
    """Piece-wise linear preference: value min(beta*x, beta*phi)."""

    beta: float
    phi: float

    def value(self, x: float) -> float:
        return min(self.beta * x, self.phi * self.beta)


@dataclass(frozen=True)
class Custom:
    """Caller-provided strictly concave preference with analytic derivative."""

    value_fn: Callable[[float], float]
    deriv_fn: Callable[[float], float]

    def value(self, x: float) -> float:
        return self.value_fn(x)

    def deriv(self, x: float) -> float:
        return self.deriv_fn(x)


UtilityParams = Union[Quadratic, PiecewiseLinear, Custom]


class ModelKind(Enum):
    MTES = "mtes"
    MTES_ST = "mtes_st"


class Family(Enum):
    """Preference family of a whole instance, for solver dispatch."""

    QUADRATIC = "quadratic"
    PWL = "pwl"
    MIXED = "mixed"  # mixed families and/or Custom agents: generic solver only


@dataclass(frozen=True)
class MarketInstance:
    """Immutable market instance: production profile plus one preference per agent.

    Individual productions may be zero; only the total capacity must be
    positive. Construction performs no validation so that report-style
    checking (``validate_instance``) can inspect bad values.
    """

    production: tuple[float, ...]
    preferences: tuple[UtilityParams, ...]
    model: ModelKind = ModelKind.MTES

    @property
    def n(self) -> int:
        return len(self.production)

    @cached_property
    def capacity(self) -> float:
        """Total network production C = sum of all a_i."""
        return float(sum(self.production))

    @cached_property
    def family(self) -> Family:
        if all(isinstance(p, Quadratic) for p in self.preferences):
            return Family.QUADRATIC
        if all(isinstance(p, PiecewiseLinear) for p in self.preferences):
            return Family.PWL
        return Family.MIXED


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    violations: tuple[str, ...]

    def raise_if_invalid(self) -> None:
        if not self.ok:
            raise ValidationError(list(self.violations))


# Grid used for the strict-concavity spot check of Custom derivatives.
_CONCAVITY_GRID_POINTS = 17


def _check_custom_concavity(pref: Custom, scale: float, label: str) -> list[str]:
    """Sample deriv_fn on [0, 2*scale] and flag any non-decreasing step."""
    hi = 2.0 * max(1.0, scale)
    xs = [hi * k / (_CONCAVITY_GRID_POINTS - 1) for k in range(_CONCAVITY_GRID_POINTS)]
    try:
        ds = [float(pref.deriv_fn(x)) for x in xs]
    except Exception as exc:  # noqa: BLE001 - report, don't crash
        return [f"{label}: deriv_fn evaluation failed ({exc})"]
    for prev, cur in zip(ds, ds[1:]):
        if not cur < prev:
            return [f"{label}: deriv_fn not strictly decreasing (utility must be strictly concave)"]
    return []


def validate_instance(instance: MarketInstance) -> ValidationReport:
    """Check all instance invariants; returns a report instead of raising.

    Checks: n >= 1, length agreement between production and preferences,
    a_i >= 0 and finite, C > 0, positive family parameters, and strict
    concavity (on a sampled grid) for Custom preferences.
    """
    violations: list[str] = []
    n = len(instance.production)
    if n < 1:
        violations.append("n >= 1 required (empty agent list)")
    if len(instance.preferences) != n:
        violations.append(
            f"length mismatch: {n} productions vs {len(instance.preferences)} preferences"
        )
    for i, a in enumerate(instance.production):
        if not math.isfinite(a):
            violations.append(f"agent {i}: a must be finite")
        elif a < 0:
            violations.append(f"agent {i}: a must be non-negative")
    capacity = sum(a for a in instance.production if math.isfinite(a))
    if n >= 1 and not capacity > 0:
        violations.append("C > 0 required (total production must be positive)")

    for i, pref in enumerate(instance.preferences):
        if isinstance(pref, Quadratic):
            if not (math.isfinite(pref.b) and pref.b > 0):
                violations.append(f"agent {i}: b must be positive")
            if not (math.isfinite(pref.m) and pref.m > 0):
                violations.append(f"agent {i}: m must be positive")
        elif isinstance(pref, PiecewiseLinear):
            if not (math.isfinite(pref.beta) and pref.beta > 0):
                violations.append(f"agent {i}: beta must be positive")
            if not (math.isfinite(pref.phi) and pref.phi > 0):
                violations.append(f"agent {i}: phi must be positive")
        elif isinstance(pref, Custom):
            violations.extend(
                _check_custom_concavity(pref, capacity if capacity > 0 else 1.0, f"agent {i}")
            )
        else:
            violations.append(f"agent {i}: unknown preference type {type(pref).__name__}")

    return ValidationReport(ok=not violations, violations=tuple(violations))


class SolveMethod(Enum):
    CLOSED_FORM_QUADRATIC = "ClosedFormQuadratic"
    BREAKPOINT_PWL = "BreakpointPWL"
    BISECTION = "Bisection"


@dataclass(frozen=True)
class EquilibriumResult:
    """Equilibrium price and allocation, with solver diagnostics.

    ``e_star`` is populated for MTES-ST only. ``degenerate`` marks knife-edge
    instances where the equilibrium price is set-valued and a deterministic
    representative was chosen.
    """

    lambda_star: float
    x_star: tuple[float, ...]
    e_star: tuple[float, ...] | None
    method: SolveMethod
    balance_residual: float
    kkt_max_violation: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        out: dict = {
            "lambda_star": self.lambda_star,
            "x_star": list(self.x_star),
            "method": self.method.value,
            "diagnostics": {
                "balance_residual": self.balance_residual,
                "kkt_max_violation": self.kkt_max_violation,
                "degenerate": self.degenerate,
            },
        }
        if self.e_star is not None:
            out["e_star"] = list(self.e_star)
        return out


class BindingCondition(Enum):
    M_BELOW_CAPACITY_SHARE = "MBelowCapacityShare"
    B_MAX_BOUND = "BMaxBound"
    PHI_BELOW_CAPACITY_SHARE = "PhiBelowCapacityShare"
    BETA_MAX_BOUND = "BetaMaxBound"
    HOMOGENEOUS_DERIVATIVE = "HomogeneousDerivative"


@dataclass(frozen=True)
class ShapingQuery:
    """A box of candidate preference parameters tested against a price threshold.

    Exactly one bound family is set: (b_max, m_max) for quadratic boxes,
    (beta_max, phi_max) for piece-wise linear boxes, or ``theta`` for a
    homogeneous-preference query.
    """

    threshold: float
    n: int
    capacity: float
    b_max: float | None = None
    m_max: float | None = None
    beta_max: float | None = None
    phi_max: float | None = None
    theta: UtilityParams | None = None


@dataclass(frozen=True)
class ShapingVerdict:
    admissible: bool
    worst_case_lambda: float
    binding_condition: BindingCondition

    def to_dict(self) -> dict:
        return {
            "admissible": self.admissible,
            "worst_case_lambda": self.worst_case_lambda,
            "binding_condition": self.binding_condition.value,
        }


# ---------------------------------------------------------------------------
# JSON serialization
#
# Schema: {"model": "mtes"|"mtes_st",
#          "agents": [{"a": number, "utility": {"kind": "quadratic", "b":, "m":}
#                                 | {"kind": "pwl", "beta":, "phi":}}]}
# Unknown fields are rejected; NaN/Inf are rejected. Custom preferences have
# no file representation.
# ---------------------------------------------------------------------------


def _reject_constant(token: str) -> float:
    raise ValidationError([f"non-finite number not accepted: {token}"])


def _number(d: dict, field: str, agent: int) -> float:
    value = d[field]
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ValidationError([f"agent {agent}: '{field}' must be a number"])
    return float(value)


def _utility_from_dict(d: dict, agent: int) -> UtilityParams:
    if not isinstance(d, dict):
        raise ValidationError([f"agent {agent}: utility must be an object"])
    kind = d.get("kind")
    if kind == "quadratic":
        expected = {"kind", "b", "m"}
    elif kind == "pwl":
        expected = {"kind", "beta", "phi"}
    else:
        raise ValidationError([f"agent {agent}: unknown utility kind {kind!r}"])
    unknown = set(d) - expected
    if unknown:
        raise ValidationError([f"agent {agent}: unknown utility fields {sorted(unknown)}"])
    missing = expected - set(d)
    if missing:
        raise ValidationError([f"agent {agent}: missing utility fields {sorted(missing)}"])
    if kind == "quadratic":
        return Quadratic(b=_number(d, "b", agent), m=_number(d, "m", agent))
    return PiecewiseLinear(beta=_number(d, "beta", agent), phi=_number(d, "phi", agent))


def instance_from_dict(data: dict) -> MarketInstance:
    """Build and validate a MarketInstance from parsed JSON data."""
    if not isinstance(data, dict):
        raise ValidationError(["top-level value must be an object"])
    unknown = set(data) - {"model", "agents"}
    if unknown:
        raise ValidationError([f"unknown fields {sorted(unknown)}"])
    model_raw = data.get("model", "mtes")
    try:
        model = ModelKind(model_raw)
    except ValueError:
        raise ValidationError([f"model must be 'mtes' or 'mtes_st', got {model_raw!r}"]) from None
    agents = data.get("agents")
    if not isinstance(agents, list):
        raise ValidationError(["'agents' must be a list"])

    production: list[float] = []
    preferences: list[UtilityParams] = []
    for i, entry in enumerate(agents):
        if not isinstance(entry, dict):
            raise ValidationError([f"agent {i}: must be an object"])
        unknown = set(entry) - {"a", "utility"}
        if unknown:
            raise ValidationError([f"agent {i}: unknown fields {sorted(unknown)}"])
        if "a" not in entry or "utility" not in entry:
            raise ValidationError([f"agent {i}: requires fields 'a' and 'utility'"])
        if not isinstance(entry["a"], (int, float)) or isinstance(entry["a"], bool):
            raise ValidationError([f"agent {i}: 'a' must be a number"])
        production.append(float(entry["a"]))
        preferences.append(_utility_from_dict(entry["utility"], i))

    instance = MarketInstance(
        production=tuple(production), preferences=tuple(preferences), model=model
    )
    validate_instance(instance).raise_if_invalid()
    return instance


def instance_to_dict(instance: MarketInstance) -> dict:
    agents = []
    for a, pref in zip(instance.production, instance.preferences):
        if isinstance(pref, Quadratic):
            utility = {"kind": "quadratic", "b": float(pref.b), "m": float(pref.m)}
        elif isinstance(pref, PiecewiseLinear):
            utility = {"kind": "pwl", "beta": float(pref.beta), "phi": float(pref.phi)}
        else:
            raise ValidationError(["Custom preferences have no file representation"])
        agents.append({"a": float(a), "utility": utility})
    return {"model": instance.model.value, "agents": agents}


def load_instance(path: str) -> MarketInstance:
    """Load, parse and validate an instance file.

    Raises ValidationError with field context on malformed input.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh, parse_constant=_reject_constant)
        except json.JSONDecodeError as exc:
            raise ValidationError([f"parse error at line {exc.lineno} col {exc.colno}: {exc.msg}"]) from None
    return instance_from_dict(data)


def save_instance(instance: MarketInstance, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(instance_to_dict(instance), fh, indent=2, allow_nan=False)
        fh.write("\n")
