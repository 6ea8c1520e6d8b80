"""Seeded sampling plans, Monte Carlo batches, sweeps and box statistics.

Sampling conventions: production draws come from a normal (mean 5, sd 1.25)
rejected outside [0, 10]; agent-one parameters pin the box corner (the
curvature bound is backed out of the admissibility boundary for quadratic
batches, the marginal rate equals the threshold for PWL batches); remaining
agents draw uniformly from half-open intervals (0, upper] so zero is excluded
exactly. Every batch is checked for admissibility before it is solved.

Per-trial generators derive from (seed, cell, trial) so trials are
independent, order-insensitive and reproducible bit-for-bit.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import __version__
from .model import (
    MarketInstance,
    PiecewiseLinear,
    Quadratic,
    ShapingQuery,
    ValidationError,
)
from .shaping import check_pwl_set, check_quadratic_set
from .solver import DEFAULT_CONFIG, SolverConfig, solve_mtes_pwl, solve_mtes_quadratic

QUARTILE_CONVENTION = "linear interpolation between order statistics"


class EmptyInput(ValueError):
    pass


@dataclass(frozen=True)
class BoxStats:
    """Five-number summary with 1.5*IQR whiskers; points beyond are outliers."""

    median: float
    q25: float
    q75: float
    whisker_low: float
    whisker_high: float
    outliers: tuple[float, ...]


def box_stats(values) -> BoxStats:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise EmptyInput("box_stats requires a non-empty list")
    q25, median, q75 = np.percentile(arr, [25.0, 50.0, 75.0])
    iqr = q75 - q25
    lo_fence = q25 - 1.5 * iqr
    hi_fence = q75 + 1.5 * iqr
    inside = arr[(arr >= lo_fence) & (arr <= hi_fence)]
    assert inside.size > 0
    outliers = arr[(arr < lo_fence) | (arr > hi_fence)]
    return BoxStats(
        median=float(median),
        q25=float(q25),
        q75=float(q75),
        whisker_low=float(inside.min()),
        whisker_high=float(inside.max()),
        outliers=tuple(sorted(float(v) for v in outliers)),
    )


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

PRODUCTION_MEAN = 5.0
PRODUCTION_SD = 1.25
PRODUCTION_RANGE = (0.0, 10.0)


def sample_production(n: int, rng: np.random.Generator) -> np.ndarray:
    """n production draws, normal(5, 1.25) rejected outside [0, 10]."""
    if n < 1:
        raise ValidationError(["n >= 1 required"])
    lo, hi = PRODUCTION_RANGE
    out = np.empty(n)
    filled = 0
    while filled < n:
        draw = rng.normal(PRODUCTION_MEAN, PRODUCTION_SD, size=n - filled)
        keep = draw[(draw >= lo) & (draw <= hi)]
        out[filled : filled + keep.size] = keep
        filled += keep.size
    return out


def _half_open_uniform(upper: float, size: int, rng: np.random.Generator) -> np.ndarray:
    # (0, upper]: map U[0,1) through upper*(1-U) so zero is excluded exactly
    return upper * (1.0 - rng.random(size))


def sample_quadratic_params(
    n: int, capacity: float, lambda_dagger: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Quadratic batch with agent one on the admissibility boundary.

    m_1 is uniform on [C/n, 100C/n] (resampled off the degenerate lower
    endpoint), b_1 = n*threshold / (n*m_1 - C), and everyone else draws from
    (0, b_1] x (0, m_1].
    """
    share = capacity / n
    m1 = rng.uniform(share, 100.0 * share)
    while m1 <= share:
        m1 = rng.uniform(share, 100.0 * share)
    b1 = n * lambda_dagger / (n * m1 - capacity)
    b = np.empty(n)
    m = np.empty(n)
    b[0], m[0] = b1, m1
    b[1:] = _half_open_uniform(b1, n - 1, rng)
    m[1:] = _half_open_uniform(m1, n - 1, rng)
    return b, m


def sample_pwl_params(
    n: int, capacity: float, lambda_dagger: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """PWL batch with agent one's marginal rate at the threshold.

    phi_1 draws from a normal rejected outside [C/n, 10C/n] (centered on the
    interval, sd a quarter of its width); the rest draw from
    (0, beta_1] x (0, phi_1].
    """
    share = capacity / n
    lo, hi = share, 10.0 * share
    mu, sd = 0.5 * (lo + hi), 0.25 * (hi - lo)
    phi1 = rng.normal(mu, sd)
    while not (lo <= phi1 <= hi):
        phi1 = rng.normal(mu, sd)
    beta1 = lambda_dagger
    beta = np.empty(n)
    phi = np.empty(n)
    beta[0], phi[0] = beta1, phi1
    beta[1:] = _half_open_uniform(beta1, n - 1, rng)
    phi[1:] = _half_open_uniform(phi1, n - 1, rng)
    return beta, phi


# ---------------------------------------------------------------------------
# Monte Carlo batches
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentSpec:
    """A sampling plan: K trials per cell, cells over thresholds or scales."""

    family: str  # "quadratic" | "pwl"
    n: int
    trials: int
    lambda_dagger: float | tuple[float, ...]
    seed: int
    scale_list: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.family not in ("quadratic", "pwl"):
            raise ValidationError([f"family must be 'quadratic' or 'pwl', got {self.family!r}"])
        if self.n < 1 or self.trials < 1:
            raise ValidationError(["n >= 1 and trials >= 1 required"])
        thresholds = (
            self.lambda_dagger
            if isinstance(self.lambda_dagger, tuple)
            else (self.lambda_dagger,)
        )
        if any(not t > 0 for t in thresholds):
            raise ValidationError(["lambda_dagger must be positive"])
        if not 0 <= self.seed < 2**64:
            raise ValidationError(["seed must be a non-negative 64-bit integer"])
        if self.scale_list is not None:
            if isinstance(self.lambda_dagger, tuple):
                raise ValidationError(["scale study requires a single lambda_dagger"])
            if any(v < 1 for v in self.scale_list):
                raise ValidationError(["scale_list entries must be >= 1"])

    @staticmethod
    def from_dict(data: dict) -> ExperimentSpec:
        unknown = set(data) - {"family", "n", "trials", "lambda_dagger", "seed", "scale_list"}
        if unknown:
            raise ValidationError([f"unknown spec fields {sorted(unknown)}"])
        lam = data["lambda_dagger"]
        scale = data.get("scale_list")
        return ExperimentSpec(
            family=data["family"],
            n=int(data["n"]),
            trials=int(data["trials"]),
            lambda_dagger=tuple(float(v) for v in lam) if isinstance(lam, list) else float(lam),
            seed=int(data["seed"]),
            scale_list=tuple(int(v) for v in scale) if scale is not None else None,
        )

    @staticmethod
    def load(path: str) -> ExperimentSpec:
        with open(path, "r", encoding="utf-8") as fh:
            return ExperimentSpec.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        lam = list(self.lambda_dagger) if isinstance(self.lambda_dagger, tuple) else self.lambda_dagger
        out = {
            "family": self.family,
            "n": self.n,
            "trials": self.trials,
            "lambda_dagger": lam,
            "seed": self.seed,
        }
        if self.scale_list is not None:
            out["scale_list"] = list(self.scale_list)
        return out

    def cells(self) -> list[tuple[str, int, float]]:
        """(cell_key, n, lambda_dagger) triples, one per batch of trials."""
        if self.scale_list is not None:
            lam = float(self.lambda_dagger)  # type: ignore[arg-type]
            return [(f"n={n}", n, lam) for n in self.scale_list]
        thresholds = (
            self.lambda_dagger
            if isinstance(self.lambda_dagger, tuple)
            else (self.lambda_dagger,)
        )
        return [(f"lambda_dagger={lam:g}", self.n, float(lam)) for lam in thresholds]


@dataclass(frozen=True)
class CellResult:
    key: str
    n: int
    lambda_dagger: float
    stats: BoxStats
    prices: tuple[float, ...]


@dataclass(frozen=True)
class MonteCarloResult:
    spec: ExperimentSpec
    cells: tuple[CellResult, ...]

    def write(self, out_dir: str) -> None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "results.csv"), "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["cell_key", "trial", "seed", "lambda_star"])
            for cell in self.cells:
                for trial, price in enumerate(cell.prices):
                    writer.writerow([cell.key, trial, self.spec.seed, repr(price)])
        with open(os.path.join(out_dir, "stats.csv"), "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["cell_key", "median", "q25", "q75", "wlo", "whi", "n_outliers"])
            for cell in self.cells:
                s = cell.stats
                writer.writerow(
                    [
                        cell.key,
                        repr(s.median),
                        repr(s.q25),
                        repr(s.q75),
                        repr(s.whisker_low),
                        repr(s.whisker_high),
                        len(s.outliers),
                    ]
                )
        with open(os.path.join(out_dir, "metadata.json"), "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "spec": self.spec.to_dict(),
                    "seed": self.spec.seed,
                    "quartile_convention": QUARTILE_CONVENTION,
                    "library_version": __version__,
                },
                fh,
                indent=2,
            )
            fh.write("\n")


def _run_trial(
    spec: ExperimentSpec, cell_index: int, trial: int, n: int, lam_dagger: float,
    cfg: SolverConfig,
) -> float:
    rng = np.random.default_rng(np.random.SeedSequence((spec.seed, cell_index, trial)))
    a = sample_production(n, rng)
    capacity = float(np.sum(a))
    if spec.family == "quadratic":
        b, m = sample_quadratic_params(n, capacity, lam_dagger, rng)
        verdict = check_quadratic_set(
            ShapingQuery(
                threshold=lam_dagger, n=n, capacity=capacity, b_max=float(b[0]), m_max=float(m[0])
            )
        )
        if not verdict.admissible:
            raise RuntimeError(f"sampled batch not admissible (cell {cell_index}, trial {trial})")
        instance = MarketInstance(
            production=tuple(a.tolist()),
            preferences=tuple(map(Quadratic, b.tolist(), m.tolist())),
        )
        return solve_mtes_quadratic(instance, cfg).lambda_star
    beta, phi = sample_pwl_params(n, capacity, lam_dagger, rng)
    verdict = check_pwl_set(
        ShapingQuery(
            threshold=lam_dagger, n=n, capacity=capacity,
            beta_max=float(beta[0]), phi_max=float(phi[0]),
        )
    )
    if not verdict.admissible:
        raise RuntimeError(f"sampled batch not admissible (cell {cell_index}, trial {trial})")
    instance = MarketInstance(
        production=tuple(a.tolist()),
        preferences=tuple(map(PiecewiseLinear, beta.tolist(), phi.tolist())),
    )
    return solve_mtes_pwl(instance, cfg).lambda_star


def run_monte_carlo(
    spec: ExperimentSpec,
    out_dir: str | None = None,
    threads: int = 1,
    cfg: SolverConfig = DEFAULT_CONFIG,
) -> MonteCarloResult:
    """K trials per cell: sample, check admissibility, solve, summarize.

    Trials may run in parallel; aggregation orders by trial index so the
    output never depends on scheduling.
    """
    cells = []
    for cell_index, (key, n, lam_dagger) in enumerate(spec.cells()):
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                prices = list(
                    pool.map(
                        lambda t: _run_trial(spec, cell_index, t, n, lam_dagger, cfg),
                        range(spec.trials),
                    )
                )
        else:
            prices = [
                _run_trial(spec, cell_index, t, n, lam_dagger, cfg)
                for t in range(spec.trials)
            ]
        cells.append(
            CellResult(
                key=key,
                n=n,
                lambda_dagger=lam_dagger,
                stats=box_stats(prices),
                prices=tuple(prices),
            )
        )
    result = MonteCarloResult(spec=spec, cells=tuple(cells))
    if out_dir is not None:
        result.write(out_dir)
    return result


# ---------------------------------------------------------------------------
# Satiation sweep
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    value: float  # satiation load applied to the swept agent
    lambda_star: float
    x_agent: float


def run_satiation_sweep(
    base: MarketInstance,
    agent: int = -1,
    values=None,
    cfg: SolverConfig = DEFAULT_CONFIG,
) -> list[SweepRow]:
    """Re-solve a quadratic instance while one agent's satiation load varies.

    Defaults sweep the last agent over the integer grid 5..30 (26 points),
    holding everything else fixed.
    """
    if base.family.value != "quadratic":
        raise ValidationError(["satiation sweep requires an all-quadratic instance"])
    if values is None:
        values = [float(v) for v in range(5, 31)]
    values = list(values)
    if not values:
        raise ValidationError(["sweep requires at least one value"])
    idx = agent % base.n
    rows = []
    for value in values:
        prefs = list(base.preferences)
        prefs[idx] = replace(prefs[idx], m=float(value))
        swept = replace(base, preferences=tuple(prefs))
        result = solve_mtes_quadratic(swept, cfg)
        rows.append(
            SweepRow(value=float(value), lambda_star=result.lambda_star, x_agent=result.x_star[idx])
        )
    return rows


def sweep_to_csv(rows: list[SweepRow], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["m_agent", "lambda_star", "x_agent"])
        for row in rows:
            writer.writerow([repr(row.value), repr(row.lambda_star), repr(row.x_agent)])
