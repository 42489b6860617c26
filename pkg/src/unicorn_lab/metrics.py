"""Design quality and cost metrics.

Inaccuracy is the mean squared gap between served ranks and ideal ranks;
position error profiles condition that gap on the ideal position. The
closed-form cost expressions mirror what the designs' ledgers measure,
and the bound report checks empirical conditional bias/variance of served
ranks against the full-mixing theoretical envelopes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .allocation import RampFractions, validate_fractions
from .core import ItemId
from .designs import DesignConfig, MixingMode

RankingPair = tuple[Mapping[ItemId, int], Mapping[ItemId, int]]


def _paired_deviations(pairs: Iterable[RankingPair]) -> tuple[np.ndarray, np.ndarray]:
    ideals: list[int] = []
    devs: list[int] = []
    for design_ranks, ideal_ranks in pairs:
        if set(design_ranks) != set(ideal_ranks):
            raise ValueError("design and ideal rankings must cover the same items")
        for item, r_star in ideal_ranks.items():
            ideals.append(r_star)
            devs.append(design_ranks[item] - r_star)
    if not ideals:
        raise ValueError("no (design, ideal) ranking pairs supplied")
    return np.asarray(ideals, dtype=np.int64), np.asarray(devs, dtype=np.float64)


def inaccuracy(pairs: Iterable[RankingPair]) -> float:
    """Mean over all (item, session) pairs of the squared rank deviation."""
    _, devs = _paired_deviations(pairs)
    return float(np.mean(devs**2))


def inaccuracy_from_arrays(ideal: np.ndarray, design: np.ndarray) -> float:
    """Array fast path used by the batched sweeps."""
    d = np.asarray(design, dtype=np.float64) - np.asarray(ideal, dtype=np.float64)
    return float(np.mean(d * d))


@dataclass(frozen=True)
class PositionStats:
    count: int
    mae: float
    rmse: float


@dataclass(frozen=True)
class PositionErrorProfile:
    """Per-ideal-position MAE/RMSE; positions with no samples are absent."""

    by_position: dict[int, PositionStats]

    @property
    def positions(self) -> list[int]:
        return sorted(self.by_position)

    def overall_rmse(self) -> float:
        """Count-weighted root mean squared error across positions."""
        num = sum(s.count * s.rmse**2 for s in self.by_position.values())
        den = sum(s.count for s in self.by_position.values())
        return float(np.sqrt(num / den))

    def mean_squared_error(self) -> float:
        num = sum(s.count * s.rmse**2 for s in self.by_position.values())
        den = sum(s.count for s in self.by_position.values())
        return num / den

    def to_rows(self) -> list[dict]:
        return [
            {"position": pos, "count": s.count, "mae": s.mae, "rmse": s.rmse}
            for pos, s in sorted(self.by_position.items())
        ]


def position_errors(pairs: Iterable[RankingPair]) -> PositionErrorProfile:
    """MAE/RMSE of the served rank conditioned on the ideal position."""
    ideals, devs = _paired_deviations(pairs)
    return position_errors_from_arrays(ideals, ideals + devs.astype(np.int64))


def position_errors_from_arrays(ideal: np.ndarray, design: np.ndarray) -> PositionErrorProfile:
    ideal = np.asarray(ideal).ravel()
    dev = np.asarray(design, dtype=np.float64).ravel() - ideal
    max_pos = int(ideal.max())
    idx = ideal - 1
    counts = np.bincount(idx, minlength=max_pos)
    abs_sum = np.bincount(idx, weights=np.abs(dev), minlength=max_pos)
    sq_sum = np.bincount(idx, weights=dev * dev, minlength=max_pos)
    by_position = {
        pos + 1: PositionStats(
            count=int(counts[pos]),
            mae=float(abs_sum[pos] / counts[pos]),
            rmse=float(np.sqrt(sq_sum[pos] / counts[pos])),
        )
        for pos in range(max_pos)
        if counts[pos] > 0
    }
    return PositionErrorProfile(by_position=by_position)


def analytic_cost(
    config: DesignConfig, fractions: Sequence[float], unit_costs: Sequence[float]
) -> float:
    """Closed-form expected scoring cost for the configured mixing mode.

    ``unit_costs[k]`` is the cost of scoring every session item once with
    model k. Control always scores everything; treatment models pay for
    the mixing set (and, under limited mixing, their own unsampled items).
    """
    fr: RampFractions = validate_fractions(fractions)
    costs = [float(c) for c in unit_costs]
    if len(costs) != len(fr):
        raise ValueError("unit_costs must have one entry per arm")
    alpha = config.alpha
    if config.mixing_mode is MixingMode.SINGLE_TREATMENT:
        if len(fr) != 2:
            raise ValueError("single-treatment cost needs exactly 2 arms")
        return costs[0] + (alpha * fr[0] + fr[1]) * costs[1]
    if len(fr) < 2:
        raise ValueError("multi-treatment cost needs at least one treatment arm")
    treatment_total = sum(costs[1:])
    if config.mixing_mode is MixingMode.GREATER_MIXING:
        return costs[0] + (1.0 - (1.0 - alpha) * fr[0]) * treatment_total
    weighted = sum(p * c for p, c in zip(fr[1:], costs[1:]))
    return costs[0] + alpha * treatment_total + (1.0 - alpha) * weighted


def bias_bound(arm: int, p1: float) -> float:
    """Conditional-bias envelope c(k, p1) for the full-mixing design."""
    if arm not in (0, 1):
        raise ValueError("bias bound is defined for arms 0 and 1")
    if not (0.0 <= p1 <= 1.0):
        raise ValueError("p1 must lie in [0, 1]")
    return (arm * (1.0 - p1) + (1 - arm) * p1) / 2.0


def variance_bound(arm: int, p1: float, r: int, n_items: int) -> float:
    """Conditional-variance envelope at ideal position r in an n-item session."""
    c = bias_bound(arm, p1)
    return 2.0 * min(r - 1, n_items - r) * p1 * (1.0 - p1) + c * (1.0 - c)


@dataclass(frozen=True)
class CellStats:
    """Empirical conditional moments for one (arm, ideal position) cell."""

    arm: int
    r: int
    count: int
    bias: float
    bias_se: float
    bias_bound: float
    variance: float
    variance_se: float
    variance_bound: float
    bias_violation: bool
    variance_violation: bool


@dataclass(frozen=True)
class BoundReport:
    """Per-cell bound check with a slack of ``slack_se`` standard errors."""

    p1: float
    n_items: int
    cells: list[CellStats]
    skipped: list[tuple[int, int, int]] = field(default_factory=list)
    slack_se: float = 3.0

    @property
    def violations(self) -> list[CellStats]:
        return [c for c in self.cells if c.bias_violation or c.variance_violation]

    @property
    def ok(self) -> bool:
        return not self.violations


def cells_from_moments(
    counts: np.ndarray,
    s1: np.ndarray,
    s2: np.ndarray,
    s3: np.ndarray,
    s4: np.ndarray,
    p1: float,
    n_items: int,
    min_cell: int = 100,
    slack_se: float = 3.0,
) -> tuple[list[CellStats], list[tuple[int, int, int]]]:
    """Build cell statistics from accumulated raw moments of (served - ideal).

    Arrays are indexed by ``arm * n_items + (r - 1)``; s1..s4 are the raw
    power sums of the deviations. Cells with fewer than ``min_cell``
    samples are skipped.
    """
    cells: list[CellStats] = []
    skipped: list[tuple[int, int, int]] = []
    for arm in (0, 1):
        for r in range(1, n_items + 1):
            j = arm * n_items + (r - 1)
            cnt = int(counts[j])
            if cnt < min_cell:
                skipped.append((arm, r, cnt))
                continue
            m1 = s1[j] / cnt
            # central power sums from raw power sums
            css2 = s2[j] - cnt * m1**2
            css4 = s4[j] - 4 * m1 * s3[j] + 6 * m1**2 * s2[j] - 3 * cnt * m1**4
            var = css2 / (cnt - 1)
            m2 = css2 / cnt
            m4 = css4 / cnt
            bias_se = float(np.sqrt(max(m2, 0.0) / cnt))
            var_se = float(np.sqrt(max(m4 - m2**2, 0.0) / cnt))
            b_bound = bias_bound(arm, p1)
            v_bound = variance_bound(arm, p1, r, n_items)
            cells.append(
                CellStats(
                    arm=arm,
                    r=r,
                    count=cnt,
                    bias=float(m1),
                    bias_se=bias_se,
                    bias_bound=b_bound,
                    variance=float(var),
                    variance_se=var_se,
                    variance_bound=v_bound,
                    bias_violation=abs(m1) > b_bound + slack_se * bias_se,
                    variance_violation=var > v_bound + slack_se * var_se,
                )
            )
    return cells, skipped


def bound_report(
    arm: np.ndarray,
    ideal: np.ndarray,
    design: np.ndarray,
    p1: float,
    n_items: int,
    min_cell: int = 100,
    slack_se: float = 3.0,
) -> BoundReport:
    """Check observed ranks from full-mixing runs against the moment bounds.

    Args:
        arm: per-observation treatment arm (0 or 1).
        ideal: per-observation ideal position r.
        design: per-observation served rank.
        p1: treatment assignment probability the runs were generated with.
        n_items: session size (fixed across runs).
    """
    arm = np.asarray(arm, dtype=np.int64).ravel()
    ideal = np.asarray(ideal, dtype=np.int64).ravel()
    dev = np.asarray(design, dtype=np.float64).ravel() - ideal
    if not (arm.shape == ideal.shape == dev.shape):
        raise ValueError("arm, ideal and design arrays must be the same length")
    idx = arm * n_items + (ideal - 1)
    size = 2 * n_items
    counts = np.bincount(idx, minlength=size)
    s1 = np.bincount(idx, weights=dev, minlength=size)
    s2 = np.bincount(idx, weights=dev**2, minlength=size)
    s3 = np.bincount(idx, weights=dev**3, minlength=size)
    s4 = np.bincount(idx, weights=dev**4, minlength=size)
    cells, skipped = cells_from_moments(counts, s1, s2, s3, s4, p1, n_items, min_cell, slack_se)
    if skipped:
        warnings.warn(
            f"{len(skipped)} cell(s) skipped with fewer than {min_cell} samples",
            stacklevel=2,
        )
    return BoundReport(p1=p1, n_items=n_items, cells=cells, skipped=skipped, slack_se=slack_se)
