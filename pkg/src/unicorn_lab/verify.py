"""Executable checks of the design's optimality and moment bounds.

Three families of checks:

* brute-force optimality: on small sessions, enumerate every permutation
  and confirm the full-mixing design attains the minimum squared gap to
  the ideal positions;
* conditional bias/variance: large Monte Carlo over allocations, checking
  empirical per-(arm, position) moments against the theoretical
  envelopes, plus the reverse-ranking adversarial case where the bias
  envelope is attained with equality;
* cost/accuracy sweeps: measured scoring counts against the closed-form
  cost expressions, and the inaccuracy-vs-cost trade-off over alpha.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import batch
from .allocation import (
    TreatmentAllocation,
    assign_bulk,
    bucket_arms,
    hash_unit,
    session_allocation_seed,
    validate_fractions,
)
from .core import Session, TiePolicy, ideal_rank, rank_by_scores
from .designs import DesignConfig, MixingMode, unicorn_multi_rank, unicorn_rank
from .metrics import (
    BoundReport,
    PositionErrorProfile,
    PositionStats,
    analytic_cost,
    bias_bound,
    cells_from_moments,
)
from .rng import STREAM_SWEEP, STREAM_VERIFY, Rng, derive_rng
from .simulation import GaussianEnvConfig

_MAX_BRUTE_FORCE = 7
_EXCESS_TOL = 1e-12


@dataclass(frozen=True)
class OptimalityReport:
    """Outcome of the enumeration check over many random instances."""

    trials: int
    session_sizes: tuple[int, ...]
    failures: int
    max_excess: float
    passed: bool
    worst: dict | None = None


def _permutation_table(n: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(1, n + 1))), dtype=np.int64)


def brute_force_optimality(
    session_sizes: int | Iterable[int],
    trials: int,
    master_seed: int = 0,
    p1: float = 0.5,
) -> OptimalityReport:
    """Exhaustively verify optimality of full mixing on small instances.

    Per trial: random continuous scores, one fixed allocation draw, the
    full-mixing rerank, and the squared gap to the ideal positions. The
    enumeration over all n! permutations provides the independent
    minimum. Session sizes above 7 (5040 permutations) are refused.
    """
    sizes = (session_sizes,) if isinstance(session_sizes, int) else tuple(session_sizes)
    for n in sizes:
        if n < 2 or n > _MAX_BRUTE_FORCE:
            raise ValueError(f"session size {n} outside the enumerable range 2..{_MAX_BRUTE_FORCE}")
    perm_tables = {n: _permutation_table(n) for n in sizes}

    failures = 0
    max_excess = -np.inf
    worst: dict | None = None
    for trial in range(trials):
        rng = derive_rng(master_seed, STREAM_VERIFY, trial)
        n = sizes[int(rng.integers(0, len(sizes)))]
        t0 = rng.standard_normal(n)
        t1 = rng.standard_normal(n)
        arms = (rng.random(n) < p1).astype(int)
        session = Session(
            session_id=trial,
            items=tuple((j, j) for j in range(n)),
            scores={0: {j: float(t0[j]) for j in range(n)},
                    1: {j: float(t1[j]) for j in range(n)}},
        )
        allocation = TreatmentAllocation(
            arms={j: int(arms[j]) for j in range(n)}, fractions=(1.0 - p1, p1), seed=None
        )
        r_star = ideal_rank(session, allocation, rng=rng)
        out = unicorn_rank(session, allocation, DesignConfig(alpha=1.0), rng)
        star = np.array([r_star[j] for j in range(n)], dtype=np.int64)
        served = np.array([out.ranking[j] for j in range(n)], dtype=np.float64)
        err = float(np.mean((served - star) ** 2))
        best = float(np.min(np.mean((perm_tables[n] - star) ** 2, axis=1)))
        excess = err - best
        if excess > max_excess:
            max_excess = excess
            worst = {"trial": trial, "n": n, "design_error": err, "enumerated_min": best}
        if excess > _EXCESS_TOL:
            failures += 1
    return OptimalityReport(
        trials=trials,
        session_sizes=sizes,
        failures=failures,
        max_excess=float(max_excess),
        passed=failures == 0,
        worst=worst,
    )


@dataclass(frozen=True)
class AttainmentStats:
    """Pooled adversarial attainment of the bias envelope for one arm."""

    n_items: int
    arm: int
    cells: int
    mean_gap: float  # mean over cells of |empirical bias| - c(arm, p1)
    se: float
    ok: bool


@dataclass(frozen=True)
class BiasVarianceCheck:
    random_reports: list[BoundReport]
    adversarial_reports: list[BoundReport]
    attainment: list[AttainmentStats]
    passed: bool


class _MomentAccumulator:
    """Streaming raw power sums of (served - ideal) per (arm, position) cell."""

    def __init__(self, n_items: int) -> None:
        self.n = n_items
        size = 2 * n_items
        self.counts = np.zeros(size, dtype=np.int64)
        self.sums = [np.zeros(size) for _ in range(4)]

    def add(self, arm: np.ndarray, ideal: np.ndarray, design: np.ndarray) -> None:
        dev = design.astype(np.float64) - ideal
        idx = (arm.astype(np.int64) * self.n + (ideal - 1)).ravel()
        dev = dev.ravel()
        size = 2 * self.n
        self.counts += np.bincount(idx, minlength=size)
        power = dev
        for m in range(4):
            self.sums[m] += np.bincount(idx, weights=power, minlength=size)
            if m < 3:
                power = power * dev

    def report(self, p1: float, min_cell: int = 100, slack_se: float = 3.0) -> BoundReport:
        cells, skipped = cells_from_moments(
            self.counts, *self.sums, p1=p1, n_items=self.n, min_cell=min_cell, slack_se=slack_se
        )
        return BoundReport(p1=p1, n_items=self.n, cells=cells, skipped=skipped, slack_se=slack_se)


def _full_mixing_draws(
    acc: _MomentAccumulator,
    n: int,
    p1: float,
    mc_reps: int,
    rng: Rng,
    adversarial: bool,
    chunk: int = 20_000,
) -> None:
    all_true = None
    done = 0
    while done < mc_reps:
        m = min(chunk, mc_reps - done)
        if adversarial:
            # Treatment ranking is the exact reverse of control, fixed scores.
            r0 = np.broadcast_to(np.arange(1, n + 1, dtype=np.int64), (m, n))
            r1 = (n + 1) - r0
        else:
            t0, t1 = batch.gaussian_scores(rng, m, n, rho=0.0)
            r0 = batch.rank_rows(t0)
            r1 = batch.rank_rows(t1)
        arm = (rng.random((m, n)) < p1).astype(np.int64)
        if all_true is None or all_true.shape[0] != m:
            all_true = np.ones((m, n), dtype=bool)
        design, _ = batch.unicorn_batch_ranks(r0, r1, arm, all_true, rng)
        acc.add(arm, batch.ideal_ranks(r0, r1, arm), design)
        done += m


def check_bias_variance(
    p1_grid: Sequence[float] = (0.1, 0.3, 0.5, 0.7, 0.9),
    session_sizes: Sequence[int] = (5, 21, 101),
    mc_reps: int = 100_000,
    master_seed: int = 0,
    slack_se: float = 3.0,
    adversarial_only: bool = False,
) -> BiasVarianceCheck:
    """Monte Carlo check of the full-mixing conditional moment bounds.

    Random case: fresh scores and a fresh allocation per draw, so the
    empirical cell moments estimate the unconditional-in-session moments
    the envelopes also bound. Adversarial case: fixed reverse-ranking
    scores, where the bias envelope is attained with equality at every
    position except the middle one; attainment is asserted on the pooled
    per-(size, arm) mean, whose standard error is far tighter than any
    single cell's.
    """
    random_reports: list[BoundReport] = []
    adversarial_reports: list[BoundReport] = []
    attainment: list[AttainmentStats] = []

    for n in session_sizes:
        adv_cells_by_arm: dict[int, list] = {0: [], 1: []}
        for p1 in p1_grid:
            # Stream keys depend on the grid point itself, not its index,
            # so splitting the grid across workers cannot change results.
            p_key = int(round(p1 * 10_000))
            if not adversarial_only:
                rng = derive_rng(master_seed, STREAM_VERIFY, n, p_key, 0)
                acc = _MomentAccumulator(n)
                _full_mixing_draws(acc, n, p1, mc_reps, rng, adversarial=False)
                random_reports.append(acc.report(p1, slack_se=slack_se))

            rng_adv = derive_rng(master_seed, STREAM_VERIFY, n, p_key, 1)
            acc_adv = _MomentAccumulator(n)
            _full_mixing_draws(acc_adv, n, p1, mc_reps, rng_adv, adversarial=True)
            report = acc_adv.report(p1, slack_se=slack_se)
            adversarial_reports.append(report)
            mid = (n + 1) / 2
            for cell in report.cells:
                if cell.r != mid:
                    adv_cells_by_arm[cell.arm].append(
                        (abs(cell.bias) - bias_bound(cell.arm, report.p1), cell.bias_se)
                    )
        for arm, gaps in adv_cells_by_arm.items():
            if not gaps:
                continue
            mean_gap = float(np.mean([g for g, _ in gaps]))
            # Cells within a draw are negatively dependent (ranks sum to a
            # constant), so treating them as independent overstates the SE.
            se = float(np.sqrt(np.sum([s**2 for _, s in gaps])) / len(gaps))
            attainment.append(
                AttainmentStats(
                    n_items=n,
                    arm=arm,
                    cells=len(gaps),
                    mean_gap=mean_gap,
                    se=se,
                    ok=abs(mean_gap) <= slack_se * se,
                )
            )

    passed = (
        all(r.ok for r in random_reports)
        and all(r.ok for r in adversarial_reports)
        and all(a.ok for a in attainment)
    )
    return BiasVarianceCheck(
        random_reports=random_reports,
        adversarial_reports=adversarial_reports,
        attainment=attainment,
        passed=passed,
    )


@dataclass(frozen=True)
class SweepCell:
    """One point of the cost/inaccuracy trade-off surface."""

    rho: float
    tp: float
    alpha: float
    inaccuracy: float
    analytic_cost: float
    measured_cost: float
    profile: PositionErrorProfile


def alpha_sweep(
    config: GaussianEnvConfig,
    alphas: Sequence[float] = (0.0, 0.25, 0.5, 0.75, 1.0),
    tp_grid: Sequence[float] = (0.1, 0.5),
    tie_policy: TiePolicy = TiePolicy.RANDOM,
    chunk: int = 4096,
) -> list[SweepCell]:
    """Measured inaccuracy and cost of the reranking design across alpha.

    Sessions are shared across every (tp, alpha) cell of one sweep;
    allocations are redrawn per session (stateless hash of the session
    index), and the sampling/tie streams are derived per cell.
    """
    n = config.n_slots
    cells: list[SweepCell] = []
    for tp_idx, tp in enumerate(tp_grid):
        fractions = validate_fractions((1.0 - tp, tp))
        for a_idx, alpha in enumerate(alphas):
            counts = np.zeros(n, dtype=np.int64)
            abs_sum = np.zeros(n)
            sq_sum = np.zeros(n)
            cost_total = 0.0
            rng_cell = derive_rng(config.seed, STREAM_SWEEP, tp_idx, a_idx)
            done = 0
            while done < config.n_sessions:
                m = min(chunk, config.n_sessions - done)
                score_rng = derive_rng(config.seed, STREAM_SWEEP, 1_000_000 + done)
                t0, t1 = batch.gaussian_scores(score_rng, m, n, config.rho)
                r0 = batch.rank_rows(t0)
                r1 = batch.rank_rows(t1)
                seeds = session_allocation_seed(
                    config.seed + tp_idx, np.arange(done, done + m)
                )
                units = hash_unit(seeds[:, None], np.arange(n)[None, :])
                arm = bucket_arms(fractions, units)
                sampled = rng_cell.random((m, n)) < alpha
                design, t1_calls = batch.unicorn_batch_ranks(
                    r0, r1, arm, sampled, rng_cell, tie_policy
                )
                ideal = batch.ideal_ranks(r0, r1, arm)
                dev = (design - ideal).astype(np.float64).ravel()
                idx = (ideal - 1).ravel()
                counts += np.bincount(idx, minlength=n)
                abs_sum += np.bincount(idx, weights=np.abs(dev), minlength=n)
                sq_sum += np.bincount(idx, weights=dev * dev, minlength=n)
                cost_total += float(np.sum(t1_calls)) + m * n
                done += m
            profile = PositionErrorProfile(
                by_position={
                    pos + 1: PositionStats(
                        count=int(counts[pos]),
                        mae=float(abs_sum[pos] / counts[pos]),
                        rmse=float(np.sqrt(sq_sum[pos] / counts[pos])),
                    )
                    for pos in range(n)
                    if counts[pos] > 0
                }
            )
            cells.append(
                SweepCell(
                    rho=config.rho,
                    tp=tp,
                    alpha=alpha,
                    inaccuracy=float(np.sum(sq_sum) / np.sum(counts)),
                    analytic_cost=analytic_cost(
                        DesignConfig(alpha=alpha), fractions, (float(n), float(n))
                    ),
                    measured_cost=cost_total / config.n_sessions,
                    profile=profile,
                )
            )
    return cells


@dataclass(frozen=True)
class CostCheck:
    """Measured mean ledger total versus the closed-form expectation."""

    mode: str
    alpha: float
    fractions: tuple[float, ...]
    n_sessions: int
    n_slots: int
    measured_mean: float
    analytic: float
    rel_err: float
    ok: bool


def cost_exactness(
    modes_and_fractions: Sequence[tuple[MixingMode, Sequence[float]]] = (
        (MixingMode.SINGLE_TREATMENT, (0.5, 0.5)),
        (MixingMode.SINGLE_TREATMENT, (0.9, 0.1)),
        (MixingMode.GREATER_MIXING, (0.5, 0.25, 0.25)),
        (MixingMode.LIMITED_MIXING, (0.5, 0.25, 0.25)),
    ),
    alphas: Sequence[float] = (0.0, 0.2, 0.5, 1.0),
    n_sessions: int = 10_000,
    n_slots: int = 30,
    master_seed: int = 0,
    tol: float = 0.01,
    stream_tag: int = 0,
) -> list[CostCheck]:
    """Replay real per-session designs and compare ledger means to formulas.

    Sessions have one producer per item and a fresh hash-based allocation
    each, so measured totals are unbiased estimates of the closed-form
    expected cost (one scoring call being the unit cost of one item).
    ``stream_tag`` offsets the random streams so runners splitting the
    grid across calls keep every call on its own streams.
    """
    checks: list[CostCheck] = []
    for rel_idx, (mode, fractions) in enumerate(modes_and_fractions):
        cfg_idx = stream_tag + rel_idx
        fr = validate_fractions(fractions)
        n_arms = len(fr)
        for a_idx, alpha in enumerate(alphas):
            config = DesignConfig(alpha=alpha, mixing_mode=mode)
            total = 0
            for s in range(n_sessions):
                rng = derive_rng(master_seed, STREAM_VERIFY, cfg_idx, a_idx, s)
                scores = rng.standard_normal((n_arms, n_slots))
                session = Session(
                    session_id=s,
                    items=tuple((j, j) for j in range(n_slots)),
                    scores={k: {j: float(scores[k, j]) for j in range(n_slots)}
                            for k in range(n_arms)},
                )
                seed = int(session_allocation_seed(master_seed + cfg_idx, s))
                arms = assign_bulk(np.arange(n_slots), fr, seed)
                allocation = TreatmentAllocation(
                    arms={j: int(arms[j]) for j in range(n_slots)}, fractions=fr, seed=seed
                )
                if mode is MixingMode.SINGLE_TREATMENT:
                    out = unicorn_rank(session, allocation, config, rng)
                else:
                    out = unicorn_multi_rank(session, allocation, config, rng)
                total += out.ledger.total
            measured = total / n_sessions
            expected = analytic_cost(config, fr, tuple(float(n_slots) for _ in fr))
            rel = abs(measured - expected) / expected
            checks.append(
                CostCheck(
                    mode=mode.value,
                    alpha=alpha,
                    fractions=fr,
                    n_sessions=n_sessions,
                    n_slots=n_slots,
                    measured_mean=measured,
                    analytic=expected,
                    rel_err=rel,
                    ok=rel <= tol,
                )
            )
    return checks
