"""Synthetic environments and the treatment-effect estimation pipeline.

Two data generators: correlated-Gaussian score pairs (each item is its
own producer, used for the design-accuracy sweeps) and a marketplace with
persistent producers whose item scores depend on a latent quality (used
for end-to-end effect estimation). Rank-to-response functions convert a
producer's served positions into an outcome, and the comparison harness
replays every design over the same sessions to score its estimation
error against a paired counterfactual ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import batch
from .allocation import TreatmentAllocation, assign
from .core import ItemId, ProducerId, Session, TiePolicy, rank_by_scores
from .designs import (
    DesignConfig,
    DesignOutput,
    MixingMode,
    oasis_rank,
    small_ramp_binary_view,
    small_ramp_rank,
    unicorn_rank,
)
from .rng import (
    STREAM_ALLOCATION,
    STREAM_DESIGN,
    STREAM_REPLICATION,
    STREAM_SESSIONS,
    Rng,
    derive_rng,
)

_QUALITY_BETA_A = 2.0
_QUALITY_BETA_B = 5.0


@dataclass(frozen=True)
class GaussianEnvConfig:
    """Correlated score-pair environment; one synthetic producer per item."""

    rho: float
    n_slots: int = 100
    n_sessions: int = 1000
    seed: int = 0

    def __post_init__(self) -> None:
        if not (-1.0 <= self.rho <= 1.0):
            raise ValueError(f"correlation must lie in [-1, 1], got {self.rho}")


@dataclass(frozen=True)
class MarketplaceEnvConfig:
    """Marketplace environment: producers with Beta(2,5) latent quality."""

    n_producers: int = 1000
    n_slots: int = 100
    n_sessions: int = 1000
    seed: int = 0


def gaussian_score_array(config: GaussianEnvConfig) -> tuple[np.ndarray, np.ndarray]:
    """(N, L) control/treatment score matrices for the Gaussian environment."""
    rng = derive_rng(config.seed, STREAM_SESSIONS)
    return batch.gaussian_scores(rng, config.n_sessions, config.n_slots, config.rho)


def gen_gaussian_sessions(config: GaussianEnvConfig) -> list[Session]:
    """Materialized sessions for the Gaussian environment (producer = item)."""
    t0, t1 = gaussian_score_array(config)
    sessions = []
    items = tuple((j, j) for j in range(config.n_slots))
    for s in range(config.n_sessions):
        sessions.append(
            Session(
                session_id=s,
                items=items,
                scores={
                    0: {j: float(t0[s, j]) for j in range(config.n_slots)},
                    1: {j: float(t1[s, j]) for j in range(config.n_slots)},
                },
            )
        )
    return sessions


def gen_marketplace_sessions(
    config: MarketplaceEnvConfig,
) -> tuple[np.ndarray, list[Session]]:
    """Producer qualities plus sessions of producers drawn with replacement.

    Control scores are Uniform[q, 1+q] (quality shifts a unit-wide band),
    treatment scores Uniform[q, 2q] (quality scales the band), so the two
    models disagree most about low-quality producers.
    """
    rng = derive_rng(config.seed, STREAM_SESSIONS)
    qualities = rng.beta(_QUALITY_BETA_A, _QUALITY_BETA_B, size=config.n_producers)
    shape = (config.n_sessions, config.n_slots)
    producer_draw = rng.integers(0, config.n_producers, size=shape)
    q = qualities[producer_draw]
    t0 = q + rng.random(shape)
    t1 = q * (1.0 + rng.random(shape))
    sessions = []
    for s in range(config.n_sessions):
        items = tuple((j, int(producer_draw[s, j])) for j in range(config.n_slots))
        sessions.append(
            Session(
                session_id=s,
                items=items,
                scores={
                    0: {j: float(t0[s, j]) for j in range(config.n_slots)},
                    1: {j: float(t1[s, j]) for j in range(config.n_slots)},
                },
            )
        )
    return qualities, sessions


class ResponseFn(Enum):
    """How a producer's served positions aggregate into one outcome."""

    AVG = "avg_fn"
    MAX = "max_fn"


def response_value(rank, log_base: float | None = None) -> np.ndarray:
    """Per-appearance response (10 / log(10 + rank))^2; natural log by default."""
    r = np.asarray(rank, dtype=np.float64)
    if np.any(r < 1):
        raise ValueError("ranks must be >= 1")
    logs = np.log(10.0 + r)
    if log_base is not None:
        logs = logs / math.log(log_base)
    return (10.0 / logs) ** 2


def _appearance_arrays(
    sessions: Sequence[Session], rankings: Sequence[Mapping[ItemId, int]]
) -> tuple[np.ndarray, np.ndarray]:
    if len(sessions) != len(rankings):
        raise ValueError("need exactly one ranking per session")
    prods: list[np.ndarray] = []
    ranks: list[np.ndarray] = []
    for session, ranking in zip(sessions, rankings):
        prods.append(np.fromiter((p for _, p in session.items), dtype=np.int64, count=len(session)))
        ranks.append(
            np.fromiter((ranking[i] for i, _ in session.items), dtype=np.int64, count=len(session))
        )
    return np.concatenate(prods), np.concatenate(ranks)


def _responses_from_arrays(
    prods: np.ndarray, ranks: np.ndarray, fn: ResponseFn, log_base: float | None
) -> dict[ProducerId, float]:
    values = response_value(ranks, log_base)
    uniq, inverse = np.unique(prods, return_inverse=True)
    if fn is ResponseFn.AVG:
        sums = np.bincount(inverse, weights=values, minlength=len(uniq))
        counts = np.bincount(inverse, minlength=len(uniq))
        agg = sums / counts
    elif fn is ResponseFn.MAX:
        agg = np.full(len(uniq), -np.inf)
        np.maximum.at(agg, inverse, values)
    else:
        raise ValueError(f"unknown response function {fn}")
    return {int(p): float(v) for p, v in zip(uniq, agg)}


def producer_responses(
    sessions: Sequence[Session],
    rankings: Sequence[Mapping[ItemId, int]],
    fn: ResponseFn,
    log_base: float | None = None,
) -> dict[ProducerId, float]:
    """Outcome per producer over all item appearances in the given rankings.

    Producers that never appear are absent from the result (excluded from
    estimation rather than counted as zero).
    """
    prods, ranks = _appearance_arrays(sessions, rankings)
    return _responses_from_arrays(prods, ranks, fn, log_base)


def producer_response(
    sessions: Sequence[Session],
    rankings: Sequence[Mapping[ItemId, int]],
    producer: ProducerId,
    fn: ResponseFn,
    log_base: float | None = None,
) -> float:
    """Response of a single producer; errors if it never appears."""
    responses = producer_responses(sessions, rankings, fn, log_base)
    if producer not in responses:
        raise ValueError(f"producer {producer} has no appearances in these sessions")
    return responses[producer]


@dataclass(frozen=True)
class AteResult:
    estimate: float
    ground_truth: float

    @property
    def error(self) -> float:
        return self.estimate - self.ground_truth


def estimate_ate(
    responses: Mapping[ProducerId, float],
    allocation: TreatmentAllocation,
    treatment_arm: int = 1,
    control_arm: int = 0,
) -> float:
    """Difference between treatment- and control-arm mean producer responses."""
    treat = [v for p, v in responses.items() if allocation.arm_of(p) == treatment_arm]
    ctrl = [v for p, v in responses.items() if allocation.arm_of(p) == control_arm]
    if not treat or not ctrl:
        raise ValueError(
            f"both measured arms need responding producers "
            f"(treatment={len(treat)}, control={len(ctrl)})"
        )
    return float(np.mean(treat) - np.mean(ctrl))


def counterfactual_rankings(
    sessions: Sequence[Session], model_index: int, rng: Rng | None = None
) -> list[dict[ItemId, int]]:
    """Full rankings of every session under a single model."""
    tie_rng = rng if rng is not None else derive_rng(0, STREAM_SESSIONS, model_index)
    return [
        rank_by_scores(
            {i: session.scores[model_index][i] for i in session.item_ids},
            TiePolicy.RANDOM,
            tie_rng,
        )
        for session in sessions
    ]


def ground_truth_ate(
    sessions: Sequence[Session],
    fn: ResponseFn,
    log_base: float | None = None,
    rng: Rng | None = None,
) -> float:
    """Mean producer-level response gap between the two pure rollouts.

    Ranks every session entirely by the treatment model and entirely by
    the control model, and averages the per-producer response difference.
    Treatment allocations play no role here.
    """
    ranks_control = counterfactual_rankings(sessions, 0, rng)
    ranks_treat = counterfactual_rankings(sessions, 1, rng)
    resp_control = producer_responses(sessions, ranks_control, fn, log_base)
    resp_treat = producer_responses(sessions, ranks_treat, fn, log_base)
    diffs = [resp_treat[p] - resp_control[p] for p in resp_control]
    return float(np.mean(diffs))


@dataclass(frozen=True)
class MethodSpec:
    """One comparison entrant: a design kind plus its parameters."""

    kind: str  # "unicorn" | "oasis" | "small_ramp"
    alpha: float | None = None

    @property
    def display(self) -> str:
        if self.kind == "unicorn":
            return f"UniCoRn({self.alpha:g})"
        return {"oasis": "OASIS", "small_ramp": "SmallRamp"}[self.kind]


def parse_method(name: str) -> MethodSpec:
    text = name.strip().lower().replace(" ", "")
    if text.startswith("unicorn"):
        inner = text.removeprefix("unicorn").strip("()")
        if not inner:
            raise ValueError(f"method {name!r} needs an alpha, e.g. 'UniCoRn(0.2)'")
        return MethodSpec(kind="unicorn", alpha=float(inner))
    if text == "oasis":
        return MethodSpec(kind="oasis")
    if text in ("smallramp", "small_ramp", "small-ramp"):
        return MethodSpec(kind="small_ramp")
    raise ValueError(f"unknown method {name!r}")


DEFAULT_METHODS = ("UniCoRn(0)", "UniCoRn(0.2)", "UniCoRn(1)", "OASIS", "SmallRamp")


@dataclass(frozen=True)
class ComparisonRow:
    method: str
    response_fn: str
    tp: float
    replication: int
    estimate: float
    ground_truth: float
    error: float
    mean_cost_per_session: float


def _run_method(
    spec: MethodSpec,
    sessions: Sequence[Session],
    allocation: TreatmentAllocation,
    master_seed: int,
    stream_key: tuple[int, ...],
    tie_policy: TiePolicy,
) -> tuple[list[dict[ItemId, int]], float]:
    # One derived stream per (replication, tp, method), consumed over the
    # sessions in their stored order; replications stay the parallel unit.
    rng = derive_rng(master_seed, STREAM_DESIGN, *stream_key)
    config = None
    binary = None
    if spec.kind == "unicorn":
        config = DesignConfig(alpha=spec.alpha, mixing_mode=MixingMode.SINGLE_TREATMENT,
                              tie_policy=tie_policy)
    elif spec.kind == "small_ramp":
        binary = small_ramp_binary_view(allocation)
    rankings: list[dict[ItemId, int]] = []
    total_cost = 0
    for session in sessions:
        if spec.kind == "unicorn":
            out = unicorn_rank(session, allocation, config, rng)
        elif spec.kind == "oasis":
            out = oasis_rank(session, allocation, tie_policy, rng)
        elif spec.kind == "small_ramp":
            out = small_ramp_rank(session, allocation, rng, tie_policy, binary_view=binary)
        else:
            raise ValueError(f"unknown method kind {spec.kind}")
        rankings.append(out.ranking)
        total_cost += out.ledger.total
    return rankings, total_cost / len(sessions)


def run_comparison(
    config: MarketplaceEnvConfig,
    methods: Iterable[str] = DEFAULT_METHODS,
    replications: int = 100,
    tps: Sequence[float] = (0.1, 0.5),
    fns: Sequence[ResponseFn] = (ResponseFn.AVG, ResponseFn.MAX),
    master_seed: int = 0,
    log_base: float | None = None,
    tie_policy: TiePolicy = TiePolicy.RANDOM,
) -> list[ComparisonRow]:
    """Replay every method over fresh replications and collect ATE errors.

    Each replication draws a fresh marketplace (producers, sessions),
    computes the paired ground truth from two full rollouts, assigns
    producers per treatment proportion, reranks every session per method,
    and estimates the effect from producer responses. The small-ramp
    baseline always uses its own 80/10/10 allocation and estimates from
    the two measurement arms.
    """
    if replications < 1:
        raise ValueError("at least one replication is required")
    specs = [parse_method(m) for m in methods]
    rows: list[ComparisonRow] = []
    for rep in range(replications):
        rows.extend(
            comparison_replication(
                config, specs, rep, tps, fns, master_seed, log_base, tie_policy
            )
        )
    return rows


def comparison_replication(
    config: MarketplaceEnvConfig,
    specs: Sequence[MethodSpec],
    rep: int,
    tps: Sequence[float],
    fns: Sequence[ResponseFn],
    master_seed: int,
    log_base: float | None,
    tie_policy: TiePolicy,
) -> list[ComparisonRow]:
    """One comparison replication; split out so runners can parallelize."""
    data_seed_rng = derive_rng(master_seed, STREAM_REPLICATION, rep)
    env = replace(config, seed=int(data_seed_rng.integers(0, 2**63 - 1)))
    _, sessions = gen_marketplace_sessions(env)
    producers = range(config.n_producers)
    truths = {fn: ground_truth_ate(sessions, fn, log_base) for fn in fns}

    rows: list[ComparisonRow] = []
    for tp_idx, tp in enumerate(tps):
        alloc_rng = derive_rng(master_seed, STREAM_ALLOCATION, rep, tp_idx)
        two_arm = assign(producers, (1.0 - tp, tp), seed=int(alloc_rng.integers(0, 2**63 - 1)))
        three_arm = assign(producers, (0.8, 0.1, 0.1), seed=int(alloc_rng.integers(0, 2**63 - 1)))
        for m_idx, spec in enumerate(specs):
            alloc = three_arm if spec.kind == "small_ramp" else two_arm
            rankings, mean_cost = _run_method(
                spec, sessions, alloc, master_seed, (rep, tp_idx, m_idx), tie_policy
            )
            prod_arr, rank_arr = _appearance_arrays(sessions, rankings)
            for fn in fns:
                responses = _responses_from_arrays(prod_arr, rank_arr, fn, log_base)
                if spec.kind == "small_ramp":
                    est = estimate_ate(responses, alloc, treatment_arm=2, control_arm=1)
                else:
                    est = estimate_ate(responses, alloc, treatment_arm=1, control_arm=0)
                result = AteResult(estimate=est, ground_truth=truths[fn])
                rows.append(
                    ComparisonRow(
                        method=spec.display,
                        response_fn=fn.value,
                        tp=tp,
                        replication=rep,
                        estimate=result.estimate,
                        ground_truth=result.ground_truth,
                        error=result.error,
                        mean_cost_per_session=mean_cost,
                    )
                )
    return rows
