"""Experiment designs: counterfactual-rank reranking and the comparison baselines.

All designs produce, per session, a permutation of 1..n plus an exact
ledger of scoring-model invocations. The reranking family shares one
engine:

1. rank everything by the control model (this fixes the slot layout),
2. sample which producers join the mixing set,
3. rerank the mixing set into its own vacated slots, ordering items by
   their relative rank under their own arm's model,
4. leave unmixed control items exactly where the control ranking put them.

With full mixing (alpha = 1) step 3 sorts items by their ideal positions,
which is what makes that configuration optimal for squared rank error.
Scores are fetched lazily through a per-call cache, so each (model, item)
pair is charged to the ledger at most once per session.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Mapping, Sequence

from .allocation import (
    MixingSelection,
    TreatmentAllocation,
    items_by_arm,
    sample_alpha_producers,
)
from .core import (
    MINUS_INF,
    CostLedger,
    ItemId,
    Score,
    ScoringModel,
    Session,
    TiePolicy,
    _TableModel,
    order_by_scores,
    rank_by_scores,
    session_table_models,
    validate_score,
)
from .rng import Rng


class MixingMode(Enum):
    SINGLE_TREATMENT = "single"
    GREATER_MIXING = "greater"
    LIMITED_MIXING = "limited"


@dataclass(frozen=True)
class DesignConfig:
    """Tuning knobs shared by the reranking designs."""

    alpha: float = 1.0
    mixing_mode: MixingMode = MixingMode.SINGLE_TREATMENT
    tie_policy: TiePolicy = TiePolicy.RANDOM

    def __post_init__(self) -> None:
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class DesignOutput:
    """Final ranking, measured cost, and provenance of one design run."""

    ranking: dict[ItemId, int]
    ledger: CostLedger
    selection: MixingSelection | None
    design: str
    alpha: float | None


CandidateGenerator = Callable[[Session], Iterable[ItemId]]


class _ScoreCache:
    """Per-design-call score memo with exact invocation accounting.

    ``restrict`` (candidate-generation designs) short-circuits items
    outside a model's candidate set to MINUS_INF without invoking or
    charging the model.
    """

    def __init__(
        self,
        session: Session,
        models: Sequence[ScoringModel],
        ledger: CostLedger,
        restrict: Mapping[int, frozenset[ItemId]] | None = None,
    ) -> None:
        self._session = session
        self._models = models
        self._ledger = ledger
        self._restrict = restrict
        self._tables: list[dict[ItemId, Score]] = [{} for _ in models]

    def get(self, model_index: int, item: ItemId) -> Score:
        table = self._tables[model_index]
        if item in table:
            return table[item]
        if self._restrict is not None and item not in self._restrict.get(model_index, frozenset()):
            value: Score = MINUS_INF
        else:
            raw = self._models[model_index](self._session, item)
            value = validate_score(raw, context=f"model {model_index} score of item {item}")
            self._ledger.record(model_index)
        table[item] = value
        return value

    def table(self, model_index: int, item_list: Sequence[ItemId]) -> dict[ItemId, Score]:
        cached = self._tables[model_index]
        missing = [i for i in item_list if i not in cached]
        if missing:
            restrict = None if self._restrict is None else self._restrict.get(
                model_index, frozenset()
            )
            model = self._models[model_index]
            # Table-backed models read straight from the session's score
            # table; one ledger entry per newly scored item either way.
            source = (
                self._session.scores.get(model.model_index)
                if type(model) is _TableModel
                else None
            )
            charged = 0
            for i in missing:
                if restrict is not None and i not in restrict:
                    cached[i] = MINUS_INF
                    continue
                if source is not None and i in source:
                    raw = source[i]
                else:
                    raw = model(self._session, i)
                cached[i] = validate_score(
                    raw, context=f"model {model_index} score of item {i}"
                )
                charged += 1
            if charged:
                self._ledger.record(model_index, charged)
        return {i: cached[i] for i in item_list}


def _ascending_order(
    keys: Mapping[ItemId, int],
    tie_policy: TiePolicy,
    rng: Rng | None,
    arms: Mapping[ItemId, int],
) -> list[ItemId]:
    # order_by_scores sorts descending, so negate to sort rank scores ascending
    return order_by_scores(
        {i: -float(k) for i, k in keys.items()}, tie_policy, rng, arms, _validate=False
    )


def _mixed_rerank(
    session: Session,
    allocation: TreatmentAllocation,
    alpha: float,
    sample_all_arms: bool,
    tie_policy: TiePolicy,
    rng: Rng | None,
    models: Sequence[ScoringModel] | None,
    restrict: Mapping[int, frozenset[ItemId]] | None,
    label: str,
) -> DesignOutput:
    n_arms = allocation.n_arms if models is None else len(models)
    if models is None:
        models = session_table_models(session, n_arms)
    if allocation.fractions is not None and len(models) != len(allocation.fractions):
        raise ValueError(
            f"expected {len(allocation.fractions)} models (one per arm), got {len(models)}"
        )

    ledger = CostLedger()
    cache = _ScoreCache(session, models, ledger, restrict)
    item_list = list(session.item_ids)
    arm_of = {i: allocation.arm_of(p) for i, p in session.items}
    bad = sorted({k for k in arm_of.values() if k >= n_arms})
    if bad:
        raise ValueError(f"allocation assigns arm(s) {bad} beyond the {n_arms} configured models")

    # Step 1: control ranking of everything fixes the slot layout.
    r0 = rank_by_scores(cache.table(0, item_list), tie_policy, rng, arms=arm_of,
                        _validate=False)

    # Step 2: per-producer sampling decides who joins the mixing set.
    # Draws cover every arm in both modes (greater mixing simply ignores
    # the treatment-arm flags), so at alpha = 1 the two modes consume the
    # stream identically and produce identical rankings.
    sampled = sample_alpha_producers(
        session, allocation, alpha, rng_required(rng), range(n_arms)
    )
    if sample_all_arms:
        mixed = [i for i, p in session.items if p in sampled]
    else:
        mixed = [i for i, p in session.items if arm_of[i] >= 1 or p in sampled]
    positions = sorted(r0[i] for i in mixed)

    # Step 3: relative ranks within the mixing set under each item's own model.
    # Control-side relative order is induced by r0 (already scored); each
    # treatment model scores the whole mixing set, per the cost contract.
    rank_score: dict[ItemId, int] = {}
    for rel, i in enumerate(sorted(mixed, key=r0.__getitem__), start=1):
        if arm_of[i] == 0:
            rank_score[i] = rel
    for k in range(1, n_arms):
        if not mixed:
            break
        scores_k = cache.table(k, mixed)
        members = [i for i in mixed if arm_of[i] == k]
        if members:
            rel_k = rank_by_scores(scores_k, tie_policy, rng, arms=arm_of, _validate=False)
            for i in members:
                rank_score[i] = rel_k[i]

    ranking = dict(r0)
    if mixed:
        for pos, i in zip(positions, _ascending_order(rank_score, tie_policy, rng, arm_of)):
            ranking[i] = pos

    # Limited mixing: unsampled treatment items re-sort within their own
    # vacated slots by their own model (alpha = 0 behavior per arm);
    # unsampled control items already hold their r0 slots.
    if sample_all_arms:
        for k in range(1, n_arms):
            rest = [i for i, p in session.items if arm_of[i] == k and p not in sampled]
            if not rest:
                continue
            rel_rest = rank_by_scores(cache.table(k, rest), tie_policy, rng, arms=arm_of,
                                      _validate=False)
            rest_positions = sorted(r0[i] for i in rest)
            for pos, i in zip(rest_positions, sorted(rest, key=rel_rest.__getitem__)):
                ranking[i] = pos

    by_arm: dict[int, list[ItemId]] = {}
    for i in session.item_ids:
        by_arm.setdefault(arm_of[i], []).append(i)
    selection = MixingSelection(
        items_by_arm={k: tuple(v) for k, v in by_arm.items()},
        sampled_control=frozenset(i for i in mixed if arm_of[i] == 0),
        mixed=frozenset(mixed),
        positions=tuple(positions),
    )
    return DesignOutput(ranking=ranking, ledger=ledger, selection=selection,
                        design=label, alpha=alpha)


def rng_required(rng: Rng | None) -> Rng:
    if rng is None:
        raise ValueError("this design requires an rng (sampling and tie breaks)")
    return rng


def unicorn_rank(
    session: Session,
    allocation: TreatmentAllocation,
    config: DesignConfig,
    rng: Rng,
    models: Sequence[ScoringModel] | None = None,
) -> DesignOutput:
    """Single-treatment counterfactual reranking, UniCoRn(alpha).

    Requires a two-arm allocation (control + one treatment); use
    :func:`unicorn_multi_rank` for more arms. The ledger records
    ``n`` control-model calls plus one treatment-model call per mixing-set
    item, matching the closed-form cost ``c0 + (alpha*p0 + p1)*c1``.
    """
    if allocation.n_arms != 2:
        raise ValueError(
            f"unicorn_rank needs exactly 2 arms, got {allocation.n_arms}; "
            "use unicorn_multi_rank for multiple treatments"
        )
    if config.mixing_mode is MixingMode.LIMITED_MIXING:
        raise ValueError("limited mixing is a multi-treatment mode; use unicorn_multi_rank")
    return _mixed_rerank(
        session, allocation, config.alpha, sample_all_arms=False,
        tie_policy=config.tie_policy, rng=rng, models=models, restrict=None,
        label="unicorn",
    )


def unicorn_multi_rank(
    session: Session,
    allocation: TreatmentAllocation,
    config: DesignConfig,
    rng: Rng,
    models: Sequence[ScoringModel] | None = None,
) -> DesignOutput:
    """Multi-treatment reranking in greater- or limited-mixing form.

    Greater mixing keeps a (1-alpha) fraction of control items fixed and
    mixes everything else; limited mixing samples an alpha fraction from
    every arm (control included) and lets each arm's unsampled items
    re-sort within their own slots.
    """
    if allocation.n_arms < 2:
        raise ValueError("at least one treatment arm beyond control is required")
    if config.mixing_mode is MixingMode.SINGLE_TREATMENT:
        raise ValueError("pick MixingMode.GREATER_MIXING or LIMITED_MIXING for multi-treatment")
    limited = config.mixing_mode is MixingMode.LIMITED_MIXING
    return _mixed_rerank(
        session, allocation, config.alpha, sample_all_arms=limited,
        tie_policy=config.tie_policy, rng=rng, models=models, restrict=None,
        label="unicorn_limited" if limited else "unicorn_greater",
    )


def candgen_rank(
    session: Session,
    allocation: TreatmentAllocation,
    c0: CandidateGenerator,
    c1: CandidateGenerator,
    config: DesignConfig,
    rng: Rng,
    models: Sequence[ScoringModel] | None = None,
) -> DesignOutput:
    """Two-phase variant: candidate generation feeding the reranker.

    The item set becomes the union of both generators' selections; a model
    scores only its own generator's picks, every other item getting
    MINUS_INF for that model (unscored, hence uncharged). The union is
    then reranked exactly as in :func:`unicorn_rank`.
    """
    if allocation.n_arms != 2:
        raise ValueError("candidate-generation reranking is defined for exactly 2 arms")
    universe = set(session.item_ids)
    selections: list[frozenset[ItemId]] = []
    for idx, gen in enumerate((c0, c1)):
        generate = getattr(gen, "generate", gen)
        picked = frozenset(generate(session))
        stray = picked - universe
        if stray:
            raise ValueError(f"candidate generator {idx} selected unknown items: {sorted(stray)[:5]}")
        selections.append(picked)
    union = selections[0] | selections[1]
    if not union:
        raise ValueError("both candidate sets are empty")

    sub_session = Session(
        session_id=session.session_id,
        items=tuple((i, p) for i, p in session.items if i in union),
        scores=session.scores,
    )
    if models is None:
        models = session_table_models(session, allocation.n_arms)
    return _mixed_rerank(
        sub_session, allocation, config.alpha, sample_all_arms=False,
        tie_policy=config.tie_policy, rng=rng, models=models,
        restrict={0: selections[0], 1: selections[1]},
        label="unicorn_candgen",
    )


def oasis_rank(
    session: Session,
    allocation: TreatmentAllocation,
    tie_policy: TiePolicy = TiePolicy.RANDOM,
    rng: Rng | None = None,
    models: Sequence[ScoringModel] | None = None,
) -> DesignOutput:
    """Score-based baseline: rank by session-normalized own-arm scores.

    Each arm's scores are normalized by their session sum and every item
    is ranked by its own arm's normalized score. All models score the full
    session (the normalizing sums need every item), so the ledger charges
    one call per (model, item) pair. Scores must be strictly positive.
    """
    n_arms = allocation.n_arms
    if models is None:
        models = session_table_models(session, n_arms)
    ledger = CostLedger()
    cache = _ScoreCache(session, models, ledger)
    item_list = list(session.item_ids)
    arm_of = {i: allocation.arm_of(p) for i, p in session.items}

    normalized: dict[int, dict[ItemId, float]] = {}
    for k in range(n_arms):
        table = cache.table(k, item_list)
        vals = {}
        for i, v in table.items():
            if v is MINUS_INF or float(v) <= 0.0:  # type: ignore[arg-type]
                raise ValueError(
                    f"normalization requires strictly positive scores; "
                    f"model {k} scored item {i} as {v!r}"
                )
            vals[i] = float(v)  # type: ignore[arg-type]
        total = sum(vals.values())
        normalized[k] = {i: v / total for i, v in vals.items()}

    blended = {i: normalized[arm_of[i]][i] for i in item_list}
    ranking = rank_by_scores(blended, tie_policy, rng, arms=arm_of, _validate=False)
    selection = MixingSelection(
        items_by_arm=items_by_arm(session, allocation),
        sampled_control=frozenset(),
        mixed=frozenset(),
        positions=(),
    )
    return DesignOutput(ranking=ranking, ledger=ledger, selection=selection,
                        design="oasis", alpha=None)


SMALL_RAMP_FRACTIONS: tuple[float, float, float] = (0.8, 0.1, 0.1)


def small_ramp_binary_view(allocation: TreatmentAllocation) -> TreatmentAllocation:
    """Collapse a 3-arm small-ramp allocation to control-model/treatment-model arms.

    Holdout and measurement control map to arm 0 (scored by the control
    model); measurement treatment maps to arm 1. Reusable across sessions.
    """
    if allocation.n_arms != 3:
        raise ValueError(
            f"small-ramp baseline expects 3 arms (holdout, control, treatment), "
            f"got {allocation.n_arms}"
        )
    if allocation.fractions is not None:
        if any(abs(a - b) > 1e-9 for a, b in zip(allocation.fractions, SMALL_RAMP_FRACTIONS)):
            warnings.warn(
                f"small-ramp baseline is calibrated for fractions {SMALL_RAMP_FRACTIONS}, "
                f"got {allocation.fractions}; proceeding anyway",
                stacklevel=2,
            )
    return TreatmentAllocation(
        arms={p: (1 if k == 2 else 0) for p, k in allocation.arms.items()},
        fractions=(
            (allocation.fractions[0] + allocation.fractions[1], allocation.fractions[2])
            if allocation.fractions is not None
            else None
        ),
        seed=allocation.seed,
    )


def small_ramp_rank(
    session: Session,
    allocation: TreatmentAllocation,
    rng: Rng,
    tie_policy: TiePolicy = TiePolicy.RANDOM,
    models: Sequence[ScoringModel] | None = None,
    binary_view: TreatmentAllocation | None = None,
) -> DesignOutput:
    """Small-ramp baseline: full mixing over a tiny measured treatment arm.

    Expects a three-arm allocation (holdout, measurement control,
    measurement treatment; nominally 80/10/10). Holdout and measurement
    control are scored by the control model, measurement treatment by the
    treatment model, and the session is reranked with full mixing.
    Downstream effect estimation should use only the two measurement arms.
    ``binary_view`` accepts a precomputed :func:`small_ramp_binary_view`
    when ranking many sessions under one allocation.
    """
    binary = binary_view if binary_view is not None else small_ramp_binary_view(allocation)
    if models is None:
        models = session_table_models(session, 2)
    out = _mixed_rerank(
        session, binary, alpha=1.0, sample_all_arms=False,
        tie_policy=tie_policy, rng=rng, models=models, restrict=None,
        label="small_ramp",
    )
    return DesignOutput(ranking=out.ranking, ledger=out.ledger, selection=out.selection,
                        design="small_ramp", alpha=1.0)
