"""Core domain types and the two ranking primitives every design builds on.

A :class:`Session` is one consumer request: an ordered set of items, each
owned by a producer, plus optional per-model score tables. Scores are
ranked descending (higher score, better rank) by :func:`rank_by_scores`,
and :func:`ideal_rank` computes the per-item ideal position: the rank an
item would have if the whole session were ranked by its own arm's model.
The ideal assignment may place two items at the same position; such
conflicts are exactly what the reranking designs trade off against cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Callable, Iterable, Mapping, Sequence, Union

from .rng import Rng

if TYPE_CHECKING:
    from .allocation import TreatmentAllocation

ItemId = int
ProducerId = int


class _MinusInf:
    """Sentinel score ranking below every finite value.

    A dedicated singleton rather than ``float("-inf")`` so that score
    validation can reject accidental float infinities while the
    candidate-generation designs still have an explicit "never rank this
    above a scored item" value with total, portable ordering.
    """

    _instance = None

    def __new__(cls) -> "_MinusInf":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "MINUS_INF"

    def __reduce__(self):
        return (_minus_inf_instance, ())


def _minus_inf_instance() -> "_MinusInf":
    return _MinusInf()


MINUS_INF = _MinusInf()

Score = Union[float, _MinusInf]


class TiePolicy(Enum):
    """How equal scores are ordered.

    RANDOM breaks each tie with independent fair draws from the provided
    generator. FAVOR_HIGHER_ARM deterministically places the item whose
    treatment-arm index is larger first (same-arm ties fall back to item
    id, so the result is fully deterministic).
    """

    RANDOM = "random"
    FAVOR_HIGHER_ARM = "favor-higher-arm"


@dataclass(frozen=True)
class Session:
    """One consumer request: ordered (item, producer) pairs plus score tables.

    ``scores`` maps model index -> item -> score and may be empty when
    scoring is done lazily through model callables.
    """

    session_id: int
    items: tuple[tuple[ItemId, ProducerId], ...]
    scores: Mapping[int, Mapping[ItemId, float]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.items) == 0:
            raise ValueError("session must contain at least one item")
        ids = tuple(i for i, _ in self.items)
        if len(set(ids)) != len(ids):
            raise ValueError("item ids within a session must be distinct")
        object.__setattr__(self, "_item_ids", ids)
        object.__setattr__(self, "_producer_index", dict(self.items))

    @property
    def item_ids(self) -> tuple[ItemId, ...]:
        return self._item_ids  # type: ignore[attr-defined]

    def producer_of(self, item: ItemId) -> ProducerId:
        return self._producer_index[item]  # type: ignore[attr-defined]

    def __len__(self) -> int:
        return len(self.items)


@dataclass
class CostLedger:
    """Exact count of scoring-function invocations per model."""

    counts: dict[int, int] = field(default_factory=dict)

    def record(self, model_index: int, n: int = 1) -> None:
        if n < 0:
            raise ValueError("cannot record a negative number of calls")
        self.counts[model_index] = self.counts.get(model_index, 0) + n

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def merged(self, *others: "CostLedger") -> "CostLedger":
        out = CostLedger(dict(self.counts))
        for other in others:
            for k, n in other.counts.items():
                out.counts[k] = out.counts.get(k, 0) + n
        return out

    @staticmethod
    def merge(ledgers: Iterable["CostLedger"]) -> "CostLedger":
        out = CostLedger()
        for ledger in ledgers:
            for k, n in ledger.counts.items():
                out.counts[k] = out.counts.get(k, 0) + n
        return out


ScoringModel = Callable[[Session, ItemId], Score]


@dataclass
class CountedModel:
    """Call-counting wrapper around a scoring model.

    Every invocation is charged to ``ledger`` under ``model_index``; the
    designs rely on this wrapper (plus per-call score caching) so measured
    cost is exactly the number of model applications.
    """

    base: ScoringModel
    model_index: int
    ledger: CostLedger

    def __call__(self, session: Session, item: ItemId) -> Score:
        self.ledger.record(self.model_index)
        return self.base(session, item)


def validate_score(value: Score, context: str = "score") -> Score:
    """Check a score is finite or the MINUS_INF sentinel."""
    if type(value) is float:  # hot path: simulator scores are plain floats
        if math.isfinite(value):
            return value
    if value is MINUS_INF:
        return value
    try:
        v = float(value)  # type: ignore[arg-type]
    except (TypeError, ValueError):
        raise ValueError(f"{context} must be a real number or MINUS_INF, got {value!r}")
    if math.isnan(v):
        raise ValueError(f"{context} is NaN")
    if math.isinf(v):
        raise ValueError(f"{context} is a float infinity; use MINUS_INF for unscored items")
    return v


def order_by_scores(
    scores: Mapping[ItemId, Score],
    tie_policy: TiePolicy = TiePolicy.RANDOM,
    rng: Rng | None = None,
    arms: Mapping[ItemId, int] | None = None,
    _validate: bool = True,
) -> list[ItemId]:
    """Items in descending score order with ties resolved per policy.

    MINUS_INF items come after every finite-score item (and tie with each
    other). With RANDOM ties an ``rng`` is required only when a tie is
    actually present; with FAVOR_HIGHER_ARM an ``arms`` mapping must cover
    every tied item.
    """
    if not scores:
        raise ValueError("scores must be non-empty")
    items = list(scores)
    values = list(scores.values())
    sentinel = False
    for pos, v in enumerate(values):
        if _validate:
            v = validate_score(v, context=f"score of item {items[pos]}")
            values[pos] = v
        if v is MINUS_INF:
            sentinel = True

    if sentinel:
        keys = [(1, 0.0) if v is MINUS_INF else (0, -v) for v in values]
    else:
        keys = None

    if keys is None:
        has_ties = len(set(values)) < len(items)
    else:
        has_ties = len(set(keys)) < len(items)
    if not has_ties:
        if keys is None:
            order = sorted(range(len(items)), key=values.__getitem__, reverse=True)
        else:
            order = sorted(range(len(items)), key=keys.__getitem__)
        return [items[j] for j in order]

    if tie_policy is TiePolicy.RANDOM:
        if rng is None:
            raise ValueError("tied scores with TiePolicy.RANDOM require an rng")
        draws = rng.random(len(items))
        if keys is None:
            order = sorted(range(len(items)), key=lambda j: (-values[j], draws[j]))
        else:
            order = sorted(range(len(items)), key=lambda j: (*keys[j], draws[j]))
        return [items[j] for j in order]

    if arms is None:
        raise ValueError("TiePolicy.FAVOR_HIGHER_ARM requires an arms mapping")
    missing = [i for i in items if i not in arms]
    if missing:
        raise ValueError(f"arms mapping missing items: {missing[:5]}")
    if keys is None:
        order = sorted(
            range(len(items)), key=lambda j: (-values[j], -arms[items[j]], items[j])
        )
    else:
        order = sorted(
            range(len(items)), key=lambda j: (*keys[j], -arms[items[j]], items[j])
        )
    return [items[j] for j in order]


def rank_by_scores(
    scores: Mapping[ItemId, Score],
    tie_policy: TiePolicy = TiePolicy.RANDOM,
    rng: Rng | None = None,
    arms: Mapping[ItemId, int] | None = None,
    _validate: bool = True,
) -> dict[ItemId, int]:
    """Permutation ranking (1 = top) in descending score order.

    Args:
        scores: item -> finite score or MINUS_INF; must be non-empty.
        tie_policy: how equal scores are ordered.
        rng: source of tie draws for TiePolicy.RANDOM.
        arms: item -> arm index, needed by TiePolicy.FAVOR_HIGHER_ARM.

    Returns:
        Mapping item -> rank, a bijection onto 1..len(scores).
    """
    order = order_by_scores(scores, tie_policy, rng, arms, _validate=_validate)
    return {item: pos for pos, item in enumerate(order, start=1)}


def ideal_rank(
    session: Session,
    allocation: "TreatmentAllocation",
    tie_policy: TiePolicy = TiePolicy.RANDOM,
    rng: Rng | None = None,
) -> dict[ItemId, int]:
    """Per-item ideal position: rank under the item's own arm's full ranking.

    For each arm k present in the session, all items are ranked by model
    k's scores; an item in arm k keeps its rank from that full ranking.
    The result need not be a permutation: items from different arms can
    claim the same position (a conflict).
    """
    arm_of = {i: allocation.arm_of(p) for i, p in session.items}
    out: dict[ItemId, int] = {}
    for k in sorted(set(arm_of.values())):
        table = session.scores.get(k)
        if table is None:
            raise ValueError(f"session {session.session_id} has no score table for arm {k}")
        try:
            full_scores = {i: table[i] for i in session.item_ids}
        except KeyError as exc:
            raise ValueError(
                f"score table for arm {k} is missing item {exc.args[0]} "
                f"in session {session.session_id}"
            ) from None
        full = rank_by_scores(full_scores, tie_policy, rng, arms=arm_of)
        for i in session.item_ids:
            if arm_of[i] == k:
                out[i] = full[i]
    return out


def is_permutation(ranking: Mapping[ItemId, int]) -> bool:
    """True when ranks are a bijection onto 1..n."""
    return sorted(ranking.values()) == list(range(1, len(ranking) + 1))


def session_table_models(session: Session, n_models: int) -> list[ScoringModel]:
    """Scoring models that read the session's embedded score tables."""
    missing = [k for k in range(n_models) if k not in session.scores]
    if missing:
        raise ValueError(
            f"session {session.session_id} lacks score tables for model(s) {missing}"
        )
    return [_TableModel(k) for k in range(n_models)]


@dataclass(frozen=True)
class _TableModel:
    model_index: int

    def __call__(self, session: Session, item: ItemId) -> Score:
        table = session.scores.get(self.model_index)
        if table is None or item not in table:
            raise ValueError(
                f"no stored score for model {self.model_index}, item {item} "
                f"in session {session.session_id}"
            )
        return table[item]
