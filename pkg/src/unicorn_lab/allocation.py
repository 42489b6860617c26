"""Producer-to-arm assignment and per-session mixing-set sampling.

Assignment is a stateless keyed hash of (seed, producer id) bucketed by
cumulative ramp fractions, so the same seed always reproduces the same
split without storing a table. Mixing-set sampling draws once per
producer (not per item), so two items of the same producer in one session
always share their sampling fate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import ItemId, ProducerId, Session
from .rng import Rng

_U64 = np.uint64
_GOLDEN = _U64(0x9E3779B97F4A7C15)
_FRACTION_TOL = 1e-12

RampFractions = tuple[float, ...]


def validate_fractions(fractions: Sequence[float]) -> RampFractions:
    """Normalize ramp fractions to a tuple, enforcing p_k in [0,1], sum 1."""
    fr = tuple(float(p) for p in fractions)
    if len(fr) < 1:
        raise ValueError("at least one ramp fraction is required")
    for p in fr:
        if not (0.0 <= p <= 1.0):
            raise ValueError(f"ramp fraction {p} outside [0, 1]")
    if abs(sum(fr) - 1.0) > _FRACTION_TOL:
        raise ValueError(f"ramp fractions must sum to 1, got {sum(fr)!r}")
    return fr


def _mix64(x: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer; uint64 arithmetic wraps modulo 2^64 by design.
    with np.errstate(over="ignore"):
        x = x.astype(np.uint64, copy=True)
        x ^= x >> _U64(30)
        x *= _U64(0xBF58476D1CE4E5B9)
        x ^= x >> _U64(27)
        x *= _U64(0x94D049BB133111EB)
        x ^= x >> _U64(31)
    return x


def hash_unit(seed, ids) -> np.ndarray:
    """Keyed hash of (seed, id) mapped to [0, 1); broadcasts over arrays."""
    with np.errstate(over="ignore"):
        seed_arr = np.asarray(seed, dtype=np.uint64) + _GOLDEN
        id_arr = np.asarray(ids, dtype=np.uint64) + _GOLDEN
    h = _mix64(_mix64(seed_arr) ^ _mix64(id_arr))
    return (h >> _U64(11)).astype(np.float64) * (2.0 ** -53)


def bucket_arms(fractions: RampFractions, units: np.ndarray) -> np.ndarray:
    """Bucket values in [0,1) by cumulative ramp fractions."""
    edges = np.cumsum(np.asarray(fractions, dtype=np.float64))
    arms = np.searchsorted(edges, units, side="right")
    # Guard against cumulative rounding leaving the last edge below 1.
    return np.minimum(arms, len(fractions) - 1).astype(np.int64)


def assign_bulk(producer_ids, fractions: Sequence[float], seed: int) -> np.ndarray:
    """Vectorized arm assignment; same hash as :func:`assign`."""
    fr = validate_fractions(fractions)
    ids = np.asarray(producer_ids, dtype=np.int64)
    if ids.size and ids.min() < 0:
        raise ValueError("producer ids must be non-negative")
    return bucket_arms(fr, hash_unit(int(seed), ids))


def session_allocation_seed(master_seed: int, session_index) -> np.ndarray:
    """Per-session assignment seed(s); vectorizes over session indices."""
    base = _mix64(np.asarray(master_seed, dtype=np.uint64) ^ _U64(0xA076_1D64_78BD_642F))
    with np.errstate(over="ignore"):
        shifted = base + np.asarray(session_index, dtype=np.uint64) * _GOLDEN
    return _mix64(shifted)


@dataclass(frozen=True)
class TreatmentAllocation:
    """Producer -> arm map plus the fractions and seed that produced it.

    ``fractions``/``seed`` are None for allocations reloaded from audit
    CSVs, where only the realized map is known.
    """

    arms: Mapping[ProducerId, int]
    fractions: RampFractions | None = None
    seed: int | None = None

    def arm_of(self, producer: ProducerId) -> int:
        try:
            return self.arms[producer]
        except KeyError:
            raise ValueError(f"producer {producer} is not in the allocation") from None

    @property
    def n_arms(self) -> int:
        if self.fractions is not None:
            return len(self.fractions)
        return max(self.arms.values(), default=-1) + 1

    def producers_in(self, arm: int) -> list[ProducerId]:
        return sorted(p for p, k in self.arms.items() if k == arm)

    def to_csv(self, path) -> None:
        """Two-column (producer_id, arm) export for audit."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["producer_id", "arm"])
            for p in sorted(self.arms):
                writer.writerow([p, self.arms[p]])

    @staticmethod
    def from_csv(path) -> "TreatmentAllocation":
        arms: dict[ProducerId, int] = {}
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:2] != ["producer_id", "arm"]:
                raise ValueError(f"unexpected allocation CSV header: {header}")
            for row in reader:
                arms[int(row[0])] = int(row[1])
        return TreatmentAllocation(arms=arms)


def assign(
    producers: Iterable[ProducerId], fractions: Sequence[float], seed: int
) -> TreatmentAllocation:
    """I.i.d. categorical assignment of producers to arms.

    Deterministic given the seed: each producer's bucket is a keyed hash
    of (seed, producer id), so re-running or re-ordering the producer list
    yields the identical map.
    """
    ids = list(producers)
    if len(set(ids)) != len(ids):
        raise ValueError("producer ids must be distinct")
    fr = validate_fractions(fractions)
    arms = assign_bulk(ids, fr, seed)
    return TreatmentAllocation(
        arms={p: int(k) for p, k in zip(ids, arms)}, fractions=fr, seed=int(seed)
    )


@dataclass(frozen=True)
class MixingSelection:
    """Per-session mixing state: items per arm, sampled subset, positions.

    ``mixed`` is the set of items that get reranked; ``positions`` is the
    sorted list of slots they collectively occupy (filled in by the
    design, None before reranking).
    """

    items_by_arm: Mapping[int, tuple[ItemId, ...]]
    sampled_control: frozenset[ItemId]
    mixed: frozenset[ItemId]
    positions: tuple[int, ...] | None = None


def items_by_arm(session: Session, allocation: TreatmentAllocation) -> dict[int, tuple[ItemId, ...]]:
    out: dict[int, list[ItemId]] = {}
    for i, p in session.items:
        out.setdefault(allocation.arm_of(p), []).append(i)
    return {k: tuple(v) for k, v in out.items()}


def sample_alpha_producers(
    session: Session,
    allocation: TreatmentAllocation,
    alpha: float,
    rng: Rng,
    arms: Iterable[int],
) -> frozenset[ProducerId]:
    """Independent Bernoulli(alpha) sample of the session's producers in ``arms``.

    One draw per producer in ascending producer order, so the result is
    independent of item order and shared by all of a producer's items.
    Draws are consumed even at alpha in {0, 1} to keep downstream stream
    positions comparable across alphas.
    """
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    arm_set = set(arms)
    arm_map = allocation.arms
    try:
        candidates = sorted({p for _, p in session.items if arm_map[p] in arm_set})
    except KeyError as exc:
        raise ValueError(f"producer {exc.args[0]} is not in the allocation") from None
    if not candidates:
        return frozenset()
    draws = rng.random(len(candidates))
    return frozenset(p for p, u in zip(candidates, draws) if u < alpha)


def sample_p0_star(
    session: Session,
    allocation: TreatmentAllocation,
    alpha: float,
    rng: Rng,
) -> MixingSelection:
    """Sample the control-arm subset that joins the mixing set.

    Each arm-0 producer present in the session is included independently
    with probability alpha; the mixing set is their items together with
    every treatment-arm item.
    """
    by_arm = items_by_arm(session, allocation)
    sampled_producers = sample_alpha_producers(session, allocation, alpha, rng, arms=(0,))
    sampled_items = frozenset(
        i for i, p in session.items if allocation.arm_of(p) == 0 and p in sampled_producers
    )
    treatment_items = frozenset(
        i for i, p in session.items if allocation.arm_of(p) >= 1
    )
    return MixingSelection(
        items_by_arm=by_arm,
        sampled_control=sampled_items,
        mixed=sampled_items | treatment_items,
        positions=None,
    )
