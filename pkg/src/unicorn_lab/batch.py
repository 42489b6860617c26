"""Vectorized reranking for batches of equal-size sessions.

Used by the Monte Carlo verification and the big design sweeps, where
millions of per-session runs would dominate wall time. Sessions are rows
of (n_sessions, n_slots) arrays and every item is its own producer, which
matches the synthetic score environments. Equivalence with the
per-session implementation is covered by dedicated tests.
"""

from __future__ import annotations

import numpy as np

from .core import TiePolicy
from .rng import Rng


def rank_rows(scores: np.ndarray) -> np.ndarray:
    """Row-wise 1-based ranks in descending score order (stable on ties)."""
    scores = np.asarray(scores)
    order = np.argsort(-scores, axis=1, kind="stable")
    ranks = np.empty_like(order)
    cols = np.broadcast_to(np.arange(1, scores.shape[1] + 1), scores.shape)
    np.put_along_axis(ranks, order, cols, axis=1)
    return ranks


def ideal_ranks(r0: np.ndarray, r1: np.ndarray, arm: np.ndarray) -> np.ndarray:
    """Per-item ideal positions given both full rankings and arm flags."""
    return np.where(arm == 1, r1, r0)


def unicorn_batch_ranks(
    r0: np.ndarray,
    r1: np.ndarray,
    arm: np.ndarray,
    sampled: np.ndarray,
    rng: Rng,
    tie_policy: TiePolicy = TiePolicy.RANDOM,
) -> tuple[np.ndarray, np.ndarray]:
    """Single-treatment reranking across all rows at once.

    Args:
        r0, r1: (N, L) full control/treatment rank matrices.
        arm: (N, L) 0/1 arm flags per item.
        sampled: (N, L) bool, control items whose producer joined the
            mixing set (ignored for treatment items). Rows where items
            share a producer must share the flag; the synthetic
            environments have one producer per item.
        rng: tie-break stream (one uniform per entry).

    Returns:
        (design_ranks, treatment_calls): (N, L) permutation rows and the
        per-row count of treatment-model scorings (= mixing-set size).
    """
    r0 = np.asarray(r0)
    n_slots = r0.shape[1]
    big = np.int64(2 * n_slots + 16)
    mix = (arm == 1) | ((arm == 0) & np.asarray(sampled, dtype=bool))

    # Relative rank of each mixing item within the mixing set under its
    # own model; non-mixing entries get padding ranks that are never read.
    rel0 = rank_rows(-np.where(mix, r0, big))
    rel1 = rank_rows(-np.where(mix, r1, big))
    rank_score = np.where(arm == 1, rel1, rel0).astype(np.float64)

    if tie_policy is TiePolicy.RANDOM:
        tie = rng.random(r0.shape)
    elif tie_policy is TiePolicy.FAVOR_HIGHER_ARM:
        tie = -0.25 * arm.astype(np.float64)
    else:
        raise ValueError(f"unsupported tie policy {tie_policy}")
    key = np.where(mix, rank_score + tie, float(big))

    order_mix = np.argsort(key, axis=1, kind="stable")
    pos_sorted = np.sort(np.where(mix, r0, big), axis=1)
    assigned = np.empty_like(r0)
    np.put_along_axis(assigned, order_mix, pos_sorted, axis=1)
    design = np.where(mix, assigned, r0)
    return design, mix.sum(axis=1)


def gaussian_scores(rng: Rng, n_sessions: int, n_slots: int, rho: float) -> tuple[np.ndarray, np.ndarray]:
    """Bivariate standard-normal score pairs with correlation rho."""
    if not (-1.0 <= rho <= 1.0):
        raise ValueError(f"correlation must lie in [-1, 1], got {rho}")
    z = rng.standard_normal((2, n_sessions, n_slots))
    t0 = z[0]
    t1 = rho * z[0] + np.sqrt(max(0.0, 1.0 - rho * rho)) * z[1]
    return t0, t1
