"""Collision resolution for raw semantic IDs.

Items sharing a raw code sequence are reassigned one by one. Each item
prefers changing its last-level code, walking candidates in distance order,
and backtracks to earlier levels only when every combination below is taken.
Non-colliding items are never touched.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence, Set, Tuple

import numpy as np


class CapacityError(ValueError):
    """More items than the code space can hold."""


@dataclass(frozen=True)
class DistanceTensor:
    """Squared distances from each item's level residuals to every codeword.

    d has shape (n, L, K_max); levels with fewer than K_max codewords are
    padded with +inf so padded slots always rank last. k_per_level records
    each level's true codeword count.
    """
    d: np.ndarray
    k_per_level: Tuple[int, ...]

    @property
    def n(self) -> int:
        return self.d.shape[0]

    @property
    def levels(self) -> int:
        return self.d.shape[1]


@dataclass(frozen=True)
class IdAssignment:
    codes_by_item: List[Tuple[int, ...]]
    changed: Set[int]


def _levels_list(codebooks) -> List[np.ndarray]:
    if isinstance(codebooks, np.ndarray):
        if codebooks.ndim != 3:
            raise ValueError("codebooks array must have shape (L, K, dim)")
        return [codebooks[l] for l in range(codebooks.shape[0])]
    return [np.asarray(c, dtype=np.float64) for c in codebooks]


def compute_distance_tensor(results: Sequence, codebooks) -> DistanceTensor:
    """d[i][l][k] = squared distance from item i's level-l residual to c_k^(l)."""
    levels = _levels_list(codebooks)
    n_levels = len(levels)
    dim = levels[0].shape[1]
    for res in results:
        if res.residuals.shape != (n_levels + 1, dim):
            raise ValueError(
                f"residuals shape {res.residuals.shape} does not match "
                f"{n_levels} levels of dim {dim}"
            )
    k_per_level = tuple(c.shape[0] for c in levels)
    k_max = max(k_per_level)
    n = len(results)
    d = np.full((n, n_levels, k_max), np.inf)
    for l, C in enumerate(levels):
        R = np.stack([res.residuals[l] for res in results])
        d[:, l, : C.shape[0]] = ((R[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
    return DistanceTensor(d=d, k_per_level=k_per_level)


def _search_codes(dist: np.ndarray, k_per_level: Tuple[int, ...],
                  occupied: Set[Tuple[int, ...]]):
    """First unoccupied ID in backtracking order.

    Candidates at each level are ranked by distance (stable sort, so ties go
    to the lowest codeword index); rank vectors are tried in lexicographic
    order with the last level moving fastest, which makes "advance the last
    level, then backtrack" a plain odometer.
    """
    n_levels = len(k_per_level)
    perms = [np.argsort(dist[l][: k_per_level[l]], kind="stable")
             for l in range(n_levels)]
    ranks = [0] * n_levels
    while True:
        codes = tuple(int(perms[l][ranks[l]]) for l in range(n_levels))
        if codes not in occupied:
            return codes
        level = n_levels - 1
        while level >= 0:
            ranks[level] += 1
            if ranks[level] < k_per_level[level]:
                for deeper in range(level + 1, n_levels):
                    ranks[deeper] = 0
                break
            level -= 1
        else:
            return None


def resolve_collisions(raw: Sequence[Sequence[int]], results: Sequence,
                       codebooks) -> IdAssignment:
    """Reassign colliding items to globally unique IDs.

    Groups of identical raw IDs are processed in catalog order of their first
    member; within a group, the item with the smallest minimum last-level
    distance goes first so the most confident assignment keeps its choice.
    """
    levels = _levels_list(codebooks)
    k_per_level = tuple(c.shape[0] for c in levels)
    capacity = int(np.prod(k_per_level, dtype=np.int64))
    n = len(raw)
    if n > capacity:
        raise CapacityError(
            f"{n} items exceed the ID capacity {capacity} "
            f"(K per level {k_per_level})"
        )
    raw_ids = [tuple(int(c) for c in codes) for codes in raw]
    counts: Dict[Tuple[int, ...], int] = {}
    for cid in raw_ids:
        counts[cid] = counts.get(cid, 0) + 1

    occupied = {cid for cid, c in counts.items() if c == 1}
    final = list(raw_ids)
    changed: Set[int] = set()

    groups: Dict[Tuple[int, ...], List[int]] = {}
    for pos, cid in enumerate(raw_ids):
        if counts[cid] > 1:
            groups.setdefault(cid, []).append(pos)

    for positions in groups.values():
        tensor = compute_distance_tensor([results[p] for p in positions],
                                         codebooks)
        last = tensor.d[:, -1, : k_per_level[-1]]
        min_last = last.min(axis=1)
        order = sorted(range(len(positions)),
                       key=lambda i: (min_last[i], positions[i]))
        for i in order:
            pos = positions[i]
            codes = _search_codes(tensor.d[i], k_per_level, occupied)
            if codes is None:
                raise RuntimeError(
                    "search space exhausted despite spare capacity"
                )
            occupied.add(codes)
            final[pos] = codes
            if codes != raw_ids[pos]:
                changed.add(pos)
    return IdAssignment(codes_by_item=final, changed=changed)


def verify_unique(assignment: IdAssignment, total_items: int) -> bool:
    codes = assignment.codes_by_item
    return len(codes) == total_items and len(set(codes)) == total_items
