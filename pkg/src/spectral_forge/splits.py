"""Seeded stratified fold assignment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class FoldPlan:
    k: int
    assignments: np.ndarray  # fold index per sample
    seed: int
    stratified: bool = True

    def __eq__(self, other):
        return (isinstance(other, FoldPlan) and self.k == other.k and self.seed == other.seed
                and np.array_equal(self.assignments, other.assignments))

    def fold(self, f: int) -> tuple[np.ndarray, np.ndarray]:
        """``(train_idx, test_idx)`` for fold ``f``."""
        test = np.flatnonzero(self.assignments == f)
        train = np.flatnonzero(self.assignments != f)
        return train, test

    def folds(self):
        for f in range(self.k):
            yield self.fold(f)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.k)


def stratified_kfold(labels, k: int = 5, seed: int = 0) -> FoldPlan:
    """Shuffle each class with a seeded generator, then deal its members
    round-robin into folds. The starting fold rotates from class to class so
    that total fold sizes stay balanced too."""
    labels = np.asarray(labels)
    if k < 2:
        raise ValueError("k must be >= 2")
    rng = np.random.default_rng(seed)
    out = np.empty(labels.size, dtype=np.int64)
    offset = 0
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        members = members[rng.permutation(members.size)]
        out[members] = (offset + np.arange(members.size)) % k
        offset = (offset + members.size) % k
    return FoldPlan(k, out, seed)


def stratified_subset(labels, fraction: float, seed: int = 0, min_per_class: int = 1) -> np.ndarray:
    """Sorted indices of a class-stratified random subset of size ~``fraction``."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    picked = []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        n = int(round(fraction * members.size))
        n = min(members.size, max(min_per_class, n))
        picked.append(rng.choice(members, size=n, replace=False))
    return np.sort(np.concatenate(picked))


def stratified_sample(labels, size: int, seed: int = 0) -> np.ndarray:
    """Sorted indices of exactly ``size`` samples drawn proportionally per class
    (largest-remainder rounding, at least one per class while size allows)."""
    labels = np.asarray(labels)
    if size >= labels.size:
        return np.arange(labels.size)
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(labels, return_counts=True)
    quota = counts * size / labels.size
    take = np.floor(quota).astype(int)
    floor = np.ones_like(take) if size >= classes.size else np.zeros_like(take)
    take = np.minimum(np.maximum(take, floor), counts)
    while take.sum() > size:
        # trim the most over-quota class that is still above its minimum
        take[np.argmax(np.where(take > floor, take - quota, -np.inf))] -= 1
    rem = quota - take
    for c in np.argsort(-rem, kind="stable"):
        if take.sum() >= size:
            break
        if take[c] < counts[c]:
            take[c] += 1
    picked = [rng.choice(np.flatnonzero(labels == c), size=t, replace=False) for c, t in zip(classes, take)]
    return np.sort(np.concatenate(picked))
