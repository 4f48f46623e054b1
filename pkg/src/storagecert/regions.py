"""Axis-aligned boxes and finite unions of boxes over named variables."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class RegionError(ValueError):
    pass


@dataclass(frozen=True)
class Box:
    names: tuple[str, ...]
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        if not (len(self.names) == len(self.lo) == len(self.hi)):
            raise RegionError("box names/lo/hi lengths differ")
        for n, a, b in zip(self.names, self.lo, self.hi):
            if not a <= b:
                raise RegionError(f"empty interval [{a}, {b}] for {n}")

    @classmethod
    def from_intervals(cls, names: Sequence[str], intervals: Iterable[Sequence[float]]) -> "Box":
        intervals = [tuple(map(float, iv)) for iv in intervals]
        for iv in intervals:
            if len(iv) != 2:
                raise RegionError(f"interval {iv} must have two endpoints")
        if len(intervals) != len(names):
            raise RegionError(f"{len(intervals)} intervals for {len(names)} variables")
        return cls(tuple(names), tuple(a for a, _ in intervals), tuple(b for _, b in intervals))

    @property
    def dim(self) -> int:
        return len(self.names)

    def intervals(self) -> list[list[float]]:
        return [[a, b] for a, b in zip(self.lo, self.hi)]

    def widths(self) -> np.ndarray:
        return np.array(self.hi) - np.array(self.lo)

    def center(self) -> np.ndarray:
        return (np.array(self.lo) + np.array(self.hi)) / 2

    def contains(self, point: Sequence[float], tol: float = 0.0) -> bool:
        return all(a - tol <= v <= b + tol for a, v, b in zip(self.lo, point, self.hi))

    def contains_box(self, other: "Box", tol: float = 0.0) -> bool:
        return all(a - tol <= c and d <= b + tol for a, b, c, d in zip(self.lo, self.hi, other.lo, other.hi))

    def intersects(self, other: "Box") -> bool:
        return all(c <= b and a <= d for a, b, c, d in zip(self.lo, self.hi, other.lo, other.hi))

    def corners(self) -> np.ndarray:
        return np.array(list(itertools.product(*zip(self.lo, self.hi))), dtype=float).reshape(-1, self.dim)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        u = rng.random((count, self.dim))
        return np.array(self.lo) + u * self.widths()

    def product(self, other: "Box") -> "Box":
        return Box(self.names + other.names, self.lo + other.lo, self.hi + other.hi)

    def rename(self, mapping: dict[str, str]) -> "Box":
        return Box(tuple(mapping.get(n, n) for n in self.names), self.lo, self.hi)


@dataclass(frozen=True)
class Region:
    boxes: tuple[Box, ...]

    def __post_init__(self):
        if self.boxes:
            names = self.boxes[0].names
            if any(b.names != names for b in self.boxes):
                raise RegionError("union members must share the same variables")

    @classmethod
    def of(cls, *boxes: Box) -> "Region":
        return cls(tuple(boxes))

    @property
    def names(self) -> tuple[str, ...]:
        if not self.boxes:
            raise RegionError("empty region")
        return self.boxes[0].names

    def is_empty(self) -> bool:
        return not self.boxes

    def contains(self, point: Sequence[float], tol: float = 0.0) -> bool:
        return any(b.contains(point, tol) for b in self.boxes)

    def product(self, other: "Region") -> "Region":
        return Region(tuple(a.product(b) for a in self.boxes for b in other.boxes))

    def __iter__(self):
        return iter(self.boxes)

    def __len__(self):
        return len(self.boxes)
