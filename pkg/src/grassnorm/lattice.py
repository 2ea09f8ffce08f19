"""Discrete torus geometry: sites, finite differences, blocks, polymers, small sets."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

Direction = tuple[int, int]  # (axis, +1 | -1)


def unit_directions(d: int) -> list[Direction]:
    """The 2d signed unit directions, ordered +e1, -e1, +e2, -e2, ..."""
    return [(axis, sign) for axis in range(d) for sign in (1, -1)]


@dataclass(frozen=True)
class MultiIndex:
    """Counts on the signed unit directions, in the order of `unit_directions`."""

    counts: tuple[int, ...]

    @classmethod
    def empty(cls, d: int) -> "MultiIndex":
        return cls((0,) * (2 * d))

    @classmethod
    def from_directions(cls, d: int, directions) -> "MultiIndex":
        counts = [0] * (2 * d)
        for axis, sign in directions:
            counts[2 * axis + (0 if sign > 0 else 1)] += 1
        return cls(tuple(counts))

    @property
    def order(self) -> int:
        return sum(self.counts)

    @property
    def d(self) -> int:
        return len(self.counts) // 2

    def directions(self) -> list[Direction]:
        out = []
        for k, c in enumerate(self.counts):
            out.extend([(k // 2, 1 if k % 2 == 0 else -1)] * c)
        return out


def multiindices(d: int, max_order: int) -> list[MultiIndex]:
    """All multi-indices with |alpha|_1 <= max_order, lowest order first."""
    out = []
    dirs = unit_directions(d)
    for order in range(max_order + 1):
        for combo in itertools.combinations_with_replacement(dirs, order):
            out.append(MultiIndex.from_directions(d, combo))
    return out


@dataclass(frozen=True)
class Torus:
    """The torus (Z / mR Z)^d paved by m^d blocks of side R."""

    d: int
    R: int
    m: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"d must be a positive integer, got {self.d}")
        if self.R < 2:
            raise ValueError(f"R must be an integer >= 2, got {self.R}")
        if self.m < 1:
            raise ValueError(f"m must be an integer >= 1, got {self.m}")

    @property
    def period(self) -> int:
        return self.m * self.R

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.period,) * self.d

    @property
    def volume(self) -> int:
        return self.period ** self.d

    @property
    def n_blocks(self) -> int:
        return self.m ** self.d

    @property
    def block_volume(self) -> int:
        return self.R ** self.d

    # sites ---------------------------------------------------------------
    def coords(self, site: int) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unravel_index(site, self.shape))

    def site(self, coords) -> int:
        wrapped = tuple(int(c) % self.period for c in coords)
        return int(np.ravel_multi_index(wrapped, self.shape))

    def neighbour(self, site: int, direction: Direction) -> int:
        c = list(self.coords(site))
        axis, sign = direction
        c[axis] += sign
        return self.site(c)

    def sites(self) -> range:
        return range(self.volume)

    # differences ---------------------------------------------------------
    def as_grid(self, f) -> np.ndarray:
        f = np.asarray(f)
        return f.reshape(self.shape) if f.ndim == 1 else f

    def forward_difference(self, f, direction: Direction) -> np.ndarray:
        """(nabla^e f)_x = f_{x+e} - f_x with periodic wraparound; keeps the input shape."""
        f = np.asarray(f)
        g = self.as_grid(f)
        axis, sign = direction
        out = np.roll(g, -sign, axis=axis) - g
        return out.reshape(f.shape)

    def apply_multiindex(self, f, alpha: MultiIndex) -> np.ndarray:
        out = np.asarray(f)
        for direction in alpha.directions():
            out = self.forward_difference(out, direction)
        return out

    def difference_matrix(self, alpha: MultiIndex) -> np.ndarray:
        """Dense matrix of nabla^alpha acting on flat site vectors."""
        eye = np.eye(self.volume)
        return np.stack([self.apply_multiindex(eye[:, j], alpha) for j in range(self.volume)], axis=1)

    # blocks --------------------------------------------------------------
    def block_coords(self, block: int) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unravel_index(block, (self.m,) * self.d))

    def block_of(self, site: int) -> int:
        c = tuple(x // self.R for x in self.coords(site))
        return int(np.ravel_multi_index(c, (self.m,) * self.d))

    def block_corner(self, block: int) -> int:
        return self.site(tuple(c * self.R for c in self.block_coords(block)))

    def block_sites(self, block: int) -> frozenset[int]:
        corner = self.coords(self.block_corner(block))
        return frozenset(
            self.site(tuple(c + o for c, o in zip(corner, off)))
            for off in itertools.product(range(self.R), repeat=self.d)
        )

    def blocks_adjacent(self, a: int, b: int) -> bool:
        """Distinct blocks whose block coordinates are within sup-distance 1 (corners count)."""
        if a == b:
            return False
        for x, y in zip(self.block_coords(a), self.block_coords(b)):
            diff = (x - y) % self.m
            if min(diff, self.m - diff) > 1:
                return False
        return True

    def polymer_sites(self, blocks) -> frozenset[int]:
        out: set[int] = set()
        for b in blocks:
            out |= self.block_sites(b)
        return frozenset(out)

    def blocks_meeting(self, sites) -> frozenset[int]:
        return frozenset(self.block_of(x) for x in sites)

    def is_connected(self, blocks) -> bool:
        blocks = set(blocks)
        if not blocks:
            return False
        start = next(iter(blocks))
        seen = {start}
        stack = [start]
        while stack:
            a = stack.pop()
            for b in blocks:
                if b not in seen and self.blocks_adjacent(a, b):
                    seen.add(b)
                    stack.append(b)
        return seen == blocks

    @cached_property
    def _neighbours(self) -> dict[int, frozenset[int]]:
        return {
            a: frozenset(b for b in range(self.n_blocks) if self.blocks_adjacent(a, b))
            for a in range(self.n_blocks)
        }

    @cached_property
    def small_sets(self) -> tuple[frozenset[int], ...]:
        """Connected polymers of at most 2^d blocks, as block sets."""
        limit = 2 ** self.d
        found = {frozenset([b]) for b in range(self.n_blocks)}
        frontier = set(found)
        for _ in range(limit - 1):
            grown = set()
            for poly in frontier:
                for a in poly:
                    for b in self._neighbours[a]:
                        if b not in poly:
                            grown.add(poly | {b})
            grown -= found
            found |= grown
            frontier = grown
        return tuple(sorted(found, key=lambda s: (len(s), sorted(s))))

    @cached_property
    def _small_sets_by_block(self) -> dict[int, list[frozenset[int]]]:
        out: dict[int, list[frozenset[int]]] = {b: [] for b in range(self.n_blocks)}
        for s in self.small_sets:
            for b in s:
                out[b].append(s)
        return out

    def small_set_neighbourhood(self, sites) -> frozenset[int]:
        """X^box: union of all small sets that intersect the site set X."""
        blocks: set[int] = set()
        for b in self.blocks_meeting(sites):
            for s in self._small_sets_by_block[b]:
                blocks |= s
        return self.polymer_sites(blocks)


@dataclass(frozen=True)
class Polymer:
    """A union of blocks of a torus."""

    torus: Torus
    blocks: frozenset[int] = field(default_factory=frozenset)

    @classmethod
    def from_sites(cls, torus: Torus, sites) -> "Polymer":
        blocks = torus.blocks_meeting(sites)
        if torus.polymer_sites(blocks) != frozenset(sites):
            raise ValueError("site set is not a union of blocks")
        return cls(torus, blocks)

    @property
    def size(self) -> int:
        return len(self.blocks)

    @property
    def sites(self) -> frozenset[int]:
        return self.torus.polymer_sites(self.blocks)

    def is_small(self) -> bool:
        return 0 < self.size <= 2 ** self.torus.d and self.torus.is_connected(self.blocks)

    def neighbourhood(self) -> "Polymer":
        return Polymer.from_sites(self.torus, self.torus.small_set_neighbourhood(self.sites))

    def __or__(self, other: "Polymer") -> "Polymer":
        return Polymer(self.torus, self.blocks | other.blocks)
