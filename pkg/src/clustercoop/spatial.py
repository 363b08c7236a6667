"""Union-find and uniform-grid neighbor search.

Both count the elementary operations they perform so callers can assert
complexity bounds without timing anything.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import product

import numpy as np


@dataclass
class OpCounter:
    """Named operation tallies."""

    counts: dict = field(default_factory=lambda: defaultdict(int))

    def add(self, name: str, n: int = 1) -> None:
        self.counts[name] += int(n)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def __getitem__(self, name: str) -> int:
        return self.counts.get(name, 0)


class UnionFind:
    """Disjoint sets over ``0..n-1``.

    Roots are always the smallest index of their set, so partitions and
    representatives are reproducible regardless of union order.
    """

    def __init__(self, n: int, counter: OpCounter | None = None):
        self.parent = np.arange(n)
        self.counter = counter

    def find(self, a: int) -> int:
        p = self.parent
        root = a
        while p[root] != root:
            root = p[root]
        while p[a] != root:
            p[a], a = root, p[a]
        return int(root)

    def union(self, a: int, b: int) -> bool:
        if self.counter is not None:
            self.counter.add("union")
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        lo, hi = min(ra, rb), max(ra, rb)
        self.parent[hi] = lo
        return True

    def _compress(self) -> None:
        p = self.parent
        while True:
            pp = p[p]
            if np.array_equal(pp, p):
                break
            p[:] = pp

    def union_pairs(self, pairs: np.ndarray) -> None:
        """Union every ``(a, b)`` row at once.

        Repeatedly hooks the larger root of each unmerged pair onto the
        smaller one and then fully compresses paths.
        """
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        if self.counter is not None:
            self.counter.add("union", len(pairs))
        a, b = pairs[:, 0], pairs[:, 1]
        self._compress()
        while len(a):
            ra, rb = self.parent[a], self.parent[b]
            diff = ra != rb
            if not diff.any():
                break
            a, b, ra, rb = a[diff], b[diff], ra[diff], rb[diff]
            np.minimum.at(self.parent, np.maximum(ra, rb), np.minimum(ra, rb))
            self._compress()
            if self.counter is not None:
                self.counter.add("hook_round")

    def groups(self) -> list[list[int]]:
        """Members of every set, each sorted, ordered by smallest member."""
        self._compress()
        by_root: dict[int, list[int]] = {}
        for i, r in enumerate(self.parent.tolist()):
            by_root.setdefault(r, []).append(i)
        return sorted(by_root.values(), key=lambda g: g[0])


def grid_neighbor_pairs(
    xyz: np.ndarray, radius: float, counter: OpCounter | None = None
) -> np.ndarray:
    """All index pairs ``(i, j)``, ``i < j``, with ``|xyz[i] - xyz[j]| < radius``.

    Points are hashed into cells of edge ``radius``; only adjacent cells are
    compared, so the cost depends on local density rather than on the
    spatial extent of the input. Returns an (E, 2) array sorted by row.
    """
    xyz = np.asarray(xyz, dtype=float)
    n, dim = xyz.shape if xyz.ndim == 2 else (0, 3)
    if n < 2:
        return np.zeros((0, 2), dtype=np.int64)
    keys = np.floor(xyz / radius).astype(np.int64)
    cells: dict[tuple, list[int]] = defaultdict(list)
    for i, k in enumerate(map(tuple, keys.tolist())):
        cells[k].append(i)
    cells = {k: np.array(v) for k, v in cells.items()}
    if counter is not None:
        counter.add("grid_insert", n)
    r2 = radius * radius
    offsets = [o for o in product((-1, 0, 1), repeat=dim) if o > (0,) * dim]
    out = []
    for key, mem in cells.items():
        pts = xyz[mem]
        # same cell: upper triangle
        if len(mem) > 1:
            d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=2)
            if counter is not None:
                counter.add("distance_check", len(mem) * (len(mem) - 1) // 2)
            ii, jj = np.nonzero(np.triu(d2 < r2, k=1))
            out.append(np.column_stack([mem[ii], mem[jj]]))
        for off in offsets:
            other = cells.get(tuple(k + o for k, o in zip(key, off)))
            if other is None:
                continue
            d2 = np.sum((pts[:, None, :] - xyz[other][None, :, :]) ** 2, axis=2)
            if counter is not None:
                counter.add("distance_check", d2.size)
            ii, jj = np.nonzero(d2 < r2)
            out.append(np.column_stack([mem[ii], other[jj]]))
    pairs = np.concatenate(out) if out else np.zeros((0, 2), dtype=np.int64)
    pairs = np.sort(pairs, axis=1)
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return pairs[order].astype(np.int64)


def radius_components(
    xyz: np.ndarray, radius: float, counter: OpCounter | None = None
) -> list[list[int]]:
    """Connected components of the graph joining points closer than ``radius``.

    Cells have edge ``radius / sqrt(dim)``, so any two points sharing a cell
    are already connected and each cell starts as one set. Neighboring cells
    are compared only while they are still in different sets, which keeps
    dense blobs cheap. Components come back sorted, ordered by smallest member.
    """
    xyz = np.asarray(xyz, dtype=float)
    if xyz.ndim != 2 or len(xyz) == 0:
        return []
    n, dim = xyz.shape
    edge = radius / math.sqrt(dim) * (1 - 1e-9)  # margin against floor() rounding
    keys = np.floor(xyz / edge).astype(np.int64)
    cell_keys, cell_of = np.unique(keys, axis=0, return_inverse=True)
    cell_of = cell_of.reshape(-1)
    order = np.argsort(cell_of, kind="stable")
    bounds = np.searchsorted(cell_of[order], np.arange(len(cell_keys) + 1))
    members = [order[bounds[c]:bounds[c + 1]] for c in range(len(cell_keys))]
    lookup = {k: c for c, k in enumerate(map(tuple, cell_keys.tolist()))}
    if counter is not None:
        counter.add("grid_insert", n)

    reach = math.ceil(radius / edge)
    r2 = radius * radius
    offsets = []
    for o in product(range(-reach, reach + 1), repeat=dim):
        if o <= (0,) * dim:
            continue
        gap = sum(max(abs(v) - 1, 0) ** 2 for v in o) * edge * edge
        if gap < r2:  # cells this far apart can still hold a close pair
            offsets.append(o)

    uf = UnionFind(len(cell_keys), counter)
    for c, key in enumerate(map(tuple, cell_keys.tolist())):
        pts = xyz[members[c]]
        for off in offsets:
            other = lookup.get(tuple(k + o for k, o in zip(key, off)))
            if other is None or uf.find(c) == uf.find(other):
                continue
            d2 = np.sum((pts[:, None, :] - xyz[members[other]][None, :, :]) ** 2, axis=2)
            if counter is not None:
                counter.add("distance_check", d2.size)
            if d2.min() < r2:
                uf.union(c, other)
    uf._compress()
    labels = uf.parent[cell_of]
    groups: dict[int, list[int]] = {}
    for i, lab in enumerate(labels.tolist()):
        groups.setdefault(lab, []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])
