"""Cosine distances between signatures, UPGMA trees and Newick output."""

from __future__ import annotations

import csv
import os
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, LengthMismatch, ParseError, UnknownLabel, ZeroVector
from .signatures import Signature


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    labels: list[str]
    d: np.ndarray

    def __post_init__(self):
        d = np.array(self.d, dtype=np.float64)
        n = len(self.labels)
        if d.shape != (n, n):
            raise DataError(f"distance matrix shape {d.shape} does not match {n} labels")
        if len(set(self.labels)) != n:
            raise DataError("duplicate labels in distance matrix")
        if not np.isfinite(d).all():
            raise DataError("non-finite distance")
        if not np.allclose(d, d.T, rtol=0, atol=1e-12) or np.any(np.diag(d) != 0):
            raise DataError("distance matrix must be symmetric with zero diagonal")
        d = (d + d.T) / 2
        d.setflags(write=False)
        object.__setattr__(self, "labels", list(self.labels))
        object.__setattr__(self, "d", d)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def __getitem__(self, pair: tuple[str, str]) -> float:
        a, b = pair
        return float(self.d[self.index(a), self.index(b)])


def cosine_distance_matrix(signatures: Sequence[Signature]) -> DistanceMatrix:
    """``1 - cos(v_i, v_j)`` between full signature vectors, labelled by group."""
    if len(signatures) < 2:
        raise DataError("need at least two signatures")
    lengths = {len(s.values) for s in signatures}
    if len(lengths) > 1:
        raise LengthMismatch(f"signature lengths differ: {sorted(lengths)}")
    x = np.stack([s.values for s in signatures])
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0):
        bad = [s.group_id for s, n in zip(signatures, norms) if n == 0]
        raise ZeroVector(f"zero signature vector for {bad}")
    u = x / norms[:, None]
    d = np.clip(1.0 - u @ u.T, 0.0, 2.0)
    d = (d + d.T) / 2
    np.fill_diagonal(d, 0.0)
    return DistanceMatrix([s.group_id for s in signatures], d)


def average_distance(matrices: Sequence[DistanceMatrix], all_groups: Sequence[str]) -> DistanceMatrix:
    """Mean distance over matrices; a pair absent from a matrix counts as distance 1."""
    if not matrices:
        raise DataError("need at least one distance matrix")
    groups = list(all_groups)
    pos = {g: i for i, g in enumerate(groups)}
    n = len(groups)
    total = np.zeros((n, n))
    for m in matrices:
        unknown = [g for g in m.labels if g not in pos]
        if unknown:
            raise UnknownLabel(f"labels not in the group list: {unknown}")
        full = np.ones((n, n))
        idx = [pos[g] for g in m.labels]
        full[np.ix_(idx, idx)] = m.d
        total += full
    avg = total / len(matrices)
    np.fill_diagonal(avg, 0.0)
    return DistanceMatrix(groups, avg)


# --------------------------------------------------------------------------
# trees


@dataclass(eq=False)
class Node:
    height: float = 0.0
    label: str | None = None
    children: list["Node"] = field(default_factory=list)

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def leaves(self) -> list[str]:
        if self.is_leaf:
            return [self.label]
        return [x for c in self.children for x in c.leaves()]

    @property
    def min_label(self) -> str:
        return min(self.leaves())


@dataclass(eq=False)
class PhyloTree:
    root: Node

    def leaves(self) -> list[str]:
        return self.root.leaves()

    def nodes(self) -> Iterable[Node]:
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(node.children)

    def clades(self) -> set[frozenset[str]]:
        """Leaf sets of every internal node (root included)."""
        return {frozenset(n.leaves()) for n in self.nodes() if not n.is_leaf}

    def root_split(self) -> set[frozenset[str]]:
        return {frozenset(c.leaves()) for c in self.root.children}

    def leaf_depths(self) -> dict[str, float]:
        """Sum of branch lengths from the root to each leaf."""
        out = {}
        stack = [(self.root, 0.0)]
        while stack:
            node, depth = stack.pop()
            if node.is_leaf:
                out[node.label] = depth
            for c in node.children:
                stack.append((c, depth + node.height - c.height))
        return out

    def cophenetic(self) -> DistanceMatrix:
        """Tree distance: twice the height of the lowest common ancestor."""
        labels = sorted(self.leaves())
        pos = {x: i for i, x in enumerate(labels)}
        d = np.zeros((len(labels), len(labels)))
        for node in self.nodes():
            if node.is_leaf:
                continue
            groups = [c.leaves() for c in node.children]
            for i, a in enumerate(groups):
                for b in groups[i + 1:]:
                    for x in a:
                        for y in b:
                            d[pos[x], pos[y]] = d[pos[y], pos[x]] = 2 * node.height
        return DistanceMatrix(labels, d)


def upgma(dm: DistanceMatrix) -> PhyloTree:
    """UPGMA clustering.

    The closest pair of clusters is merged at height ``d / 2``; distances
    to the merged cluster are size-weighted means. Equal distances are
    resolved by the lexicographically smallest pair of cluster keys, where
    a cluster's key is its smallest leaf label.
    """
    n = len(dm.labels)
    if n < 2:
        raise DataError("UPGMA needs at least two labels")
    nodes = {lab: Node(0.0, lab) for lab in dm.labels}
    sizes = {lab: 1 for lab in dm.labels}
    dist = {}
    for i, a in enumerate(dm.labels):
        for j in range(i + 1, n):
            b = dm.labels[j]
            dist[frozenset((a, b))] = float(dm.d[i, j])

    while len(nodes) > 1:
        pair = min(dist, key=lambda p: (dist[p], tuple(sorted(p))))
        a, b = sorted(pair)
        da = dist.pop(pair)
        merged = Node(da / 2.0, None, [nodes.pop(a), nodes.pop(b)])
        key = min(a, b)
        na, nb = sizes.pop(a), sizes.pop(b)
        for other in list(nodes):
            dao = dist.pop(frozenset((a, other)))
            dbo = dist.pop(frozenset((b, other)))
            dist[frozenset((key, other))] = (na * dao + nb * dbo) / (na + nb)
        nodes[key] = merged
        sizes[key] = na + nb
    return PhyloTree(next(iter(nodes.values())))


_UNSAFE = re.compile(r"[\s()\[\]':;,]")


def _quote(label: str) -> str:
    if _UNSAFE.search(label):
        return "'" + label.replace("'", "''") + "'"
    return label


def to_newick(tree: PhyloTree, precision: int = 6) -> str:
    """Newick string with branch lengths at ``precision`` significant digits.

    Children are ordered by their smallest leaf label.
    """

    def fmt(x: float) -> str:
        return f"{x:.{precision}g}"

    def render(node: Node, parent_height: float | None) -> str:
        if node.is_leaf:
            text = _quote(node.label)
        else:
            kids = sorted(node.children, key=lambda c: c.min_label)
            text = "(" + ",".join(render(c, node.height) for c in kids) + ")"
        if parent_height is not None:
            text += ":" + fmt(parent_height - node.height)
        return text

    return render(tree.root, None) + ";"


# --------------------------------------------------------------------------
# csv


def write_distance_csv(dm: DistanceMatrix, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([""] + dm.labels)
        for lab, row in zip(dm.labels, dm.d):
            w.writerow([lab] + [f"{x:.17g}" for x in row])


def read_distance_csv(path: str | os.PathLike) -> DistanceMatrix:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty distance matrix")
    labels = rows[0][1:]
    try:
        d = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if [r[0] for r in rows[1:]] != labels:
        raise ParseError(f"{path}: row labels do not match the header")
    return DistanceMatrix(labels, d)
