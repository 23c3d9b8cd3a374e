"""Per-group signature vectors and their condensed intensities."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DuplicateCell, EmptyVector, ParseError
from .parafac2 import Parafac2Model

Key = tuple[str, int, str]


def condense(sig: "Signature | Sequence[float]", absolute: bool = False) -> float:
    """Arithmetic mean of the signature values (of their magnitudes if ``absolute``)."""
    values = np.asarray(sig.values if isinstance(sig, Signature) else sig, dtype=np.float64)
    if values.size == 0:
        raise EmptyVector("cannot condense an empty signature")
    if absolute:
        values = np.abs(values)
    return math.fsum(values.tolist()) / values.size


@dataclass(frozen=True, eq=False)
class Signature:
    group_id: str
    layer: int
    category: str
    values: np.ndarray
    condensed: float = field(init=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "condensed", condense(values))

    @property
    def key(self) -> Key:
        return (self.group_id, self.layer, self.category)


def extract_signature(model: Parafac2Model, index: int, labels: Key) -> Signature:
    """Signature of slice ``index``: a copy of its pseudo-singular values."""
    index = model._check(index)
    group, layer, category = labels
    return Signature(group, int(layer), category, model.sigma[index].copy())


@dataclass
class SignatureTable:
    """Signatures keyed by ``(group, layer, category)``.

    Absent cells are simply missing; nothing is zero-filled.
    """

    cells: dict[Key, Signature] = field(default_factory=dict)
    provenance: dict[Key, dict] = field(default_factory=dict)

    def add(self, sig: Signature, provenance: dict | None = None) -> None:
        if sig.key in self.cells:
            raise DuplicateCell(f"duplicate signature cell {sig.key}")
        self.cells[sig.key] = sig
        if provenance is not None:
            self.provenance[sig.key] = provenance

    def __len__(self) -> int:
        return len(self.cells)

    def __contains__(self, key) -> bool:
        return key in self.cells

    def __getitem__(self, key: Key) -> Signature:
        return self.cells[key]

    def get(self, group: str, layer: int, category: str) -> Signature | None:
        return self.cells.get((group, layer, category))

    @property
    def groups(self) -> list[str]:
        return list(dict.fromkeys(k[0] for k in self.cells))

    @property
    def layers(self) -> list[int]:
        return sorted({k[1] for k in self.cells})

    @property
    def categories(self) -> list[str]:
        return list(dict.fromkeys(k[2] for k in self.cells))

    def select(self, layer: int | None = None, category: str | None = None) -> list[Signature]:
        """Signatures matching the given layer and/or category, in insertion order."""
        return [
            s for (g, lay, cat), s in self.cells.items()
            if (layer is None or lay == layer) and (category is None or cat == category)
        ]

    def condensed(self, layer: int, category: str) -> dict[str, float]:
        """``group -> condensed`` for one (layer, category)."""
        return {s.group_id: s.condensed for s in self.select(layer, category)}

    def series(self, group: str, category: str) -> tuple[list[int], list[float]]:
        """Condensed values of ``group`` ordered by layer."""
        pairs = sorted((s.layer, s.condensed) for s in self.select(category=category)
                       if s.group_id == group)
        return [p[0] for p in pairs], [p[1] for p in pairs]

    def to_csv(self, path: str | os.PathLike) -> None:
        write_table_csv(self, path)


def build_table(runs: Iterable[tuple[Sequence[Key], Parafac2Model]]) -> SignatureTable:
    """Assemble a table from decomposition runs.

    Each run pairs a fitted model with the labels of its slices, in slice order.
    """
    table = SignatureTable()
    for labels, model in runs:
        meta = {
            "fit": model.fit,
            "iterations": model.iterations,
            "converged": model.converged,
            "rank": model.rank,
        }
        for i, lab in enumerate(labels):
            table.add(extract_signature(model, i, lab), dict(meta))
    return table


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_table_csv(table: SignatureTable, path: str | os.PathLike) -> None:
    """Write ``group,layer,category,condensed,v1..vk``; rows sorted by layer, category, group."""
    k = max((len(s.values) for s in table.cells.values()), default=0)
    order = sorted(table.cells, key=lambda key: (key[1], key[2], key[0]))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "layer", "category", "condensed"] + [f"v{i + 1}" for i in range(k)])
        for key in order:
            s = table.cells[key]
            vals = [_fmt(x) for x in s.values] + [""] * (k - len(s.values))
            w.writerow([s.group_id, s.layer, s.category, _fmt(s.condensed)] + vals)


def read_table_csv(path: str | os.PathLike) -> SignatureTable:
    table = SignatureTable()
    with open(Path(path), encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:4] != ["group", "layer", "category", "condensed"]:
            raise ParseError(f"{path}: not a signature table")
        for row in reader:
            try:
                values = [float(x) for x in row[4:] if x != ""]
                sig = Signature(row[0], int(row[1]), row[2], np.array(values))
            except (ValueError, IndexError) as exc:
                raise ParseError(f"{path}: bad row {row!r}") from exc
            table.add(sig)
    return table
