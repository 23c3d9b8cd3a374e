"""Representation matrices on disk, analysis manifests and corpus profiles.

Matrices use the ``RFM1`` binary layout: a fixed 24-byte header followed by
a row-major little-endian payload::

    0-3   b"RFM1"
    4     version (1)
    5     dtype (0 = float32, 1 = float64)
    6-7   zero padding
    8-15  rows, uint64 little-endian
    16-23 cols, uint64 little-endian
"""

from __future__ import annotations

import json
import os
import struct
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    BadMagic,
    DanglingPath,
    DimensionMismatch,
    EmptyCorpus,
    IoFailure,
    MissingFile,
    NonFiniteValue,
    ParseError,
    TruncatedPayload,
)

MAGIC = b"RFM1"
VERSION = 1
HEADER_SIZE = 24
_HEADER = struct.Struct("<4sBB2xQQ")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}

CHAR_COVERAGE = 0.999


@dataclass(frozen=True, eq=False)
class ReprMatrix:
    """An ``m x d`` block of row-wise token representations.

    ``values`` is stored read-only; build a new matrix rather than mutate.
    """

    values: np.ndarray
    group_id: str = ""
    layer: int = 0
    category: str = "ALL"

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.dtype not in _CODES:
            values = values.astype(np.float64)
        if values.ndim != 2:
            raise DimensionMismatch(f"expected a 2-d matrix, got shape {values.shape}")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise DimensionMismatch(f"matrix must be at least 1x1, got {values.shape}")
        values = np.array(values, copy=True, order="C")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def with_values(self, values: np.ndarray) -> "ReprMatrix":
        return ReprMatrix(values, self.group_id, self.layer, self.category)

    def __eq__(self, other):
        if not isinstance(other, ReprMatrix):
            return NotImplemented
        return (
            self.group_id == other.group_id
            and self.layer == other.layer
            and self.category == other.category
            and self.values.dtype == other.values.dtype
            and self.values.shape == other.values.shape
            and self.values.tobytes() == other.values.tobytes()
        )

    __hash__ = None


def _check_finite(values: np.ndarray, where: str) -> None:
    if not np.isfinite(values).all():
        raise NonFiniteValue(f"non-finite value in {where}")


def write_matrix(m: ReprMatrix | np.ndarray, path: str | os.PathLike) -> None:
    """Write ``m`` to ``path`` in RFM1 format.

    float32 matrices keep dtype code 0; everything else is written as float64.
    """
    values = m.values if isinstance(m, ReprMatrix) else np.asarray(m)
    if values.ndim == 1:
        values = values.reshape(-1, 1)
    if values.dtype not in _CODES:
        values = values.astype(np.float64)
    _check_finite(values, str(path))
    code = _CODES[values.dtype]
    rows, cols = values.shape
    header = _HEADER.pack(MAGIC, VERSION, code, rows, cols)
    payload = np.ascontiguousarray(values, dtype=_DTYPES[code]).tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_header(path: str | os.PathLike) -> tuple[int, int, np.dtype]:
    """Return ``(rows, cols, dtype)`` after validating header and file length."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"no such matrix file: {path}")
    with open(path, "rb") as fh:
        raw = fh.read(HEADER_SIZE)
    if len(raw) < HEADER_SIZE or raw[:4] != MAGIC:
        raise BadMagic(f"{path} is not an RFM1 matrix")
    _, version, code, rows, cols = _HEADER.unpack(raw)
    if version != VERSION or code not in _DTYPES:
        raise BadMagic(f"{path}: unsupported version {version} / dtype {code}")
    dtype = _DTYPES[code]
    expected = HEADER_SIZE + rows * cols * dtype.itemsize
    if path.stat().st_size < expected:
        raise TruncatedPayload(
            f"{path}: header declares {rows}x{cols} but file has "
            f"{path.stat().st_size} bytes (need {expected})"
        )
    return rows, cols, dtype


def read_matrix(
    path: str | os.PathLike, group_id: str = "", layer: int = 0, category: str = "ALL"
) -> ReprMatrix:
    """Read an RFM1 file. Metadata is not stored in the file and is supplied by the caller."""
    rows, cols, dtype = read_header(path)
    with open(path, "rb") as fh:
        fh.seek(HEADER_SIZE)
        buf = fh.read(rows * cols * dtype.itemsize)
    values = np.frombuffer(buf, dtype=dtype).reshape(rows, cols)
    _check_finite(values, str(path))
    return ReprMatrix(values.astype(dtype.newbyteorder("=")), group_id, layer, category)


# --------------------------------------------------------------------------
# manifest


@dataclass(frozen=True)
class Entry:
    group: str
    layer: int
    category: str
    experimental: Path
    control: Path
    rows: int
    exp_cols: int
    ctl_cols: int


@dataclass(frozen=True)
class LanguageProfile:
    group_id: str
    unique_chars: int
    ttr: float
    data_size: int

    def __post_init__(self):
        if self.unique_chars < 1 or not (0 < self.ttr <= 1) or self.data_size < 0:
            raise ParseError(f"invalid profile for {self.group_id!r}: {self}")


@dataclass
class AnalysisSet:
    groups: list[str]
    layers: list[int]
    categories: list[str]
    entries: dict[tuple[str, int, str], Entry]
    external_scores: dict[str, dict[str, float]] = field(default_factory=dict)
    profiles: dict[str, LanguageProfile] = field(default_factory=dict)
    source: Path | None = None

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def d(self) -> int:
        return next(iter(self.entries.values())).exp_cols

    def groups_for(self, layer: int, category: str) -> list[str]:
        """Groups that have an entry for ``(layer, category)``, in manifest order."""
        return [g for g in self.groups if (g, layer, category) in self.entries]

    def load_pair(self, group: str, layer: int, category: str) -> tuple[ReprMatrix, ReprMatrix]:
        """Load ``(experimental, control)`` for one cell."""
        e = self.entries[(group, layer, category)]
        return (
            read_matrix(e.experimental, group, layer, category),
            read_matrix(e.control, group, layer, category),
        )


def _require(doc, key, kind, where="manifest"):
    if key not in doc:
        raise ParseError(f"{where}: missing key {key!r}")
    if not isinstance(doc[key], kind):
        raise ParseError(f"{where}: {key!r} has wrong type")
    return doc[key]


def load_manifest(path: str | os.PathLike) -> AnalysisSet:
    """Parse and validate a JSON manifest.

    Relative matrix paths resolve against the manifest's directory. Every
    referenced matrix is header-checked; payloads are not loaded.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"no such manifest: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top level must be an object")

    groups = [str(g) for g in _require(doc, "groups", list)]
    layers = [int(x) for x in _require(doc, "layers", list)]
    categories = [str(c) for c in _require(doc, "categories", list)]
    if len(set(groups)) != len(groups):
        raise ParseError("duplicate group ids")
    base = path.parent

    entries: dict[tuple[str, int, str], Entry] = {}
    for i, raw in enumerate(_require(doc, "entries", list)):
        where = f"entries[{i}]"
        if not isinstance(raw, dict):
            raise ParseError(f"{where} must be an object")
        group = str(_require(raw, "group", str, where))
        layer = _require(raw, "layer", int, where)
        category = str(_require(raw, "category", str, where))
        if group not in groups or layer not in layers or category not in categories:
            raise ParseError(f"{where}: ({group}, {layer}, {category}) not declared in axes")
        key = (group, layer, category)
        if key in entries:
            raise ParseError(f"{where}: duplicate entry {key}")
        paths = []
        for role in ("experimental", "control"):
            p = Path(_require(raw, role, str, where))
            p = p if p.is_absolute() else base / p
            if not p.is_file():
                raise DanglingPath(f"{where}: {role} path does not exist: {p}")
            paths.append(p)
        er, ec, _ = read_header(paths[0])
        cr, cc, _ = read_header(paths[1])
        if er != cr:
            raise DimensionMismatch(
                f"{where}: experimental has {er} rows but control has {cr}"
            )
        entries[key] = Entry(group, layer, category, paths[0], paths[1], er, ec, cc)

    if entries:
        d = {e.exp_cols for e in entries.values()}
        if len(d) > 1:
            detail = sorted({(e.group, e.exp_cols) for e in entries.values()})
            raise DimensionMismatch(f"experimental matrices disagree on cols: {detail}")

    scores = {}
    for task, table in (doc.get("external_scores") or {}).items():
        if not isinstance(table, dict):
            raise ParseError(f"external_scores[{task!r}] must be an object")
        scores[str(task)] = {str(g): float(v) for g, v in table.items()}

    profiles = {}
    for raw in doc.get("profiles") or []:
        try:
            prof = LanguageProfile(
                str(raw["group_id"]), int(raw["unique_chars"]),
                float(raw["ttr"]), int(raw["data_size"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(f"bad profile record {raw!r}") from exc
        profiles[prof.group_id] = prof

    return AnalysisSet(groups, layers, categories, entries, scores, profiles, path)


# --------------------------------------------------------------------------
# corpus profiling


def char_counts(tokens: Iterable[str]) -> Counter:
    """Count NFC-normalized characters, skipping whitespace."""
    counts: Counter = Counter()
    for tok in tokens:
        counts.update(c for c in unicodedata.normalize("NFC", tok) if not c.isspace())
    return counts


def coverage_count(counts: Mapping[str, int], coverage: float = CHAR_COVERAGE) -> int:
    """Smallest number of most-frequent characters reaching ``coverage`` of all occurrences.

    Frequency ties are broken by ascending codepoint.
    """
    total = sum(counts.values())
    if total <= 0:
        raise EmptyCorpus("no characters to count")
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    # exact rational threshold so 999 of 1000 counts as 99.9%
    threshold = Fraction(str(coverage)) * total
    running = 0
    for n, (_, c) in enumerate(ordered, start=1):
        running += c
        if running >= threshold:
            return n
    return len(ordered)


def profile_corpus(
    tokens: Sequence[tuple[str, str]],
    group_id: str = "",
    casefold_lemmas: bool = False,
    coverage: float = CHAR_COVERAGE,
) -> LanguageProfile:
    """Profile a token/lemma corpus: 99.9%-coverage character count, TTR and size.

    TTR is unique lemmas over tokens. Lemmas are compared as-is unless
    ``casefold_lemmas`` is set.
    """
    tokens = list(tokens)
    if not tokens:
        raise EmptyCorpus(f"empty corpus for {group_id!r}")
    lemmas = {(lem.casefold() if casefold_lemmas else lem) for _, lem in tokens}
    counts = char_counts(tok for tok, _ in tokens)
    return LanguageProfile(
        group_id=group_id,
        unique_chars=coverage_count(counts, coverage),
        ttr=len(lemmas) / len(tokens),
        data_size=len(tokens),
    )


def read_corpus(path: str | os.PathLike) -> list[tuple[str, str]]:
    """Read ``token<TAB>lemma`` lines. Blank lines are skipped."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"no such corpus: {path}")
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(f"{path}:{lineno}: expected token<TAB>lemma")
            pairs.append((parts[0], parts[1]))
    return pairs
