"""Staged, cached analysis pipeline.

Every stage writes into ``<output_dir>/<stage>-<hash>/`` where the hash
covers the stage's options and the hashes of the stages it reads from. A
``stamp.json`` written last marks the directory complete; a stage whose
stamped directory already exists is skipped. Changing the solver rank
therefore reuses the ingest and covariance stages untouched.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from .covariance import build_slices
from .errors import DataError, ParseError, RepFactorError
from .model_io import (
    LanguageProfile,
    load_manifest,
    profile_corpus,
    read_corpus,
    read_matrix,
    write_matrix,
)
from .parafac2 import SolverOptions, decompose, load_model, save_model
from .phylo import (
    average_distance,
    cosine_distance_matrix,
    to_newick,
    upgma,
    write_distance_csv,
)
from .signatures import build_table, read_table_csv, write_table_csv
from .stats import (
    PROPERTIES,
    external_score_correlation,
    layer_trend_analysis,
    paired_values,
    property_correlation,
    property_values,
    variance_test,
)

logger = logging.getLogger(__name__)

STAGES = ["ingest", "profile", "covariance", "decompose", "signatures",
          "trend", "correlate", "variance-test", "tree"]
UPSTREAM = {
    "ingest": [],
    "profile": ["ingest"],
    "covariance": ["ingest"],
    "decompose": ["covariance"],
    "signatures": ["decompose"],
    "trend": ["signatures"],
    "correlate": ["signatures", "profile"],
    "variance-test": ["signatures"],
    "tree": ["signatures"],
}
ANALYSIS_STAGE = {
    "trend": "trend",
    "property_correlation": "correlate",
    "external_correlation": "correlate",
    "variance_test": "variance-test",
    "tree": "tree",
}


class StageError(RepFactorError):
    """A stage could not run; ``exit_code`` follows the underlying failure."""

    def __init__(self, stage: str, message: str, exit_code: int = 2):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.exit_code = exit_code


@dataclass
class PipelineConfig:
    manifest_path: Path
    output_dir: Path
    solver: SolverOptions = field(default_factory=SolverOptions)
    center: bool = True
    normalize: bool = False
    analyses: list[dict] = field(default_factory=list)
    exclude: list[str] = field(default_factory=lambda: ["PoS"])
    corpora: dict[str, Path] = field(default_factory=dict)
    layers: list[int] | None = None
    categories: list[str] | None = None
    jobs: int = 1

    @classmethod
    def load(cls, path: str | os.PathLike, **overrides) -> "PipelineConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise DataError(f"no such config: {path}") from exc
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ParseError(f"{path}: {exc}") from exc
        base = path.parent
        try:
            solver = SolverOptions(**doc.get("solver", {}))
            cfg = cls(
                manifest_path=base / doc["manifest"],
                output_dir=base / doc.get("output_dir", "out"),
                solver=solver,
                center=bool(doc.get("center", True)),
                normalize=bool(doc.get("normalize", False)),
                analyses=list(doc.get("analyses", [])),
                exclude=list(doc.get("exclude", ["PoS"])),
                corpora={g: base / p for g, p in (doc.get("corpora") or {}).items()},
                layers=doc.get("layers"),
                categories=doc.get("categories"),
                jobs=int(doc.get("jobs", os.environ.get("REPFACTOR_JOBS", 1))),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, RepFactorError):
                raise
            raise ParseError(f"{path}: invalid config: {exc}") from exc
        for a in cfg.analyses:
            if a.get("type") not in ANALYSIS_STAGE:
                raise ParseError(f"{path}: unknown analysis type {a.get('type')!r}")
        return cfg.override(**overrides)

    def override(self, rank=None, seed=None, tol=None, max_sweeps=None, q=None, alpha=None,
                 layer=None, category=None, jobs=None, **_) -> "PipelineConfig":
        solver = self.solver
        changes = {k: v for k, v in
                   {"rank": rank, "seed": seed, "rel_tol": tol, "max_sweeps": max_sweeps}.items()
                   if v is not None}
        if changes:
            solver = replace(solver, **changes)
        analyses = []
        for a in self.analyses:
            a = dict(a)
            if a["type"] == "trend":
                if q is not None:
                    a["q"] = q
                if alpha is not None:
                    a["alpha"] = alpha
            analyses.append(a)
        return replace(
            self,
            solver=solver,
            analyses=analyses,
            layers=[layer] if layer is not None else self.layers,
            categories=[category] if category is not None else self.categories,
            jobs=jobs if jobs is not None else self.jobs,
        )


# --------------------------------------------------------------------------
# hashing helpers


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _digest(obj: Any) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def _dump(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _fmt(x: float) -> str:
    return f"{x:.17g}"


class Pipeline:
    def __init__(self, config: PipelineConfig):
        self.config = config
        self.out = Path(config.output_dir)
        self._hashes: dict[str, str] = {}
        self._aset = None

    # -- stage bookkeeping -------------------------------------------------

    @property
    def aset(self):
        if self._aset is None:
            self._aset = load_manifest(self.config.manifest_path)
        return self._aset

    def cells(self) -> list[tuple[int, str]]:
        aset = self.aset
        layers = self.config.layers if self.config.layers is not None else aset.layers
        cats = self.config.categories if self.config.categories is not None else aset.categories
        for lay in layers:
            if lay not in aset.layers:
                raise DataError(f"layer {lay} not in manifest")
        for cat in cats:
            if cat not in aset.categories:
                raise DataError(f"category {cat!r} not in manifest")
        return [(lay, cat) for lay in layers for cat in cats if aset.groups_for(lay, cat)]

    def analyses(self) -> list[dict]:
        """Configured analyses; external scores in the manifest imply an external correlation."""
        out = list(self.config.analyses)
        if self.aset.external_scores and not any(a["type"] == "external_correlation" for a in out):
            out.append({"type": "external_correlation"})
        return out

    def _analyses(self, stage: str) -> list[dict]:
        return [a for a in self.analyses() if ANALYSIS_STAGE[a["type"]] == stage]

    def _options(self, stage: str) -> Any:
        c = self.config
        if stage == "ingest":
            aset = self.aset
            files = sorted({str(p) for e in aset.entries.values() for p in (e.experimental, e.control)})
            return {
                "manifest": _sha256_file(c.manifest_path),
                "matrices": {Path(f).name: _sha256_file(Path(f)) for f in files},
            }
        if stage == "profile":
            return {g: _sha256_file(p) for g, p in sorted(c.corpora.items())}
        if stage == "covariance":
            return {"center": c.center, "normalize": c.normalize, "cells": self.cells()}
        if stage == "decompose":
            return c.solver.to_dict()
        if stage == "signatures":
            return {}
        if stage == "tree":
            return {"analyses": self._analyses(stage), "exclude": c.exclude}
        return {"analyses": self._analyses(stage)}

    def stage_hash(self, stage: str) -> str:
        if stage not in self._hashes:
            payload = {
                "stage": stage,
                "options": self._options(stage),
                "upstream": {u: self.stage_hash(u) for u in UPSTREAM[stage]},
            }
            self._hashes[stage] = _digest(payload)[:16]
        return self._hashes[stage]

    def stage_dir(self, stage: str) -> Path:
        return self.out / f"{stage}-{self.stage_hash(stage)}"

    def is_done(self, stage: str) -> bool:
        return (self.stage_dir(stage) / "stamp.json").is_file()

    def _require(self, stage: str) -> None:
        for up in UPSTREAM[stage]:
            if not self.is_done(up):
                raise StageError(stage, f"missing stage: {up}", exit_code=1)

    def _finish(self, stage: str, artifacts: list[Path]) -> list[Path]:
        d = self.stage_dir(stage)
        stamp = {
            "stage": stage,
            "hash": self.stage_hash(stage),
            "artifacts": {str(p.relative_to(d)): _sha256_file(p) for p in sorted(artifacts)},
        }
        _dump(d / "stamp.json", stamp)
        return artifacts

    def artifacts(self, stage: str) -> dict[str, str]:
        stamp = json.loads((self.stage_dir(stage) / "stamp.json").read_text(encoding="utf-8"))
        d = self.stage_dir(stage)
        return {str(d / k): v for k, v in stamp["artifacts"].items()}

    def run_stage(self, stage: str) -> bool:
        """Run one stage; returns False when it was already complete."""
        if stage not in STAGES:
            raise StageError(stage, f"unknown stage {stage!r}", exit_code=1)
        try:
            if self.is_done(stage):
                logger.info("%s: up to date (%s)", stage, self.stage_hash(stage))
                return False
            self._require(stage)
            d = self.stage_dir(stage)
            d.mkdir(parents=True, exist_ok=True)
            artifacts = getattr(self, "_stage_" + stage.replace("-", "_"))(d)
            self._finish(stage, artifacts)
            logger.info("%s: wrote %d artifacts to %s", stage, len(artifacts), d)
            return True
        except StageError:
            raise
        except RepFactorError as exc:
            raise StageError(stage, f"{type(exc).__name__}: {exc}", exc.exit_code) from exc

    def run(self) -> dict:
        """Run every stage in dependency order and write ``summary.json``."""
        wanted = {ANALYSIS_STAGE[a["type"]] for a in self.analyses()}
        order = ["ingest", "profile", "covariance", "decompose", "signatures"]
        order += [s for s in ("trend", "correlate", "variance-test", "tree") if s in wanted]
        for stage in order:
            self.run_stage(stage)
        summary = {
            "stages": {s: self.stage_hash(s) for s in order},
            "artifacts": {},
        }
        for s in order:
            for path, digest in self.artifacts(s).items():
                summary["artifacts"][str(Path(path).relative_to(self.out))] = digest
        self.out.mkdir(parents=True, exist_ok=True)
        _dump(self.out / "summary.json", summary)
        return summary

    # -- stages ------------------------------------------------------------

    def _stage_ingest(self, d: Path) -> list[Path]:
        aset = self.aset
        doc = {
            "groups": aset.groups,
            "layers": aset.layers,
            "categories": aset.categories,
            "d": aset.d if aset.entries else None,
            "cells": [
                {"group": e.group, "layer": e.layer, "category": e.category,
                 "rows": e.rows, "d_experimental": e.exp_cols, "d_control": e.ctl_cols}
                for e in aset.entries.values()
            ],
        }
        _dump(d / "ingest.json", doc)
        return [d / "ingest.json"]

    def _stage_profile(self, d: Path) -> list[Path]:
        profiles = dict(self.aset.profiles)
        for g, path in sorted(self.config.corpora.items()):
            profiles[g] = profile_corpus(read_corpus(path), group_id=g)
        path = d / "profiles.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["group", "unique_chars", "ttr", "data_size"])
            for g in self.aset.groups:
                if g in profiles:
                    p = profiles[g]
                    w.writerow([g, p.unique_chars, _fmt(p.ttr), p.data_size])
        return [path]

    def _stage_covariance(self, d: Path) -> list[Path]:
        c = self.config
        index, written = [], []
        for layer, cat in self.cells():
            groups = self.aset.groups_for(layer, cat)
            slices = build_slices(self.aset, layer, cat, c.center, c.normalize, groups=groups)
            sub = d / f"L{layer}_{cat}"
            sub.mkdir(exist_ok=True)
            files = []
            for i, s in enumerate(slices):
                p = sub / f"{i:03d}_{s.group_id}.rfm"
                write_matrix(s.omega, p)
                files.append(p.name)
                written.append(p)
            index.append({"layer": layer, "category": cat, "groups": groups,
                          "files": files, "m": [s.m for s in slices]})
        _dump(d / "index.json", index)
        return written + [d / "index.json"]

    def _load_index(self, stage: str = "covariance") -> list[dict]:
        return json.loads((self.stage_dir(stage) / "index.json").read_text(encoding="utf-8"))

    def _stage_decompose(self, d: Path) -> list[Path]:
        cov = self.stage_dir("covariance")
        index = self._load_index()

        def work(cell):
            sub = cov / f"L{cell['layer']}_{cell['category']}"
            omegas = [read_matrix(sub / f).values for f in cell["files"]]
            model = decompose(omegas, self.config.solver)
            return save_model(model, d / f"L{cell['layer']}_{cell['category']}", cell["groups"])

        jobs = max(1, int(self.config.jobs))
        if jobs == 1:
            dirs = [work(cell) for cell in index]
        else:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                dirs = list(pool.map(work, index))
        _dump(d / "index.json", index)
        return [p for sub in dirs for p in sorted(sub.iterdir())] + [d / "index.json"]

    def _stage_signatures(self, d: Path) -> list[Path]:
        dec = self.stage_dir("decompose")
        runs = []
        for cell in self._load_index("decompose"):
            model, groups = load_model(dec / f"L{cell['layer']}_{cell['category']}")
            labels = [(g, cell["layer"], cell["category"]) for g in groups]
            runs.append((labels, model))
        table = build_table(runs)
        path = d / "signatures.csv"
        write_table_csv(table, path)
        return [path]

    def table(self):
        return read_table_csv(self.stage_dir("signatures") / "signatures.csv")

    def _stage_trend(self, d: Path) -> list[Path]:
        table = self.table()
        path = d / "trend.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["group", "category", "S", "Z", "p", "p_adjusted", "direction"])
            for a in self._analyses("trend"):
                cats = [a["category"]] if a.get("category") else table.categories
                for cat in cats:
                    results = layer_trend_analysis(table, cat, a.get("alpha", 0.05), a.get("q", 0.05))
                    for r in results:
                        w.writerow([r.group_id, cat, r.s_statistic, _fmt(r.z_score),
                                    _fmt(r.p_value), _fmt(r.p_adjusted), r.direction])
        return [path]

    def _load_profiles(self) -> dict[str, LanguageProfile]:
        out = {}
        with open(self.stage_dir("profile") / "profiles.csv", encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                out[row["group"]] = LanguageProfile(row["group"], int(row["unique_chars"]),
                                                    float(row["ttr"]), int(row["data_size"]))
        return out

    def _stage_correlate(self, d: Path) -> list[Path]:
        table = self.table()
        written = []
        prop_rows, ext_rows = [], []
        for a in self._analyses("correlate"):
            layers = a.get("layers") or table.layers
            cats = [a["category"]] if a.get("category") else table.categories
            if a["type"] == "property_correlation":
                profiles = self._load_profiles()
                for prop in a.get("properties", list(PROPERTIES)):
                    vals = property_values(profiles, prop)
                    for cat in cats:
                        for layer in layers:
                            groups, _, _ = paired_values(table, vals, layer, cat)
                            r = property_correlation(table, profiles, prop, layer, cat)
                            prop_rows.append([prop, layer, cat, _fmt(r), len(groups)])
            else:
                scores = self.aset.external_scores
                tasks = a.get("tasks") or sorted(scores)
                for task in tasks:
                    for cat in cats:
                        for layer in layers:
                            groups, _, _ = paired_values(table, scores[task], layer, cat)
                            r = external_score_correlation(table, scores[task], layer, cat)
                            ext_rows.append([task, layer, cat, _fmt(r), len(groups)])
        if prop_rows:
            path = d / "correlations.csv"
            self._write_rows(path, ["property", "layer", "category", "r", "n"], prop_rows)
            written.append(path)
        if ext_rows:
            path = d / "external_correlations.csv"
            self._write_rows(path, ["property", "layer", "category", "r", "n"], ext_rows)
            written.append(path)
        return written

    @staticmethod
    def _write_rows(path: Path, header: list[str], rows: list[list]) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)

    def _stage_variance_test(self, d: Path) -> list[Path]:
        table = self.table()
        rows = []
        for a in self._analyses("variance-test"):
            layers = a.get("layers") or table.layers
            related = a["related"]
            if isinstance(related, list):
                related = {"related": related}
            for name, members in related.items():
                for layer in layers:
                    res = variance_test(table, a["diverse"], members, layer, a["category"],
                                        a.get("alternative", "two-sided"))
                    rows.append([name, layer, a["category"], _fmt(res.chi2), res.df,
                                 _fmt(res.p_value), _fmt(res.sample_variance),
                                 _fmt(res.reference_variance)])
        path = d / "variance_test.csv"
        self._write_rows(path, ["related_set", "layer", "category", "chi2", "df", "p",
                                "sample_variance", "reference_variance"], rows)
        return [path]

    def _stage_tree(self, d: Path) -> list[Path]:
        table = self.table()
        groups = self.aset.groups
        written = []
        for a in self._analyses("tree"):
            exclude = set(a.get("exclude", self.config.exclude))
            layers = a.get("layers") or table.layers
            cat = a.get("category")
            if cat:
                for layer in layers:
                    dm = cosine_distance_matrix(table.select(layer, cat))
                    stem = f"tree_L{layer}_{cat}"
                    write_distance_csv(dm, d / f"{stem}.csv")
                    (d / f"{stem}.nwk").write_text(to_newick(upgma(dm)) + "\n", encoding="utf-8")
                    written += [d / f"{stem}.csv", d / f"{stem}.nwk"]
            avg_layer = a.get("average_layer", table.layers[-1])
            mats = [cosine_distance_matrix(table.select(avg_layer, c))
                    for c in table.categories
                    if c not in exclude and len(table.select(avg_layer, c)) >= 2]
            if mats:
                dm = average_distance(mats, groups)
                stem = f"average_tree_L{avg_layer}"
                write_distance_csv(dm, d / f"{stem}.csv")
                (d / f"{stem}.nwk").write_text(to_newick(upgma(dm)) + "\n", encoding="utf-8")
                written += [d / f"{stem}.csv", d / f"{stem}.nwk"]
        return written
