"""Seeded synthetic datasets and planted PARAFAC2 problems.

:func:`planted_slices` builds noiseless (or noisy) slices with known factors
for solver checks. :func:`make_dataset` writes a complete small analysis
set to disk: RFM1 matrices, a manifest, token/lemma corpora and a pipeline
config, with groups arranged in families and one group missing one
category.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model_io import write_matrix

FAMILIES = {
    "germanic": ["de", "en", "nl"],
    "romance": ["es", "fr", "it"],
    "slavic": ["cs", "pl", "ru"],
}
CATEGORIES = ["PoS", "Number", "Case"]


@dataclass
class PlantedModel:
    omegas: list[np.ndarray]
    q: list[np.ndarray]
    h: np.ndarray
    v: np.ndarray
    sigma: np.ndarray

    def clean(self, index: int) -> np.ndarray:
        return self.q[index] @ (self.h * self.sigma[index]) @ self.v.T


def _unit_columns(a: np.ndarray) -> np.ndarray:
    return a / np.linalg.norm(a, axis=0)


def planted_slices(
    n_slices: int = 5,
    rows: int | list[int] = 30,
    d: int = 40,
    rank: int = 5,
    seed: int = 0,
    sigma_range: tuple[float, float] = (1.0, 3.0),
    snr_db: float | None = None,
) -> PlantedModel:
    """Slices ``Q_l H diag(sigma_l) V^T`` with random orthonormal ``Q_l``.

    ``H`` and ``V`` have unit-norm Gaussian columns and ``sigma`` is uniform
    on ``sigma_range``. With ``snr_db`` set, i.i.d. Gaussian noise is added
    to every slice at that signal-to-noise ratio (slice power over noise power).
    """
    rng = np.random.default_rng(seed)
    rows = [rows] * n_slices if isinstance(rows, int) else list(rows)
    h = _unit_columns(rng.standard_normal((rank, rank)))
    v = _unit_columns(rng.standard_normal((d, rank)))
    sigma = rng.uniform(*sigma_range, size=(n_slices, rank))
    q = [np.linalg.qr(rng.standard_normal((r, rank)))[0] for r in rows]
    plant = PlantedModel([], q, h, v, sigma)
    for i in range(n_slices):
        clean = plant.clean(i)
        if snr_db is not None:
            power = np.mean(clean**2) / 10 ** (snr_db / 10)
            clean = clean + rng.standard_normal(clean.shape) * np.sqrt(power)
        plant.omegas.append(clean)
    return plant


def _corpus(rng: np.random.Generator, n_chars: int, n_lemmas: int, n_tokens: int) -> list[str]:
    alphabet = [chr(0x61 + i) if i < 26 else chr(0x3B1 + i - 26) for i in range(n_chars)]
    weights = 1.0 / np.arange(1, n_chars + 1)
    weights /= weights.sum()
    lemmas = ["".join(rng.choice(alphabet, size=rng.integers(2, 7), p=weights))
              for _ in range(n_lemmas)]
    lines = []
    for _ in range(n_tokens):
        lem = lemmas[rng.integers(n_lemmas)]
        tok = lem + rng.choice(["", "s", "en", "a"])
        lines.append(f"{tok}\t{lem}")
    return lines


def make_dataset(
    out_dir: str | Path,
    seed: int = 0,
    layers: int = 7,
    rows: int = 160,
    d: int = 10,
    rank: int = 3,
    noise: float = 0.05,
    missing: tuple[str, str] | None = ("cs", "Case"),
) -> Path:
    """Write a synthetic analysis set under ``out_dir`` and return the config path.

    Every group shares latent directions with the experimental space; the
    per-component strength comes from its family profile plus a small
    group-specific offset and decays with layer index, so the pipeline has
    trends to find and families to cluster.
    """
    out = Path(out_dir)
    (out / "matrices").mkdir(parents=True, exist_ok=True)
    (out / "corpora").mkdir(exist_ok=True)
    rng = np.random.default_rng(seed)
    groups = [g for fam in FAMILIES.values() for g in fam]
    fam_of = {g: f for f, gs in FAMILIES.items() for g in gs}

    fam_profile = {f: rng.uniform(0.2, 2.0, size=rank) for f in FAMILIES}
    strength = {g: fam_profile[fam_of[g]] * rng.uniform(0.9, 1.1, size=rank) for g in groups}
    ctl_dim = {g: int(rng.integers(rank + 4, rank + 8)) for g in groups}
    b = _unit_columns(rng.standard_normal((d, rank)))
    h = _unit_columns(rng.standard_normal((rank, rank)) + 2 * np.eye(rank))
    basis = {g: np.linalg.qr(rng.standard_normal((ctl_dim[g], rank)))[0] for g in groups}
    cat_scale = {c: 1.0 - 0.15 * i for i, c in enumerate(CATEGORIES)}

    entries = []
    for layer in range(layers):
        decay = np.exp(-0.25 * layer)
        for cat in CATEGORIES:
            for g in groups:
                if missing and (g, cat) == missing:
                    continue
                # centred, whitened latent draw: L^T L = rows * I exactly
                latent = rng.standard_normal((rows, rank))
                latent = np.linalg.qr(latent - latent.mean(axis=0))[0] * np.sqrt(rows)
                y = latent @ b.T + noise * rng.standard_normal((rows, d))
                c = basis[g] @ h * (strength[g] * decay * cat_scale[cat])
                z = latent @ c.T + noise * rng.standard_normal((rows, ctl_dim[g]))
                stem = f"{g}_L{layer}_{cat}"
                write_matrix(y, out / "matrices" / f"{stem}_exp.rfm")
                write_matrix(z, out / "matrices" / f"{stem}_ctl.rfm")
                entries.append({
                    "group": g, "layer": layer, "category": cat,
                    "experimental": f"matrices/{stem}_exp.rfm",
                    "control": f"matrices/{stem}_ctl.rfm",
                })

    corpora = {}
    for g in groups:
        n_chars = int(rng.integers(20, 40))
        lines = _corpus(rng, n_chars, int(rng.integers(40, 120)),
                        int(rng.integers(300, 900)))
        (out / "corpora" / f"{g}.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        corpora[g] = f"corpora/{g}.tsv"

    mean_strength = {g: float(strength[g].mean()) for g in groups}
    scores = {
        "POS": {g: round(60 + 15 * s + rng.normal(0, 1), 3) for g, s in mean_strength.items()},
        "NER": {g: round(50 + 10 * s + rng.normal(0, 2), 3)
                for g, s in list(mean_strength.items())[:7]},
    }
    manifest = {
        "groups": groups,
        "layers": list(range(layers)),
        "categories": CATEGORIES,
        "entries": entries,
        "external_scores": scores,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")

    config = {
        "manifest": "manifest.json",
        "output_dir": "out",
        "solver": {"rank": rank, "max_sweeps": 500, "rel_tol": 1e-8, "seed": seed, "init": "svd"},
        "center": True,
        "normalize": False,
        "corpora": corpora,
        "analyses": [
            {"type": "trend", "alpha": 0.05, "q": 0.05},
            {"type": "property_correlation", "properties": ["unique_chars", "ttr", "data_size"]},
            {"type": "variance_test", "category": "PoS", "layers": [0, layers // 2, layers - 1],
             "diverse": ["en", "fr", "ru"],
             "related": {"germanic": FAMILIES["germanic"], "romance": FAMILIES["romance"],
                         "slavic": FAMILIES["slavic"]}},
            {"type": "tree", "category": "PoS", "exclude": ["PoS"]},
            {"type": "external_correlation", "category": "PoS"},
        ],
    }
    path = out / "config.json"
    path.write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    return path
