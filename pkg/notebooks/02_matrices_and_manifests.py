"""
Matrix files, manifests and covariance slices
=============================================
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from repfactor import build_slices, load_manifest, read_matrix, write_matrix
from repfactor.model_io import coverage_count, profile_corpus

tmp = Path(tempfile.mkdtemp())
rng = np.random.default_rng(0)

# A 1x1 matrix takes a 24 byte header plus one float64.
write_matrix(np.array([[42.0]]), tmp / "one.rfm")
print((tmp / "one.rfm").stat().st_size)

# Round trips are bit exact, for float32 too.
x = rng.standard_normal((4, 3)).astype(np.float32)
write_matrix(x, tmp / "x.rfm")
print(read_matrix(tmp / "x.rfm").values.tobytes() == x.tobytes())

# Two groups, one layer: experimental (m x d) and control (m x d_l) pairs.
entries = []
for g, dl in [("en", 5), ("fr", 7)]:
    y = rng.standard_normal((50, 6))
    z = y[:, :3] @ rng.standard_normal((3, dl)) + 0.1 * rng.standard_normal((50, dl))
    write_matrix(y, tmp / f"{g}_exp.rfm")
    write_matrix(z, tmp / f"{g}_ctl.rfm")
    entries.append({"group": g, "layer": 0, "category": "ALL",
                    "experimental": f"{g}_exp.rfm", "control": f"{g}_ctl.rfm"})
manifest = {"groups": ["en", "fr"], "layers": [0], "categories": ["ALL"], "entries": entries}
(tmp / "manifest.json").write_text(json.dumps(manifest), encoding="utf-8")

aset = load_manifest(tmp / "manifest.json")
slices = build_slices(aset, 0, "ALL")
# Slices share d (columns) but differ in d_l (rows).
for s in slices:
    print(s.group_id, s.shape)

# Corpus profile: unique lemmas over tokens, and how many characters are
# needed to cover 99.9% of character occurrences.
print(profile_corpus([("run", "run"), ("runs", "run"), ("ran", "run")]))
print(coverage_count({"a": 999, "b": 1}), coverage_count({"a": 1, "b": 1, "c": 1}))
