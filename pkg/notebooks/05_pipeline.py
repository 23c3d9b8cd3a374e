"""
The staged pipeline on the bundled synthetic dataset
====================================================

The same stages are available from the shell:

    repfactor synth /tmp/syn
    repfactor pipeline /tmp/syn/config.json
    repfactor decompose /tmp/syn/config.json --rank 2
"""

import json
import tempfile
from pathlib import Path

from repfactor.pipeline import Pipeline, PipelineConfig
from repfactor.synthetic import make_dataset

root = Path(tempfile.mkdtemp())
config_path = make_dataset(root, seed=0)
print(json.dumps(json.loads(config_path.read_text()), indent=1)[:600])

pipe = Pipeline(PipelineConfig.load(config_path))
summary = pipe.run()
for name in sorted(summary["artifacts"]):
    if not name.endswith(".rfm"):
        print(name)

# Stage directories are keyed by a hash of inputs and options, so a second
# run does nothing, and a new rank reuses ingest and covariance.
print(pipe.run_stage("decompose"))
other = Pipeline(PipelineConfig.load(config_path, rank=2))
print(other.stage_dir("covariance") == pipe.stage_dir("covariance"))

print((pipe.stage_dir("trend") / "trend.csv").read_text().splitlines()[:4])
print(next(pipe.stage_dir("tree").glob("average_tree_*.nwk")).read_text())
