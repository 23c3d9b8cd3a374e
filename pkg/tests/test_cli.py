import hashlib
import json
import shutil

import pytest

from repfactor.cli import main
from repfactor.pipeline import Pipeline, PipelineConfig, StageError
from repfactor.synthetic import make_dataset


def digests(root, patterns=("*.csv", "*.nwk")):
    out = {}
    for pat in patterns:
        for p in sorted(x for x in root.rglob(pat) if x.is_file()):
            out[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    """A 4-layer synthetic dataset; copy it before running stages."""
    return make_dataset(tmp_path_factory.mktemp("small"), seed=1, layers=4, rows=60)


def fresh(src_config, tmp_path, name="run"):
    dst = tmp_path / name
    shutil.copytree(src_config.parent, dst)
    shutil.rmtree(dst / "out", ignore_errors=True)
    return dst / "config.json"


@pytest.fixture(scope="module")
def full_run(synthetic_config, tmp_path_factory):
    cfg = fresh(synthetic_config, tmp_path_factory.mktemp("full"))
    assert main(["pipeline", str(cfg)]) == 0
    return cfg


def test_decompose_happy_path(small, tmp_path, capsys):
    cfg = fresh(small, tmp_path)
    for stage in ("ingest", "covariance", "decompose"):
        assert main([stage, str(cfg)]) == 0
    pipe = Pipeline(PipelineConfig.load(cfg))
    dirs = {p.name for p in pipe.stage_dir("decompose").iterdir() if p.is_dir()}
    assert dirs == {f"L{layer}_{c}" for layer, c in pipe.cells()}
    assert len(dirs) == 4 * 3
    assert (pipe.stage_dir("decompose") / "L0_PoS" / "meta.json").is_file()


def test_ordering_guard(small, tmp_path, capsys):
    cfg = fresh(small, tmp_path)
    assert main(["signatures", str(cfg)]) != 0
    assert "missing stage: decompose" in capsys.readouterr().err


def test_stats_subcommand_guard(small, tmp_path, capsys):
    cfg = fresh(small, tmp_path)
    assert main(["stats", "trend", str(cfg)]) != 0
    assert "missing stage: signatures" in capsys.readouterr().err


def test_summary_lists_artifacts(full_run):
    summary = json.loads((full_run.parent / "out" / "summary.json").read_text(encoding="utf-8"))
    names = list(summary["artifacts"])
    assert any(n.endswith("signatures.csv") for n in names)
    assert any(n.endswith("trend.csv") for n in names)
    assert any(n.endswith("external_correlations.csv") for n in names)
    assert any("tree_L0_PoS.nwk" in n for n in names)
    assert any("average_tree_L6.nwk" in n for n in names)
    root = full_run.parent / "out"
    for name, digest in summary["artifacts"].items():
        assert hashlib.sha256((root / name).read_bytes()).hexdigest() == digest


def test_trend_csv_columns(full_run):
    (trend,) = (full_run.parent / "out").glob("trend-*/trend.csv")
    lines = trend.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "group,category,S,Z,p,p_adjusted,direction"
    assert all(ln.endswith(("decreasing", "increasing", "none")) for ln in lines[1:])


def test_correlation_csv_columns(full_run):
    (corr,) = (full_run.parent / "out").glob("correlate-*/correlations.csv")
    assert corr.read_text(encoding="utf-8").splitlines()[0] == "property,layer,category,r,n"


def test_rerun_is_noop(full_run, capsys):
    before = digests(full_run.parent / "out", ("*",))
    pipe = Pipeline(PipelineConfig.load(full_run))
    assert not any(pipe.run_stage(s) for s in ("ingest", "covariance", "decompose", "signatures"))
    assert main(["pipeline", str(full_run)]) == 0
    assert digests(full_run.parent / "out", ("*",)) == before


def test_deterministic_rerun(full_run, synthetic_config, tmp_path):
    again = fresh(synthetic_config, tmp_path)
    assert main(["pipeline", str(again)]) == 0
    a, b = digests(full_run.parent / "out"), digests(again.parent / "out")
    assert a == b and len(a) > 10


def test_inputs_untouched(small, tmp_path):
    cfg = fresh(small, tmp_path)
    inputs = digests(cfg.parent, ("*.rfm", "*.tsv", "*.json"))
    assert main(["pipeline", str(cfg)]) == 0
    after = {k: v for k, v in digests(cfg.parent, ("*.rfm", "*.tsv", "*.json")).items()
             if not k.startswith("out")}
    assert after == inputs


def test_rank_override_reuses_covariance(small, tmp_path):
    cfg = fresh(small, tmp_path)
    assert main(["pipeline", str(cfg)]) == 0
    base = Pipeline(PipelineConfig.load(cfg))
    other = Pipeline(PipelineConfig.load(cfg, rank=2))
    assert base.stage_dir("covariance") == other.stage_dir("covariance")
    assert base.stage_dir("decompose") != other.stage_dir("decompose")
    assert other.is_done("covariance") and not other.run_stage("covariance")
    assert other.run_stage("decompose")


def test_rank_too_large(small, tmp_path, capsys):
    cfg = fresh(small, tmp_path)
    assert main(["pipeline", str(cfg), "--rank", "500"]) == 2
    err = capsys.readouterr().err
    assert "RankTooLarge" in err and "[decompose]" in err


def test_external_scores_toggle(small, tmp_path):
    cfg = fresh(small, tmp_path)
    doc = json.loads(cfg.read_text(encoding="utf-8"))
    doc["analyses"] = [a for a in doc["analyses"] if a["type"] != "external_correlation"]
    cfg.write_text(json.dumps(doc), encoding="utf-8")
    summary = Pipeline(PipelineConfig.load(cfg)).run()
    assert any(n.endswith("external_correlations.csv") for n in summary["artifacts"])

    manifest = cfg.parent / "manifest.json"
    mdoc = json.loads(manifest.read_text(encoding="utf-8"))
    del mdoc["external_scores"]
    manifest.write_text(json.dumps(mdoc), encoding="utf-8")
    summary = Pipeline(PipelineConfig.load(cfg)).run()
    assert not any(n.endswith("external_correlations.csv") for n in summary["artifacts"])


def test_jobs_do_not_change_outputs(small, tmp_path, monkeypatch):
    one = fresh(small, tmp_path, "one")
    many = fresh(small, tmp_path, "many")
    assert main(["pipeline", str(one), "--jobs", "1"]) == 0
    monkeypatch.setenv("REPFACTOR_JOBS", "4")
    assert PipelineConfig.load(many).jobs == 4
    assert main(["pipeline", str(many)]) == 0
    assert digests(one.parent / "out") == digests(many.parent / "out")


def test_overrides(small):
    cfg = PipelineConfig.load(small, seed=9, tol=1e-6, max_sweeps=7, q=0.1, alpha=0.01,
                              layer=2, category="Case", jobs=3)
    assert (cfg.solver.seed, cfg.solver.rel_tol, cfg.solver.max_sweeps) == (9, 1e-6, 7)
    trend = next(a for a in cfg.analyses if a["type"] == "trend")
    assert (trend["q"], trend["alpha"]) == (0.1, 0.01)
    assert cfg.layers == [2] and cfg.categories == ["Case"] and cfg.jobs == 3
    assert Pipeline(cfg).cells() == [(2, "Case")]


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["decompose"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["decompose", "c.json", "--rank", "two"])
    assert exc.value.code == 1


def test_data_errors(tmp_path, capsys):
    assert main(["decompose", str(tmp_path / "none.json")]) == 2
    (tmp_path / "bad.json").write_text("{", encoding="utf-8")
    assert main(["ingest", str(tmp_path / "bad.json")]) == 2
    (tmp_path / "c.json").write_text(json.dumps({"manifest": "m.json"}), encoding="utf-8")
    assert main(["ingest", str(tmp_path / "c.json")]) == 2
    assert "[ingest]" in capsys.readouterr().err


def test_unknown_analysis(tmp_path):
    (tmp_path / "c.json").write_text(
        json.dumps({"manifest": "m.json", "analyses": [{"type": "anova"}]}), encoding="utf-8")
    assert main(["ingest", str(tmp_path / "c.json")]) == 2


def test_unknown_stage(small):
    with pytest.raises(StageError):
        Pipeline(PipelineConfig.load(small)).run_stage("plot")


def test_synth_command(tmp_path, capsys):
    assert main(["synth", str(tmp_path / "s"), "--seed", "3"]) == 0
    assert (tmp_path / "s" / "config.json").is_file()
