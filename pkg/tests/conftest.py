import json

import numpy as np
import pytest

from repfactor.model_io import write_matrix


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write_manifest(tmp_path, groups, layers, categories, cells, **extra):
    """``cells`` maps (group, layer, category) to (experimental, control) arrays."""
    entries = []
    for (g, layer, cat), (y, z) in cells.items():
        stem = f"{g}_{layer}_{cat}"
        write_matrix(y, tmp_path / f"{stem}_exp.rfm")
        write_matrix(z, tmp_path / f"{stem}_ctl.rfm")
        entries.append({"group": g, "layer": layer, "category": cat,
                        "experimental": f"{stem}_exp.rfm", "control": f"{stem}_ctl.rfm"})
    doc = {"groups": groups, "layers": layers, "categories": categories, "entries": entries, **extra}
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def synthetic_config(tmp_path_factory):
    from repfactor.synthetic import make_dataset

    return make_dataset(tmp_path_factory.mktemp("synthetic"), seed=0)


def align_components(v_true, v_est):
    """Permutation and signs mapping estimated components onto planted ones.

    Returns ``(perm, signs)`` with ``v_est[:, perm[r]] * signs[r] ~ v_true[:, r]``.
    """
    from scipy.optimize import linear_sum_assignment

    a = v_true / np.linalg.norm(v_true, axis=0)
    b = v_est / np.linalg.norm(v_est, axis=0)
    c = a.T @ b
    rows, cols = linear_sum_assignment(-np.abs(c))
    perm = cols[np.argsort(rows)]
    signs = np.sign(c[np.arange(c.shape[0]), perm])
    return perm, signs


def aligned_sigma(plant, model):
    """Model sigma re-ordered and re-signed to match the planted gauge.

    ``H`` is only determined up to a rotation absorbed by the ``Q_l``, so
    signs come from ``V`` and from ``U_0 = Q_0 H``.
    """
    perm, sv = align_components(plant.v, model.v)
    u_true = plant.q[0] @ plant.h
    u_est = model.u(0)[:, perm]
    su = np.sign(np.einsum("ij,ij->j", u_true, u_est))
    return model.sigma[:, perm] * sv * su


# ---------------------------------------------------------------- acceptance report

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when not in ("setup", "call"):
        return
    number, title = mark.args
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "tests": 0})
    if report.when == "call":
        entry["tests"] += 1
    if report.failed:
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        status = "PASS" if e["ok"] else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status}  {e['title']} ({e['tests']} tests)")
