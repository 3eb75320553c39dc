import filecmp
import json
import os

import numpy as np
import pytest

from atwflow.cli import main
from atwflow.io import load_field, read_diagnostics, scenario_hash


BASE_SCENARIO = {
    "box": {"origin": [0, 0], "extents": [1, 1]},
    "grid": [96, 96],
    "phi": "euclidean",
    "psi": "euclidean",
    "forcing": 0,
    "initial_set": {"type": "disk", "center": [0.5, 0.5], "radius": 0.25},
    "h": 0.001,
    "horizon": 0.004,
    "record_stride": 1,
    "tolerances": {"pd_gap_tol": 2e-5, "pd_max_iters": 30000},
}


def write_scenario(tmp_path, doc, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli_run")
    scn = write_scenario(tmp, BASE_SCENARIO)
    out = str(tmp / "out")
    assert main(["run", "--scenario", scn, "--out", out]) == 0
    return out


def test_run_writes_frames_and_diagnostics(run_dir):
    frames = sorted(os.listdir(os.path.join(run_dir, "frames")))
    assert "indicator_000000.f64" in frames
    assert "indicator_000004.f64" in frames
    assert "interface_000004.csv" in frames
    rows = read_diagnostics(run_dir)
    assert len(rows) == 4
    assert set(rows[0]) >= {"t", "area", "perimeter", "dissipation_slack", "gap"}


def test_field_roundtrip(run_dir):
    data, grid, meta = load_field(os.path.join(run_dir, "frames", "indicator_000000"))
    assert data.shape == (96, 96)
    assert meta["kind"] == "indicator"
    assert grid.spacing == pytest.approx(1 / 96)
    assert data.sum() * grid.cell_area == pytest.approx(np.pi * 0.25**2, rel=0.02)


def test_rerun_bit_identical(run_dir, tmp_path):
    scn = write_scenario(tmp_path, BASE_SCENARIO)
    out2 = str(tmp_path / "out2")
    assert main(["run", "--scenario", scn, "--out", out2]) == 0
    for name in os.listdir(os.path.join(run_dir, "frames")):
        assert filecmp.cmp(
            os.path.join(run_dir, "frames", name),
            os.path.join(out2, "frames", name),
            shallow=False,
        )
    assert filecmp.cmp(
        os.path.join(run_dir, "diagnostics.csv"),
        os.path.join(out2, "diagnostics.csv"),
        shallow=False,
    )


def test_manifest_hash_tracks_content(run_dir):
    with open(os.path.join(run_dir, "manifest.json")) as f:
        manifest = json.load(f)
    assert manifest["scenario_sha256"] == scenario_hash(BASE_SCENARIO)
    changed = dict(BASE_SCENARIO, h=0.002)
    assert scenario_hash(changed) != scenario_hash(BASE_SCENARIO)
    # key order does not matter
    reordered = json.loads(json.dumps(BASE_SCENARIO, sort_keys=True))
    assert scenario_hash(reordered) == scenario_hash(BASE_SCENARIO)


def test_verify_passes_on_good_trace(run_dir):
    assert main(["verify", "--trace", run_dir]) == 0
    assert os.path.exists(os.path.join(run_dir, "verify_report.csv"))


def test_verify_missing_trace_exits_2(tmp_path):
    assert main(["verify", "--trace", str(tmp_path / "nope")]) == 2


def test_malformed_scenario_exits_2(tmp_path):
    bad = dict(BASE_SCENARIO, phi={"family": "nosuch"})
    scn = write_scenario(tmp_path, bad)
    assert main(["run", "--scenario", scn, "--out", str(tmp_path / "o")]) == 2
    bad2 = dict(BASE_SCENARIO)
    del bad2["h"]
    scn2 = write_scenario(tmp_path, bad2, "bad2.json")
    assert main(["run", "--scenario", scn2, "--out", str(tmp_path / "o2")]) == 2


def test_levelset_single_level_matches_run(run_dir, tmp_path):
    doc = dict(BASE_SCENARIO, ladder={"levels": 1, "variant": "minus"})
    scn = write_scenario(tmp_path, doc)
    out = str(tmp_path / "ls")
    assert main(["levelset", "--scenario", scn, "--out", out]) == 0
    # reconstruction of a single-level ladder carries the same zero set as
    # the set-flow indicator
    u, grid, _ = load_field(os.path.join(out, "levelset_minus_000004"))
    ind, _, _ = load_field(os.path.join(run_dir, "frames", "indicator_000004"))
    assert np.array_equal(u >= 0.0, ind > 0.5)


def test_levelset_variant_pair_ordering(tmp_path):
    doc = dict(BASE_SCENARIO, horizon=0.002, ladder={"levels": 6, "variant": "both"})
    scn = write_scenario(tmp_path, doc)
    out = str(tmp_path / "pair")
    assert main(["levelset", "--scenario", scn, "--out", out]) == 0
    assert os.path.exists(os.path.join(out, "ordering_report.csv"))


def test_convergence_command(tmp_path):
    doc = dict(BASE_SCENARIO, horizon=0.004)
    scn = write_scenario(tmp_path, doc)
    out = str(tmp_path / "conv")
    assert main([
        "convergence", "--scenario", scn, "--ladder", "0.002,0.001",
        "--times", "2", "--out", out,
    ]) == 0
    assert os.path.exists(os.path.join(out, "convergence.csv"))


def test_threads_env_parsing(monkeypatch):
    from atwflow.cli import _workers

    monkeypatch.setenv("ATWFLOW_THREADS", "4")
    assert _workers() == 4
    monkeypatch.setenv("ATWFLOW_THREADS", "junk")
    assert _workers() == 1
