import csv
import json

import numpy as np
import pytest
from loguru import logger

from tfrmt.app import EXIT_CONFIG, EXIT_OK, build_parser, main
from tfrmt.gridfile import read_grid
from tfrmt.manifest import RunHistory


@pytest.fixture(autouse=True)
def _close_log_sinks():
    yield
    logger.remove()


def _run(*argv):
    return main([str(arg) for arg in argv])


def test_parser_lists_every_command():
    parser = build_parser()
    args = parser.parse_args(["timefront", "--method", "pe", "--epsilon", "0.5", "--depths", "1", "2"])
    assert (args.command, args.method, args.strength, args.depths) == ("timefront", "pe", 0.5, [1.0, 2.0])
    with pytest.raises(SystemExit):
        parser.parse_args(["modes", "--method", "pe"])


def test_modes_command_writes_grid_csv_and_manifest(toy_config_path, tmp_path):
    out = tmp_path / "out"
    assert _run("modes", "--config", toy_config_path, "--out", out, "--workers", 2) == EXIT_OK
    arrays, header = read_grid(out / "modes" / "modes.grid")
    assert arrays["psi"].shape == (arrays["z"].size, arrays["E"].size)
    assert header["M"] == arrays["E"].size
    with (out / "modes" / "modes.csv").open(encoding="utf-8") as handle:
        rows = list(csv.DictReader(handle))
    assert float(rows[0]["E"]) == pytest.approx(float(rows[0]["harmonic_E"]), rel=0.1)
    manifest = json.loads((out / "modes" / "manifest.json").read_text(encoding="utf-8"))
    assert {item["path"] for item in manifest["outputs"]} == {"modes.grid", "modes.csv"}
    assert [r.status for r in RunHistory(out / "runs.jsonl").records()] == ["ok"]


def test_invalid_config_exits_with_config_code(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"ensemble": {"members": "many"}}), encoding="utf-8")
    assert _run("modes", "--config", path, "--out", tmp_path / "out") == EXIT_CONFIG
    assert not (tmp_path / "out" / "modes").exists()


def test_range_that_is_not_whole_blocks_is_a_config_error(toy_config_path, tmp_path):
    assert _run("average", "--config", toy_config_path, "--range", 15, "--out", tmp_path) == EXIT_CONFIG


def test_average_manifests_are_identical_across_runs(toy_config_path, tmp_path):
    manifests = []
    for name in ("first", "second"):
        out = tmp_path / name
        assert _run("average", "--config", toy_config_path, "--out", out, "--depths", 1.0) == EXIT_OK
        manifests.append((out / "average" / "manifest.json").read_bytes())
    assert manifests[0] == manifests[1]
    outputs = {item["path"] for item in json.loads(manifests[0])["outputs"]}
    assert {"average.grid", "average.db.grid", "average_traces.csv", "unperturbed.grid"} <= outputs


def test_seed_changes_the_average(toy_config_path, tmp_path):
    grids = []
    for seed in (1, 2):
        out = tmp_path / str(seed)
        assert _run("average", "--config", toy_config_path, "--out", out, "--seed", seed) == EXIT_OK
        grids.append(read_grid(out / "average" / "average.grid")[0]["intensity"])
    assert not np.array_equal(grids[0], grids[1])


def test_zero_strength_average_equals_unperturbed(toy_config_path, tmp_path):
    assert _run("average", "--config", toy_config_path, "--out", tmp_path, "--epsilon-scale", 0) == EXIT_OK
    average = read_grid(tmp_path / "average" / "average.grid")[0]["intensity"]
    base = read_grid(tmp_path / "average" / "unperturbed.grid")[0]["intensity"]
    np.testing.assert_allclose(average, base, atol=1e-10 * base.max())


def test_rmt_ensemble_writes_member_unitaries(toy_config_path, tmp_path):
    assert _run("rmt-ensemble", "--config", toy_config_path, "--out", tmp_path, "--members", 2) == EXIT_OK
    root = tmp_path / "rmt-ensemble"
    U = read_grid(root / "rmt_unitary" / "member_0001.grid")[0]["U"]
    assert np.max(np.abs(U @ U.conj().T - np.eye(U.shape[0]))) < 1e-10
    assert "band_mean" in read_grid(root / "variance_profile.grid")[0]


def test_mixing_front_writes_depth_profile(toy_config_path, tmp_path):
    assert _run("mixing-front", "--config", toy_config_path, "--out", tmp_path) == EXIT_OK
    root = tmp_path / "mixing-front"
    delta = read_grid(root / "mixing_front.grid")[0]["intensity"]
    assert np.all(delta >= 0.0)
    header = (root / "depth_profile.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header == "z_km,unperturbed,prediction,rmt_average"


def test_compare_writes_report(toy_config_path, tmp_path):
    assert _run("compare", "--config", toy_config_path, "--out", tmp_path, "--members", 2) == EXIT_OK
    report = json.loads((tmp_path / "compare" / "compare.json").read_text(encoding="utf-8"))
    assert report["members"] == {"pe": 2, "rmt": 2}
    assert report["variance_table"]
    assert (tmp_path / "compare" / "average_pe.grid").exists()


def test_overflowing_config_value_exits_with_config_code(tmp_path):
    path = tmp_path / "huge.json"
    path.write_text('{"ensemble": {"members": 1e400}}', encoding="utf-8")
    assert _run("modes", "--config", path, "--out", tmp_path / "out") == EXIT_CONFIG
