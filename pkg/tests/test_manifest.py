import json
from datetime import datetime, timedelta, timezone

import pytest

from tfrmt.manifest import OutputSession, RunHistory, RunManifest, sha256_file


def test_history_returns_newest_first(tmp_path):
    history = RunHistory(tmp_path / "runs.jsonl")
    start = datetime(2024, 1, 1, tzinfo=timezone.utc)
    for i, command in enumerate(["modes", "timefront", "average"]):
        history.append(command, "abc", "ok", 0.5 * i, timestamp=start + timedelta(minutes=i))
    records = history.records()
    assert [r.command for r in records] == ["average", "timefront", "modes"]
    assert records[0].elapsed_s == 1.0
    assert [r.command for r in history.records(limit=2)] == ["average", "timefront"]


def test_history_skips_malformed_lines(tmp_path):
    path = tmp_path / "runs.jsonl"
    history = RunHistory(path)
    history.append("modes", "abc", "ok", 0.1)
    with path.open("a", encoding="utf-8") as handle:
        handle.write("{broken\n\n")
        handle.write(json.dumps({"command": "no timestamp"}) + "\n")
    history.append("compare", "abc", "error", 0.2)
    assert [r.command for r in history.records()] == ["compare", "modes"]


def test_missing_history_is_empty(tmp_path):
    assert RunHistory(tmp_path / "none.jsonl").records() == []


def test_session_keeps_outputs_on_success(tmp_path):
    with OutputSession(tmp_path / "out") as session:
        session.path("a/b.txt").write_text("x", encoding="utf-8")
    assert (tmp_path / "out" / "a" / "b.txt").exists()
    assert len(session.written) == 1


def test_session_discards_partial_outputs_on_failure(tmp_path):
    with pytest.raises(RuntimeError):
        with OutputSession(tmp_path / "out") as session:
            session.path("a.grid").write_bytes(b"partial")
            session.path("never-written.csv")
            raise RuntimeError("boom")
    assert not (tmp_path / "out" / "a.grid").exists()
    assert session.written == []


def test_manifest_is_deterministic_and_sorted(tmp_path):
    for name in ("b.csv", "a.grid"):
        (tmp_path / name).write_text(name, encoding="utf-8")

    def build(order):
        manifest = RunManifest("average", "abc", seeds={"master_seed": 1}, parameters={"method": "rmt"})
        for name in order:
            manifest.add_output(tmp_path / name, tmp_path)
        return manifest.write(tmp_path / f"manifest-{'-'.join(order)}.json").read_bytes()

    first = build(["b.csv", "a.grid"])
    second = build(["a.grid", "b.csv"])
    assert first == second
    data = json.loads(first)
    assert [item["path"] for item in data["outputs"]] == ["a.grid", "b.csv"]
    assert data["outputs"][0]["sha256"] == sha256_file(tmp_path / "a.grid")
    assert "tfrmt" in data["versions"]
    assert "timestamp" not in data
