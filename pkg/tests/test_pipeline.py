import json
import re
import shutil

import pytest

from conftest import FIXTURES
from vulnloc.cli import main
from vulnloc.corpus import read_corpus
from vulnloc.pipeline import load_config, read_report, sha256_file


@pytest.fixture(scope="module")
def learned(tmp_path_factory):
    """One learn-phase run over the fixture project, shared by the tests below."""
    work = tmp_path_factory.mktemp("learn")
    config = FIXTURES / "project" / "config.ini"
    assert main(["run", "--config", str(config), "--work-dir", str(work), "--phase", "learn"]) == 0
    return config, work


def _manifest(work):
    return json.loads((work / "manifest.json").read_text())


def test_learn_run_locates_lines(learned):
    _, work = learned
    entries = read_report(work / "report.tsv")
    located = [loc for e in entries for loc in e.locations]
    assert located
    assert all(re.fullmatch(r"prog\d\d/main\.c:\d+", loc) for loc in located)
    summary = (work / "summary.tsv").read_text()
    assert summary.startswith("# summary\n")
    stages = _manifest(work)["stages"]
    assert set(stages) == {"extract", "ingest-ir", "slice", "label", "encode", "train", "detect", "eval"}
    for name, entry in stages.items():
        assert entry["outputs"], name
        for fname, digest in entry["outputs"].items():
            assert sha256_file(work / fname) == digest


def test_resume_reproduces_outputs(learned, tmp_path):
    config, work = learned
    copy = tmp_path / "w"
    shutil.copytree(work, copy)
    before = _manifest(copy)["stages"]
    for name in ("dataset.bin", "model.bin", "report.tsv"):
        (copy / name).unlink()
    base = ["--config", str(config), "--work-dir", str(copy)]
    assert main(["encode"] + base) == 0
    assert main(["train"] + base) == 0
    assert main(["detect"] + base) == 0
    after = _manifest(copy)["stages"]
    for name in ("encode", "train", "detect"):
        assert after[name]["outputs"] == before[name]["outputs"]


def test_test_phase_skips_training(learned, tmp_path):
    config, work = learned
    out = tmp_path / "t"
    assert main(["run", "--config", str(config), "--work-dir", str(out), "--model-dir", str(work),
                 "--phase", "test"]) == 0
    stages = _manifest(out)["stages"]
    assert set(stages) == {"extract", "ingest-ir", "slice", "encode", "detect"}
    assert not (out / "labeled.txt").exists() and not (out / "model.bin").exists()
    learn_ids = {e.sample_id for e in read_report(work / "report.tsv")}
    test_ids = {e.sample_id for e in read_report(out / "report.tsv")}
    assert learn_ids < test_ids


def _vulnerable_id(work):
    for e in read_report(work / "report.tsv"):
        if e.locations:
            return e.sample_id, e.locations
    raise AssertionError("no located sample")


def test_explain_trace(learned, capsys):
    config, work = learned
    cid, locs = _vulnerable_id(work)
    capsys.readouterr()
    assert main(["explain", cid, "--config", str(config), "--work-dir", str(work)]) == 0
    text = capsys.readouterr().out
    rec = next(r for r in read_corpus(work / "labeled.txt") if r.candidate_id == cid)
    rows = [ln for ln in text.splitlines() if re.match(r"^[* ]\s*\d+  ", ln)]
    assert len(rows) == len(rec.statements)
    assert text.rstrip().splitlines()[-1] == "located: " + ", ".join(locs)


def test_explain_unknown_id(learned, capsys):
    config, work = learned
    cid, _ = _vulnerable_id(work)
    assert main(["explain", cid + "x", "--config", str(config), "--work-dir", str(work)]) == 2
    err = capsys.readouterr().err
    assert "unknown candidate id" in err and cid in err


def test_missing_upstream_names_stage(tmp_path, fixtures, capsys):
    config = fixtures / "project" / "config.ini"
    assert main(["slice", "--config", str(config), "--work-dir", str(tmp_path)]) == 2
    assert "'extract'" in capsys.readouterr().err
    assert main(["detect", "--config", str(config), "--work-dir", str(tmp_path)]) == 2
    assert "'encode'" in capsys.readouterr().err


def test_usage_errors_exit_one(capsys):
    for argv in (["bogus"], [], ["detect", "--threshold", "high"], ["encode", "--phase", "later"]):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 1, argv


def test_bad_config_value_exits_one(tmp_path, fixtures):
    cfg = tmp_path / "c.ini"
    text = (fixtures / "project" / "config.ini").read_text().replace("dim = 16", "dim = sixteen")
    cfg.write_text(text)
    assert main(["extract", "--config", str(cfg), "--work-dir", str(tmp_path / "w")]) == 1


def test_bad_schema_is_data_error(tmp_path, fixtures):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[pipeline]\nschema_version = 7\n")
    assert main(["extract", "--config", str(cfg)]) == 2


def test_work_dir_from_env(tmp_path, fixtures, monkeypatch):
    monkeypatch.setenv("VULNLOC_WORK_DIR", str(tmp_path / "envwork"))
    config = fixtures / "project" / "config.ini"
    assert load_config(config).work_dir == tmp_path / "envwork"
    assert main(["extract", "--config", str(config)]) == 0
    assert (tmp_path / "envwork" / "candidates.tsv").is_file()
    # the flag wins over the environment
    assert load_config(config, {"work_dir": str(tmp_path / "flag")}).work_dir.name == "flag"


def test_stage_outputs_to_explicit_paths(tmp_path, fixtures):
    config = fixtures / "project" / "config.ini"
    out = tmp_path / "elsewhere" / "cands.tsv"
    out.parent.mkdir()
    assert main(["extract", "--config", str(config), "--work-dir", str(tmp_path / "w"),
                 "--src", str(fixtures / "project" / "src" / "prog02"), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "# vulnloc-candidates 1"
    assert len(lines) > 1
    assert _manifest(tmp_path / "w")["stages"]["extract"]["outputs"] == {"cands.tsv": sha256_file(out)}
