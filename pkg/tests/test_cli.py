import json

import pytest

from sisa_itscf.cli import main

TINY = """\
lstm1_hidden = 4
lstm2_hidden = 3
fc_hidden = 8
epochs = 8
batch_size = 1024
repeats = 1
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "tiny.cfg").write_text(TINY)
    return d


def run(*argv):
    return main([str(a) for a in argv])


def test_synth_poison_train_unlearn(workdir, capsys):
    cfg = workdir / "tiny.cfg"
    data, pois, out = workdir / "data", workdir / "pois", workdir / "out"
    assert run("synth", "--config", cfg, "--out", data) == 0
    man = json.loads((data / "manifest.json").read_text())
    assert len(man["files"]) == 48 and man["poisoned"] == []

    assert run("poison", "--config", cfg, "--data", data, "--conditions", "LA1", "--out", pois) == 0
    assert json.loads((pois / "manifest.json").read_text())["poisoned"] == ["LA1"]
    assert (pois / "poisoned" / "cond_24_LA1.csv").exists()

    assert run("train", "--config", cfg, "--data", pois, "--shards", 2, "--out", out) == 0
    state = json.loads((out / "checkpoints" / "S2" / "state.json").read_text())
    assert state["slices"] == 4 and state["removed"] == []
    assert (out / "checkpoints" / "S2" / "shard_1" / "stage_4.ckpt").exists()

    capsys.readouterr()
    assert run("unlearn", "--config", cfg, "--data", pois, "--shards", 2, "--out", out) == 0
    text = capsys.readouterr().out
    assert "case 4 S=2" in text
    state = json.loads((out / "checkpoints" / "S2" / "state.json").read_text())
    assert state["removed"] == [24]
    summary = (out / "summary.csv").read_text().splitlines()
    assert summary[1].startswith("4,2,")

    # a second request for the same condition is rejected
    assert run("unlearn", "--config", cfg, "--data", pois, "--shards", 2, "--out", out) == 2
    assert "not present" in capsys.readouterr().err

    assert run("retrain", "--config", cfg, "--data", pois, "--out", workdir / "re") == 0
    assert "case 3" in capsys.readouterr().out


def test_unlearn_without_checkpoints_fails(workdir, capsys):
    with pytest.raises(SystemExit, match="missing checkpoints"):
        run("unlearn", "--config", workdir / "tiny.cfg", "--shards", 2, "--out", workdir / "empty")


def test_train_needs_single_shard_count(workdir):
    with pytest.raises(SystemExit):
        run("train", "--config", workdir / "tiny.cfg", "--shards", "1,2", "--out", workdir / "x")


def test_sweep(workdir, capsys):
    out = workdir / "sweep"
    assert run("sweep", "--config", workdir / "tiny.cfg", "--shards", "2", "--out", out) == 0
    text = capsys.readouterr().out
    assert "speedup" in text
    run_json = json.loads((out / "run.json").read_text())
    assert run_json["sweep"][0]["shards"] == 2
    assert run_json["sweep"][0]["unlearn_stage_epochs"] * 2 == run_json["sweep"][0]["full_stage_epochs"]


def test_bad_config_is_reported(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("shards = 3\n")
    assert run("sweep", "--config", bad) == 2
    assert "error:" in capsys.readouterr().err
    assert run("train", "--config", tmp_path / "missing.cfg") == 2


def test_gradcheck_command(capsys):
    assert run("gradcheck") == 0
    assert "PASS" in capsys.readouterr().out


def test_help_lists_commands(capsys):
    with pytest.raises(SystemExit):
        run("--help")
    text = capsys.readouterr().out
    for cmd in ("synth", "poison", "train", "retrain", "unlearn", "sweep", "gradcheck"):
        assert cmd in text
