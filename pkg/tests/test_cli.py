from __future__ import annotations

import dataclasses
import json
import signal
import subprocess
import sys

import numpy as np
import pytest

from gainrag.cli import main
from gainrag.config import load_config
from gainrag.scenario_db import GainSet, save_database, serialize_database
from gainrag.sim import RunLog, analyze


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_validate_seed(capsys):
    code, out, _ = run(capsys, "validate-db")
    assert code == 0 and "16 records, no findings" in out


def test_validate_corrupted_gain(capsys, db, tmp_path):
    bad = [dataclasses.replace(db[0], gains=GainSet((70.0,) + db[0].gains.kp[1:], db[0].gains.kd))]
    bad.append(dataclasses.replace(db[1], gains=GainSet(db[1].gains.kp, (0.0,) + db[1].gains.kd[1:])))
    path = tmp_path / "bad.csv"
    save_database(bad + list(db[2:]), path)
    code, out, _ = run(capsys, "validate-db", str(path))
    assert code == 1
    assert "L0_kp=70.0" in out and "L0_kd=0.0" in out and "2 finding(s)" in out


def test_validate_unparseable(capsys, db, tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text(serialize_database(db).replace("55.0", "fifty", 1))
    code, out, _ = run(capsys, "validate-db", str(path))
    assert code == 1 and "row 0" in out


def test_validate_missing_file(capsys, tmp_path):
    code, _, err = run(capsys, "validate-db", str(tmp_path / "nope.csv"))
    assert code == 2 and "cannot read" in err


def test_query_self_description(capsys, db, tmp_path):
    desc = tmp_path / "d.json"
    from gainrag.perception import MockVLMClient

    desc.write_text(json.dumps(MockVLMClient().describe(db[3].scenario_id).to_dict()))
    code, out, _ = run(capsys, "query", "--descriptor", str(desc))
    assert code == 0
    assert f"scenario: {db[3].scenario_id}" in out and "reason: ok" in out and "distance: 0" in out


def test_query_explain_three_lines(capsys):
    _, plain, _ = run(capsys, "query", "--stub", "cube_with_hand")
    code, out, _ = run(capsys, "query", "--stub", "cube_with_hand", "--explain")
    extra = out.splitlines()[len(plain.splitlines()):]
    assert code == 0 and len(extra) == 3 and all(line.startswith("candidate") for line in extra)


def test_query_unknown_stub(capsys):
    code, _, err = run(capsys, "query", "--stub", "nowhere")
    assert code == 1 and "unknown scene stub" in err


def test_query_missing_descriptor(capsys, tmp_path):
    code, _, _ = run(capsys, "query", "--descriptor", str(tmp_path / "none.json"))
    assert code == 2


def test_query_tie_on_duplicate_db(capsys, db, tmp_path):
    twin = dataclasses.replace(db[0], scenario_id="twin_of_first")
    path = tmp_path / "dup.csv"
    save_database([db[0], twin] + list(db[1:]), path)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"db": "dup.csv"}))
    code, out, _ = run(capsys, "--config", str(cfg), "query", "--stub", db[0].scenario_id)
    assert code == 0 and "scenario: fallback" in out and "reason: tie" in out


def test_describe(capsys):
    code, out, _ = run(capsys, "describe", "--stub", "wipe_with_hand")
    assert code == 0 and json.loads(out)["task_type"] == "wipe"


def test_bad_usage(capsys):
    with pytest.raises(SystemExit) as err:
        main(["query"])
    assert err.value.code == 3


def test_missing_config(capsys, tmp_path):
    code, _, _ = run(capsys, "--config", str(tmp_path / "c.json"), "validate-db")
    assert code == 2


def test_config_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"comms": {"port": 9100, "stream_rate": 2.0}, "seed": 5,
                               "retrieval": {"tie_margin": 0.05}}))
    c = load_config(cfg, env={})
    assert (c.comms.port, c.comms.stream_rate, c.seed, c.retrieval.tie_margin) == (9100, 2.0, 5, 0.05)
    c = load_config(cfg, env={"GAINRAG_PORT": "9200"})
    assert c.comms.port == 9200 and c.comms.stream_rate == 2.0
    assert load_config(None, env={}).comms.port == 8765
    cfg.write_text(json.dumps({"safety": {"speed_cap": 1}}))
    with pytest.raises(ValueError):
        load_config(cfg, env={})


def test_simulate_and_report(capsys, tmp_path):
    log_path = tmp_path / "wipe_with_hand.csv"
    code, out, _ = run(capsys, "--seed", "1", "simulate", "wipe_with_hand", "--out", str(log_path))
    assert code == 0 and "speed sequence: normal -> slow -> normal" in out
    rep = analyze(RunLog.from_csv(log_path))
    kp = [np.array(p.final_kp) for p in rep.phases]
    assert np.all(kp[1] <= kp[0]) and np.array_equal(kp[2], kp[0])
    code, out, _ = run(capsys, "report", str(log_path), "--out", str(tmp_path / "r.csv"))
    assert code == 0 and (tmp_path / "r.csv").exists()


def test_simulate_deterministic(capsys, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run(capsys, "simulate", "cube", "--out", str(a))
    run(capsys, "simulate", "cube", "--out", str(b))
    assert a.read_bytes() == b.read_bytes()


def test_simulate_unknown_script(capsys):
    code, _, err = run(capsys, "simulate", "moonwalk")
    assert code == 2 and "script not found" in err


def test_report_empty_log(capsys, tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("tick,t,stub\n")
    code, _, err = run(capsys, "report", str(path))
    assert code == 1 and "no ticks" in err


@pytest.mark.slow
def test_serve_and_remote_simulate(tmp_path):
    proc = subprocess.Popen([sys.executable, "-m", "gainrag.cli", "serve", "--port", "0"],
                            stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    try:
        line = proc.stdout.readline()
        assert line.startswith("serving on")
        port = int(line.rsplit(":", 1)[1])
        out = tmp_path / "remote.csv"
        res = subprocess.run([sys.executable, "-m", "gainrag.cli", "simulate", "wipe_with_hand", "--remote",
                              f"127.0.0.1:{port}", "--speedup", "4", "--out", str(out)],
                             capture_output=True, text=True, timeout=120)
        assert res.returncode == 0, res.stderr
        rep = analyze(RunLog.from_csv(out))
        kp = [np.array(p.final_kp) for p in rep.phases]
        kd = [np.array(p.final_kd) for p in rep.phases]
        assert np.all(kp[1] <= kp[0]) and np.all(kd[1] >= kd[0]) and np.array_equal(kp[2], kp[0])
        assert rep.v_sequence == ["normal", "slow", "normal"]
    finally:
        proc.send_signal(signal.SIGINT)
        assert proc.wait(timeout=10) == 0
