import json
import subprocess
import sys

import pytest

from ngwn_sentinel import cli
from ngwn_sentinel.data_ingest import SynthConfig, synth_traffic, write_flow_csv
from ngwn_sentinel.honeynet import SealedLog, SealedLogEntry

TINY_CFG = """
[simulation configuration]
number_of_iot_user_nodes = 4
number_of_iot_device_nodes = 6
number_of_edge_gateways = 4
number_of_cloud_server = 1
time_for_simulation = 25
number_of_malicious_nodes = 3
seed = 5

[pipeline]
train_benign = 400
train_per_family = 60
novel_eval = 50
Z0 = 5
refine_passes = 0
aids_epochs = 1
aids_train_samples = 200
benign_interval_s = 1
retrain_interval_s = 5

[attacks]
novel = Intrusion, 4, 0, , Infiltration
imp = Impersonation, 1
"""


@pytest.fixture
def scenario(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(TINY_CFG)
    return p


@pytest.fixture(scope="module")
def sim_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    cfg = d / "tiny.cfg"
    cfg.write_text(TINY_CFG)
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(d / "out")]) == 0
    return d / "out"


def test_parse_simulate_args():
    ns = cli.parse_args(["simulate", "--config", "paper.cfg", "--seed", "7"])
    assert (ns.verb, ns.config, ns.seed, ns.feedback, ns.sweep) == ("simulate", "paper.cfg", 7, None, 1)


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.parse_args(["simulate", "--config", "x", "--bogus"])
    assert exc.value.code == 2


def test_missing_config_names_the_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.parse_args(["simulate"])
    assert exc.value.code == 2
    assert "--config" in capsys.readouterr().err


def test_no_verb_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        cli.parse_args([])
    assert exc.value.code == 2


def test_simulate_writes_artifacts(sim_run):
    for name in ("metrics.csv", "roc.csv", "resources.csv", "ledger.jsonl", "honeylog.hlog",
                 "honeynet.keys", "fleet.csv"):
        assert (sim_run / name).is_file(), name
    head = (sim_run / "metrics.csv").read_text().splitlines()[0].split(",")
    assert {"accuracy", "detection_rate", "auc", "sids_rate_Infiltration"} <= set(head)


def test_report(sim_run, capsys):
    assert cli.main(["report", str(sim_run)]) == 0
    assert "detection_rate" in capsys.readouterr().out


def test_report_missing_dir(tmp_path, capsys):
    assert cli.main(["report", str(tmp_path / "nope")]) == 1
    assert "error" in capsys.readouterr().err


def test_verify_log_clean_and_tampered(sim_run, tmp_path, capsys):
    log = sim_run / "honeylog.hlog"
    entries = SealedLog.from_file(log).entries
    assert entries, "scenario should seal at least one pattern"
    assert cli.main(["verify-log", str(log)]) == 0
    bad = list(entries)
    ct = bytearray(bad[0].ciphertext)
    ct[3] ^= 0x10
    bad[0] = SealedLogEntry(bad[0].index, bytes(ct), bad[0].signature)
    tampered = tmp_path / "t.hlog"
    SealedLog(bad).to_file(tampered)
    capsys.readouterr()
    assert cli.main(["verify-log", str(tampered), "--keys", str(sim_run / "honeynet.keys")]) == 1
    assert f"entry {bad[0].index}" in capsys.readouterr().err


def test_verify_log_without_keys(tmp_path):
    SealedLog().to_file(tmp_path / "x.hlog")
    assert cli.main(["verify-log", str(tmp_path / "x.hlog")]) == 1


def test_simulate_sweep(scenario, tmp_path):
    out = tmp_path / "sweep"
    assert cli.main(["simulate", "--config", str(scenario), "--sweep", "2", "--feedback", "off",
                     "--out", str(out)]) == 0
    rows = (out / "metrics.csv").read_text().splitlines()
    assert len(rows) == 3
    assert (out / "roc_seed5.csv").is_file() and (out / "seed6" / "ledger.jsonl").is_file()


def test_out_dir_from_environment(scenario, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "envout"))
    assert cli.main(["simulate", "--config", str(scenario), "--feedback", "off"]) == 0
    assert (tmp_path / "envout" / "metrics.csv").is_file()


def test_bad_scenario_is_runtime_error(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("[pipeline]\nnot_a_key = 1\n")
    assert cli.main(["simulate", "--config", str(p)]) == 1
    assert "not_a_key" in capsys.readouterr().err


def test_ingest_and_training_verbs(tmp_path, scenario):
    data = synth_traffic(SynthConfig(benign=300, attacks={"DoS": 60, "Web": 60}), 1)
    write_flow_csv(data, tmp_path / "train.csv")
    out = tmp_path / "o"
    assert cli.main(["ingest", "--dataset", str(tmp_path / "train.csv"), "--out", str(out)]) == 0
    summary = json.loads((out / "ingest_summary.json").read_text())
    assert summary["rows"] == 420 and summary["families"] == {"DoS": 60, "Web": 60}
    assert cli.main(["train-sids", "--config", str(scenario), "--dataset", str(tmp_path / "train.csv"),
                     "--test", str(tmp_path / "train.csv"), "--out", str(out)]) == 0
    assert json.loads((out / "sids_eval.json").read_text())["test_accuracy"] > 0.9
    assert cli.main(["train-aids", "--config", str(scenario), "--out", str(out)]) == 0
    assert (out / "model.dcr").is_file() and (out / "scaler.npz").is_file()


def test_ingest_missing_dataset(tmp_path):
    assert cli.main(["ingest", "--dataset", str(tmp_path / "none.csv"), "--out", str(tmp_path)]) == 1


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "ngwn_sentinel", "report", str(tmp_path / "missing")],
                       capture_output=True, text=True)
    assert r.returncode == 1 and "ngwn-sentinel report: error" in r.stderr
