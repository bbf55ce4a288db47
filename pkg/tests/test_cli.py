import csv
import json
import math

import pytest

from biasdecoy.channel import ChannelParams
from biasdecoy.cli import SCAN_COLUMNS, main
from biasdecoy.decoy import ProtocolParams, SecurityParams
from biasdecoy.keyrate import evaluate_biased

FIXED = {
    "channel": {"loss_db": 10},
    "source": {
        "nu": 0.05,
        "p_z": 0.93,
        "allocation": {"a_mu": 0.9, "a_nu_z": 0.03, "a_nu_x": 0.06, "a_0": 0.01},
    },
    "run": {"scheme": "biased"},
}


def write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_scan_writes_csv_and_manifest(tmp_path):
    out = tmp_path / "o"
    assert main(["scan", "--grid", "0:20:1", "--out", str(out)]) == 0
    rows = read_csv(out / "scan.csv")
    assert tuple(rows[0]) == SCAN_COLUMNS
    assert len(rows) == 22
    for r in rows[1:]:
        assert float(r[3]) >= 0.40
        assert len(r[1].replace(".", "").lstrip("0")) >= 12  # at least 12 significant digits
    man = json.loads((out / "manifest.json").read_text())
    assert {"config", "seed", "version", "wall_time_s", "backend"} <= set(man)
    assert man["config"]["channel"]["loss_db"] == "0:20:1"


def test_manifest_round_trip(tmp_path):
    a = tmp_path / "a"
    assert main(["scan", "--grid", "4:8:4", "--seed", "3", "--out", str(a)]) == 0
    man = json.loads((a / "manifest.json").read_text())
    cfg = write(tmp_path, man["config"], "echo.json")
    b = tmp_path / "b"
    assert main(["scan", "--config", cfg, "--out", str(b)]) == 0
    assert (a / "scan.csv").read_bytes() == (b / "scan.csv").read_bytes()
    assert json.loads((b / "manifest.json").read_text())["seed"] == 3


def test_scan_single_scheme(tmp_path):
    out = tmp_path / "s"
    assert main(["scan", "--grid", "10:10:1", "--scheme", "standard", "--out", str(out)]) == 0
    rows = read_csv(out / "scan.csv")
    assert rows[1][1] == "nan" and float(rows[1][2]) > 0 and rows[1][3] == "nan"
    assert float(rows[1][4]) == 0.5


def test_empty_grid_is_invalid(tmp_path, capsys):
    assert main(["scan", "--grid", "5:0:1", "--out", str(tmp_path)]) == 1
    assert "empty" in capsys.readouterr().err
    assert main(["scan", "--config", write(tmp_path, {"channel": {"loss_db": []}})]) == 1


def test_unwritable_output(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["scan", "--grid", "0:0:1", "--out", str(blocker / "sub")]) == 2
    assert "error" in capsys.readouterr().err


def test_bad_config(tmp_path):
    assert main(["scan", "--config", write(tmp_path, {"chanel": {}})]) == 1
    assert main(["scan", "--config", write(tmp_path, {"security": {"f": 0.5}})]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["scan", "--config", str(bad)]) == 1
    assert main(["scan", "--config", str(tmp_path / "missing.json")]) == 1
    assert main(["scan", "--scheme", "quantum"]) == 1


def test_eval_matches_library(tmp_path, capsys):
    assert main(["eval", "--config", write(tmp_path, FIXED)]) == 0
    rep = json.loads(capsys.readouterr().out)
    p = ProtocolParams.from_fractions(0.479, 0.05, 0.93, 0.9, 0.03, 0.06, 0.01, 6e9)
    ref = evaluate_biased(p, ChannelParams(1.0, 1.7e-6, 0.033).with_loss(10), SecurityParams())
    assert rep["rate"] == ref.rate
    assert rep["e1_pz_u"] == ref.e1_pz_u and rep["feasible"] is True


def test_eval_noiseless(tmp_path, capsys):
    doc = {
        "channel": {"y0": 0.0, "ed": 0.0, "loss_db": 0},
        "security": {"f": 1.0, "u_alpha": 0.0, "n_total": 1e18},
        "source": {"nu": 0.001, "p_z": 0.9,
                   "allocation": {"a_mu": 0.7, "a_nu_z": 0.1, "a_nu_x": 0.1, "a_0": 0.1}},
        "run": {"scheme": "biased"},
    }
    assert main(["eval", "--config", write(tmp_path, doc), "--out", str(tmp_path / "e")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["rate"] == pytest.approx(0.63 * 0.479 * math.exp(-0.479), rel=1e-3)
    assert (tmp_path / "e" / "eval.json").exists()


def test_eval_errors(tmp_path, capsys):
    bad = json.loads(json.dumps(FIXED))
    bad["source"]["nu"] = 0.6
    assert main(["eval", "--config", write(tmp_path, bad)]) == 1
    assert "nu" in capsys.readouterr().err
    assert main(["eval", "--loss", "10"]) == 1
    assert "placeholders" in capsys.readouterr().err
    multi = json.loads(json.dumps(FIXED))
    multi["channel"]["loss_db"] = "0:10:5"
    assert main(["eval", "--config", write(tmp_path, multi)]) == 1


def test_eval_both_schemes(tmp_path, capsys):
    doc = json.loads(json.dumps(FIXED))
    doc["run"]["scheme"] = "both"
    assert main(["eval", "--config", write(tmp_path, doc)]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert set(rep) == {"biased", "standard"}
    assert rep["standard"]["sift_q"] == pytest.approx(0.45)


def test_validate_honest(tmp_path, capsys):
    assert main(["validate", "--config", write(tmp_path, FIXED), "--out", str(tmp_path / "v")]) == 0
    doc = json.loads((tmp_path / "v" / "validate.json").read_text())
    assert all(abs(r["z"]) <= 5 for r in doc["rows"])
    assert len(read_csv(tmp_path / "v" / "counts.csv")) == 9


def test_validate_intercept_resend(tmp_path, capsys):
    cfg = json.loads(json.dumps(FIXED))
    cfg["mc"] = {"adversary": {"mode": "intercept_resend_z"}, "n_pulses": 4_000_000}
    assert main(["validate", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "v")]) == 1
    rows = {r["observable"]: r for r in json.loads((tmp_path / "v" / "validate.json").read_text())["rows"]}
    assert rows["qber_decoy_X"]["empirical"] == pytest.approx(0.5, abs=0.05)
    assert "qber_decoy_X" in capsys.readouterr().out


def test_validate_small_run(tmp_path):
    cfg = json.loads(json.dumps(FIXED))
    cfg["mc"] = {"n_pulses": 10_000, "sigma_threshold": 0.01}
    assert main(["validate", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "v")]) in (0, 1)
    cfg["mc"]["n_pulses"] = 9_999
    assert main(["validate", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "v")]) == 1


def test_log_level_env(tmp_path, monkeypatch):
    monkeypatch.setenv("QKD_LOG_LEVEL", "debug")
    assert main(["eval", "--config", write(tmp_path, FIXED)]) == 0
