import csv
import json
import math

import pytest

from shen import cli
from shen.cli import main, sha256
from shen.solver import InstabilityError

SMALL = {"grid": {"n": 32, "L": 8.0, "dim": 1}, "noise": {"family": "white"}, "coefficients": "drift",
         "u0": {"kind": "bump", "amplitude": 0.5, "width": 1.0}, "dt": 0.01, "T": 1.0, "paths": 1024, "seed": 3}


@pytest.fixture
def small(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL))
    return path


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_phi_table(tmp_path):
    out = tmp_path / "phi"
    assert main(["phi", "--preset", "linear-white", "--out", str(out)]) == 0
    rows = read_csv(out / "phi.csv")
    assert rows[0] == ["t", "j_rate", "phi"]
    at_one = [r for r in rows[1:] if float(r[0]) == 1.0][0]
    assert float(at_one[2]) == pytest.approx(math.sqrt(1 / (2 * math.pi)), rel=1e-12)
    summary = json.loads((out / "phi.json").read_text())
    assert summary["pass"] and len(summary["config_hash"]) == 64


def test_manifest_checksums(small, tmp_path):
    out = tmp_path / "fn"
    assert main(["fn-seq", "--config", str(small), "--paths", "40", "--out", str(out), "--threads", "1"]) == 0
    m = manifest(out)
    assert m["results"] == {"fn-seq": "pass"} and m["paths"] == 40 and m["seed"] == 3
    for name, digest in m["files"].items():
        assert sha256(out / name) == digest
    rows = read_csv(out / "fn_seq.csv")
    assert rows[0] == ["path", "n", "t_n", "F_n"] and len(rows) == 1 + 40 * 6


def test_simulate_csv_target_and_determinism(small, tmp_path):
    args = ["simulate", "--config", str(small), "--paths", "50", "--threads", "1"]
    assert main(args + ["--out", str(tmp_path / "a" / "paths.csv")]) == 0
    assert main(args + ["--out", str(tmp_path / "b" / "paths.csv"), "--every", "25"]) == 0
    assert main(args + ["--out", str(tmp_path / "c" / "paths.csv"), "--threads", "2"]) == 0
    a, c = manifest(tmp_path / "a"), manifest(tmp_path / "c")
    assert a["files"] == c["files"]
    assert read_csv(tmp_path / "a" / "paths.csv")[0] == ["path", "t", "u_at_x_obs"]
    assert len(read_csv(tmp_path / "b" / "paths.csv")) == 1 + 50 * 5


def test_seed_override_changes_output(small, tmp_path):
    for seed in ("1", "2"):
        main(["simulate", "--config", str(small), "--paths", "20", "--seed", seed, "--out", str(tmp_path / seed)])
    assert manifest(tmp_path / "1")["files"] != manifest(tmp_path / "2")["files"]
    assert manifest(tmp_path / "1")["config_hash"] != manifest(tmp_path / "2")["config_hash"]


def test_density_envelope_linear_preset(tmp_path):
    out = tmp_path / "dens"
    assert main(["density-envelope", "--preset", "linear-white", "--out", str(out), "--threads", "1"]) == 0
    assert read_csv(out / "kde.csv")[0] == ["y", "p_hat", "stderr", "lower_env", "upper_env"]
    assert read_csv(out / "samples.csv")[0] == ["path", "value"]
    s = json.loads((out / "density.json").read_text())
    assert s["gaussian"]["pass"] and s["c3"] == 0.0


def test_taylor_scaling_outputs(small, tmp_path):
    out = tmp_path / "tay"
    main(["taylor-scaling", "--config", str(small), "--term", "j1", "--widths", "2", "4", "8", "16", "32",
          "--paths", "256", "--out", str(out), "--threads", "1"])
    assert read_csv(out / "taylor_j1.csv")[0][1:] == ["delta_g", "delta_g_continuum", "moment_estimate", "stderr"]
    s = json.loads((out / "taylor_j1.json").read_text())
    assert {"slope", "ci", "expected_slope", "pass"} <= set(s) and s["identity_pass"]


def test_failed_check_exits_4(small, tmp_path):
    # 32 sites on [0, 8) miss 11% of Phi, beyond the 5% tolerance
    assert main(["malliavin-check", "--config", str(small), "--out", str(tmp_path)]) == 4
    assert manifest(tmp_path)["results"] == {"malliavin-check": "fail"}


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({**SMALL, "dt": 0.5, "bogus": 1}))
    assert main(["phi", "--config", str(bad), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "bogus" in err and "h^2/4" in err
    assert main(["phi", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["phi"]) == 2
    degenerate = tmp_path / "degenerate.json"
    degenerate.write_text(json.dumps({**SMALL, "coefficients": {"a": 0.0, "c": 1.0}}))
    assert main(["smallball", "--config", str(degenerate), "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["taylor-scaling", "--preset", "drift-white", "--term", "j9"])
    assert exc.value.code == 2


def test_instability_exits_3(small, tmp_path, monkeypatch):
    def explode(*a, **k):
        raise InstabilityError("all paths blew up")

    monkeypatch.setattr(cli, "run_ensemble", explode)
    assert main(["simulate", "--config", str(small), "--out", str(tmp_path)]) == 3
