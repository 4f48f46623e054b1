import json
import subprocess
import sys

import pytest

from storagecert.casestudy import room_casestudy
from storagecert.cli import EXIT_OK, EXIT_REFUTED, EXIT_SCHEMA, EXIT_UNKNOWN, main
from storagecert.model import network_to_dict


def toy_doc(x0=(-0.1, 0.1), gain=0.5):
    return {
        "subsystems": [{
            "dims": {"n": 1, "m": 0, "p": 0, "q": 0, "noise": 1},
            "pi": [[1.0]],
            "modes": [{"dynamics": [f"{gain}*x1 + 0.01*sigma1"]}],
            "h": [],
            "X": [[-1, 1]], "X0": [list(x0)], "Xu": [[[0.8, 1.0]], [[-1.0, -0.8]]],
        }],
    }


@pytest.fixture(scope="module")
def ring2(tmp_path_factory):
    d = tmp_path_factory.mktemp("ring2")
    assert main(["casestudy", "--rooms", "2", "--out", str(d / "net.json"),
                 "--published-certificates", str(d / "published.json")]) == EXIT_OK
    assert main(["synthesize", "--config", str(d / "net.json"), "--out", str(d / "cert.json"),
                 "--kappas", "0.92"]) == EXIT_OK
    return d


def test_casestudy_writes_loadable_config(ring2):
    doc = json.loads((ring2 / "net.json").read_text())
    assert doc["manifest"]["command"] == "casestudy"
    doc.pop("manifest")
    assert doc == network_to_dict(room_casestudy(2))


def test_manifest_has_no_timestamps(ring2):
    m = json.loads((ring2 / "cert.json").read_text())["manifest"]
    assert set(m) == {"command", "config", "seed", "tolerances", "output", "version", "arguments"}
    assert m["tolerances"] == {"tol": 1e-6}


def test_verify_exit_codes(ring2, tmp_path):
    net = str(ring2 / "net.json")
    assert main(["verify", "--config", net, "--certs", str(ring2 / "cert.json"), "--out",
                 str(tmp_path / "v.json")]) == EXIT_OK
    assert json.loads((tmp_path / "v.json").read_text())["verdict"] == "proved"
    assert main(["verify", "--config", net, "--certs", str(ring2 / "published.json")]) == EXIT_REFUTED
    assert main(["verify", "--config", net, "--certs", str(ring2 / "cert.json"),
                 "--max-leaves", "1"]) == EXIT_UNKNOWN


def test_verify_falsify_report(ring2, tmp_path):
    out = tmp_path / "v.json"
    main(["verify", "--config", str(ring2 / "net.json"), "--certs", str(ring2 / "published.json"),
          "--conditions", "drift", "--falsify", "500", "--seed", "3", "--out", str(out)])
    sub = json.loads(out.read_text())["subsystems"][0]
    assert {e["mode"] for e in sub["sampled_minimum"]} == {0, 1}
    assert all(e["min"] < 0 for e in sub["sampled_minimum"])


def test_compose_with_direct_check_and_bound(ring2, tmp_path):
    out = tmp_path / "c.json"
    assert main(["compose", "--config", str(ring2 / "net.json"), "--certs", str(ring2 / "cert.json"),
                 "--direct", "--horizon", "50", "--out", str(out)]) == EXIT_OK
    doc = json.loads(out.read_text())
    assert doc["lmi"]["holds"] and doc["level_gap"]["holds"]
    assert doc["direct"]["verdict"] == "proved"
    assert 0 <= doc["bound"]["delta"] <= 1


def test_compose_refusal(tmp_path, published_cert):
    from storagecert.certify import StorageCertificate, SupplyMatrix, dump_certificates
    import numpy as np

    net = tmp_path / "net.json"
    main(["casestudy", "--rooms", "3", "--out", str(net)])
    bad = StorageCertificate(published_cert.modes, SupplyMatrix(np.array([[0.0, 0.0], [0.0, 1.0]]), 1, 1))
    (tmp_path / "bad.json").write_text(json.dumps(dump_certificates([bad] * 3)))
    out = tmp_path / "c.json"
    assert main(["compose", "--config", str(net), "--certs", str(tmp_path / "bad.json"),
                 "--out", str(out)]) == EXIT_REFUTED
    assert json.loads(out.read_text())["refused"] == "dissipativity LMI"


def test_bound_prints_and_writes(tmp_path, capsys):
    out = tmp_path / "b.json"
    assert main(["bound", "--gamma", "28", "--lambda", "860", "--kappa", "0.92", "--psi", "0.3",
                 "--horizon", "100", "--out", str(out)]) == EXIT_OK
    assert "branch=1" in capsys.readouterr().out
    assert json.loads(out.read_text())["delta"] == pytest.approx(0.06573, abs=1e-5)


def test_bound_rejects_bad_constants(capsys):
    assert main(["bound", "--gamma", "2", "--lambda", "1", "--kappa", "0.5", "--psi", "0",
                 "--horizon", "3"]) == EXIT_SCHEMA
    assert "lambda" in capsys.readouterr().err


def test_simulate_writes_summary_csv_and_figure(ring2, tmp_path, capsys):
    files = {k: tmp_path / f"run.{k}" for k in ("json", "csv", "png")}
    assert main(["simulate", "--config", str(ring2 / "net.json"), "--certs", str(ring2 / "cert.json"),
                 "--trials", "20", "--horizon", "15", "--seed", "4", "--band", "17", "23",
                 "--out", str(files["json"]), "--csv", str(files["csv"]), "--plot", str(files["png"])]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert set(summary) == {"trials", "violations", "p_hat", "ci_low", "ci_high", "delta_bound", "clamp_events"}
    doc = json.loads(files["json"].read_text())
    assert doc["manifest"]["seed"] == 4 and "within_band" in doc["extra"]
    assert files["csv"].read_text().startswith("# manifest ")
    assert files["png"].read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_simulate_is_deterministic(ring2, tmp_path, capsys):
    args = ["simulate", "--config", str(ring2 / "net.json"), "--certs", str(ring2 / "cert.json"),
            "--trials", "30", "--horizon", "10", "--seed", "8", "--csv"]
    main(["--threads", "1"] + args + [str(tmp_path / "a.csv")])
    main(["--threads", "3"] + args + [str(tmp_path / "b.csv")])
    a = (tmp_path / "a.csv").read_text().splitlines()[1:]
    b = (tmp_path / "b.csv").read_text().splitlines()[1:]
    assert a == b


def test_synthesize_overlap_exits_with_diagnostics(tmp_path, capsys):
    cfg = tmp_path / "toy.json"
    cfg.write_text(json.dumps(toy_doc(x0=(0.7, 0.9))))
    report = tmp_path / "rep.json"
    assert main(["synthesize", "--config", str(cfg), "--out", str(tmp_path / "c.json"), "--degree", "2",
                 "--rounds", "2", "--report", str(report)]) == EXIT_REFUTED
    assert "X0 meets the unsafe set" in capsys.readouterr().err
    assert json.loads(report.read_text())["diagnostics"]
    assert not (tmp_path / "c.json").exists()


def test_synthesize_toy(tmp_path):
    cfg = tmp_path / "toy.json"
    cfg.write_text(json.dumps(toy_doc()))
    assert main(["synthesize", "--config", str(cfg), "--out", str(tmp_path / "c.json"), "--degree", "2"]) == EXIT_OK
    assert main(["verify", "--config", str(cfg), "--certs", str(tmp_path / "c.json"),
                 "--conditions", "init,unsafe,drift,nonneg"]) == EXIT_OK


def test_export_sos(ring2, tmp_path):
    out = tmp_path / "sos.txt"
    assert main(["export-sos", "--config", str(ring2 / "net.json"), "--out", str(out)]) == EXIT_OK
    text = out.read_text()
    assert text.startswith("# manifest {")
    assert "[expression-drift]" in text


@pytest.mark.parametrize("content", ["{not json", json.dumps({"subsystems": []}), json.dumps({"x": 1})])
def test_schema_errors_exit_64(tmp_path, content, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(content)
    assert main(["verify", "--config", str(cfg), "--certs", str(cfg)]) == EXIT_SCHEMA
    assert capsys.readouterr().err.startswith("error:")


def test_missing_file_exit_64(tmp_path):
    assert main(["verify", "--config", str(tmp_path / "nope.json"), "--certs", "x"]) == EXIT_SCHEMA


def test_bad_supply_shape(ring2, tmp_path):
    assert main(["synthesize", "--config", str(ring2 / "net.json"), "--out", str(tmp_path / "c.json"),
                 "--supply", "[1, 2, 3]"]) == EXIT_SCHEMA


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "storagecert.cli", "bound", "--gamma", "0", "--lambda", "1",
                           "--kappa", "0.5", "--psi", "0", "--horizon", "5"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.startswith("delta=0 ")
