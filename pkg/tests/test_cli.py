import csv
import hashlib
import io
import json
import math

import pytest

from diqkd.analytic import optimize_r0
from diqkd.cli import RunConfig, main, rows_to_csv, run_sweep, write_outputs

NOISE = {"command": "noise", "etas": [0.95, 0.9], "starts": 1, "zetas": [1.0, 0.9], "chis": [1.0, 0.9]}


def parse(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_config_validation():
    with pytest.raises(ValueError):
        RunConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        RunConfig(etas=[])
    with pytest.raises(ValueError):
        RunConfig(command="plot")
    with pytest.raises(ValueError):
        RunConfig(etas=[1.2])
    with pytest.raises(ValueError):
        RunConfig(mode="joint")
    cfg = RunConfig(etas=[0.9, 0.85, 0.95], m_values=[4, 2])
    assert cfg.etas == [0.85, 0.9, 0.95] and cfg.m_values == [2, 4]
    assert cfg.security_params().eps_snd == pytest.approx(3e-10)


@pytest.fixture(scope="module")
def noise_rows():
    return run_sweep(RunConfig.from_dict(NOISE))


def test_noise_sweep_is_deterministic(noise_rows):
    again = run_sweep(RunConfig.from_dict(NOISE))
    assert rows_to_csv(again) == rows_to_csv(noise_rows)


def test_unit_leakage_reproduces_noiseless_rows(noise_rows):
    for i, eta in enumerate([0.9, 0.95]):
        params, r0 = optimize_r0(eta, starts=1, seed=i)
        for kind in ("zeta", "chi"):
            row = next(r for r in noise_rows if r["eta"] == eta and r["leakage"] == kind and r["value"] == 1.0)
            assert row["r0"] == r0
            assert row["T_g"] == params.T_g and row["p"] == params.p


def test_leakage_degrades_rate(noise_rows):
    for eta in (0.9, 0.95):
        for kind in ("zeta", "chi"):
            r = {row["value"]: row["r0"] for row in noise_rows if row["eta"] == eta and row["leakage"] == kind}
            assert r[0.9] <= r[1.0]


def test_rows_echo_parameters(noise_rows):
    from diqkd.analytic import r0_of_params
    from diqkd.circuit import CircuitParams

    row = noise_rows[1]
    params = CircuitParams(row["T_g"], row["eta"], (row["alpha1"], row["alpha2"]),
                           (row["beta0"], row["beta1"], row["beta2"]), **{row["leakage"]: row["value"]}, p=row["p"])
    assert r0_of_params(params) == pytest.approx(row["r0"], abs=1e-12)


def test_outputs_and_sidecar(tmp_path, noise_rows):
    cfg = RunConfig.from_dict({**NOISE, "out": str(tmp_path / "sub" / "noise.csv")})
    out, side = write_outputs(cfg, noise_rows)
    text = out.read_text()
    rows = parse(text)
    assert len(rows) == 8 and text.count("\n") == 9
    meta = json.loads(side.read_text())
    assert meta["csv_sha256"] == hashlib.sha256(text.encode()).hexdigest()
    assert meta["config"]["zetas"] == [1.0, 0.9]
    assert float(rows[0]["r0"]) == noise_rows[0]["r0"]  # repr round-trips exactly


def test_main_writes_identical_files(tmp_path, capsys):
    cfgfile = tmp_path / "c.json"
    cfgfile.write_text(json.dumps({k: v for k, v in NOISE.items() if k != "command"}))
    texts = []
    for name in ("a.csv", "b.csv"):
        assert main(["noise", "--config", str(cfgfile), "--out", str(tmp_path / name), "--seed", "0"]) == 0
        texts.append((tmp_path / name).read_bytes())
    assert texts[0] == texts[1]
    assert capsys.readouterr().out.startswith("eta,leakage")


def test_main_rejects_bad_config(tmp_path, capsys):
    cfgfile = tmp_path / "c.json"
    cfgfile.write_text('{"etas": []}')
    assert main(["asymptotic", "--config", str(cfgfile)]) == 2
    cfgfile.write_text('{"colour": "red"}')
    assert main(["asymptotic", "--config", str(cfgfile)]) == 2
    assert "unknown config keys" in capsys.readouterr().err


def test_benchmark_rows(tmp_path):
    cfg = RunConfig.from_dict({"command": "benchmark", "m_values": [2, 1], "modes": ["split", "block"],
                               "out": str(tmp_path / "b.csv")})
    rows = run_sweep(cfg)
    assert [r["m"] for r in rows] == [1, 2]
    for r in rows:
        assert r["status_full"] == "skipped" and math.isnan(r["H_full"])
        assert r["H_split"] <= r["H_block"] + 1e-4
        assert r["seconds_block"] > 0
    assert rows[0]["H_block"] <= rows[1]["H_block"]


def test_entropy_command(tmp_path, capsys):
    cfgfile = tmp_path / "e.json"
    point = {"T_g": 0.249, "alphas": [0.024, -0.521], "betas": [0.013, -0.104, 0.034], "p": 0.042}
    cfgfile.write_text(json.dumps({"params": point, "m": 2, "monomials": "npa1"}))
    assert main(["entropy", "--config", str(cfgfile), "--eta", "1.0", "--out", str(tmp_path / "e.csv")]) == 0
    row = parse((tmp_path / "e.csv").read_text())[0]
    assert float(row["rate"]) == pytest.approx(float(row["H_AE"]) - float(row["H_AB"]), abs=1e-15)
    assert float(row["eta"]) == 1.0
