import io
import json

import numpy as np
import pytest

from threshold_breakdown.cli import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_NUMERIC,
    EXIT_OK,
    ConfigError,
    read_config_file,
    run,
)


def call(args):
    buf = io.StringIO()
    code = run(args, stdout=buf)
    return code, buf.getvalue()


@pytest.fixture
def data(tmp_path):
    rng = np.random.default_rng(7)
    x = tmp_path / "x.csv"
    y = tmp_path / "y.csv"
    s = tmp_path / "s.csv"
    x.write_text("v\n" + "\n".join(f"{v:.6f}" for v in rng.normal(1.0, 1, 30)) + "\n")
    y.write_text("v\n" + "\n".join(f"{v:.6f}" for v in rng.normal(0, 1, 25)) + "\n")
    s.write_text("v\n" + "\n".join(f"{v:.4f}" for v in rng.normal(0, 1, 6)) + "\n")
    return {"x": str(x), "y": str(y), "s": str(s), "dir": tmp_path}


def test_fit(data):
    code, out = call(["fit", "--input", data["x"]])
    assert code == EXIT_OK
    assert out.splitlines()[0] == "sample,n,theta_hat,sigma_hat,se,loss,delta"


def test_sensitivity_grid_and_oracle(data):
    code, out = call(["sensitivity", "--input", data["s"], "--m-grid", "0:2", "--oracle"])
    assert code == EXIT_OK
    rows = [r.split(",") for r in out.splitlines()[1:]]
    assert len(rows) == 3
    for r in rows:
        assert float(r[2]) == pytest.approx(float(r[6]), abs=1e-9)


def test_breakdown_json(data):
    code, out = call(["breakdown", "--input", data["x"], "--eta-grid", "0.2,0.5",
                      "--side", "plus", "--format", "json"])
    assert code == EXIT_OK
    doc = json.loads(out)
    assert [d["eta"] for d in doc] == [0.2, 0.5] and doc[0]["m"] <= doc[1]["m"]


def test_two_stage_breakdown_reports_bounds(data):
    code, out = call(["breakdown", "--input", data["x"], "--eta", "0.5", "--target", "two_stage"])
    assert code == EXIT_OK
    assert {"bp_lower_bound", "bp_upper_bound"} <= set(out.replace("\n", ",").split(","))


def test_test_audit_one_and_two_sample(data):
    code, out = call(["test-audit", "--input", data["x"], "--format", "json"])
    assert code == EXIT_OK and json.loads(out)["test"] == "wald"
    code, out = call(["test-audit", "--input", data["x"], "--input2", data["y"],
                      "--m-grid", "0,1", "--sided", "one_sided_upper"])
    assert code == EXIT_OK
    assert out.splitlines()[0].startswith("m,m_over_nstar,down_low")


def test_population_outputs(data):
    code, out = call(["population", "--eps-max", "0.02", "--step", "0.01"])
    assert code == EXIT_OK and len(out.splitlines()) == 4
    code, out = call(["population", "--format", "json", "--eps", "0.1"])
    doc = json.loads(out)
    assert doc["V_plus"] == pytest.approx(0.0218313764868, rel=1e-9)


def test_oracle_command(data):
    code, out = call(["oracle", "--input", data["s"], "--target", "test"])
    assert code == EXIT_OK and out.startswith("test,m,n_norm,bp")


def test_out_file(data):
    target = data["dir"] / "o.csv"
    code, out = call(["fit", "--input", data["x"], "--out", str(target)])
    assert code == EXIT_OK and out == "" and target.read_text().startswith("sample")


def test_config_file_precedence(data):
    cfg = data["dir"] / "run.cfg"
    cfg.write_text(f"# defaults for this run\ninput = {data['x']}\nloss = logcosh\nformat = json\n")
    code, out = call(["fit", "--config", str(cfg)])
    assert json.loads(out)[0]["loss"] == "logcosh"
    code, out = call(["fit", "--config", str(cfg), "--loss", "huber"])
    assert json.loads(out)[0]["loss"] == "huber"


def test_config_file_errors(data):
    bad = data["dir"] / "bad.cfg"
    bad.write_text("colour = blue\n")
    with pytest.raises(ConfigError):
        read_config_file(bad)
    assert call(["fit", "--config", str(bad)])[0] == EXIT_CONFIG


@pytest.mark.parametrize("args,code", [
    (["fit"], EXIT_CONFIG),
    (["fit", "--input", "missing.csv"], EXIT_DATA),
    (["fit", "--input", "{x}", "--delta", "-1"], EXIT_CONFIG),
    (["fit", "--input", "{x}", "--loss", "bogus"], EXIT_CONFIG),
    (["population", "--format", "json", "--eps", "0.4999"], EXIT_NUMERIC),
    (["bootstrap", "--input", "{x}"], EXIT_CONFIG),
    (["replicate", "nope"], EXIT_CONFIG),
    (["frobnicate"], 2),
])
def test_exit_codes(data, args, code):
    args = [a.format(x=data["x"]) for a in args]
    assert call(args)[0] == code


def test_bootstrap_is_seeded(data):
    args = ["bootstrap", "--input", data["x"], "--m", "3", "--boot-B", "100"]
    a = call(args + ["--seed", "1"])[1]
    assert a == call(args + ["--seed", "1", "--threads", "3"])[1]
    assert a != call(args + ["--seed", "2"])[1]


def test_replicate_writes_manifest(data):
    out_dir = data["dir"] / "rep"
    code, out = call(["replicate", "fig_two_sample_vshape", "--out", str(out_dir)])
    assert code == EXIT_OK
    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert manifest["config"]["experiment"] == "fig_two_sample_vshape"
    assert (out_dir / "fig_two_sample_vshape.csv").read_text().startswith("theta,rep")
