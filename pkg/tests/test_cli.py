import json
import subprocess
import sys

import pytest

from deltaiss.cli import (EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_OK, EXIT_RICHNESS, EXIT_VERIFY,
                          ConfigError, load_config, main)

BASE = """
[system]
plant = "plant.toml"

[dictionary]
entries = [[1,0,0],[0,1,0],[0,0,1],[2,0,0],[1,1,0],[1,0,1],[0,1,1]]

[data]
T = 80
tau = 0.1
seed = 3
amplitude = 50.0
x0 = [0.5, -0.2, 0.3]
x0_tilde = [-0.4, 0.6, 0.1]

[synthesis]
epsilon = 0.9
vartheta = 0.44

[verify]
pairs = 2
horizon = 4.0
step = 0.01
terminal_ratio = 0.5
"""


def write_run(tmp_path, config=BASE, plant='builtin = "spacecraft"\n'):
    (tmp_path / "plant.toml").write_text(plant)
    (tmp_path / "run.toml").write_text(config)
    return tmp_path / "run.toml"


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = write_run(tmp)
    out = tmp / "out"
    codes = [main(["collect", "--config", str(cfg), "--out", str(out)]),
             main(["synthesize", "--config", str(cfg), "--bundle", str(out / "data"),
                   "--out", str(out)]),
             main(["verify", "--config", str(cfg), "--certificate", str(out / "certificate.json"),
                   "--bundle", str(out / "data"), "--out", str(out)])]
    return tmp, cfg, out, codes


def test_pipeline_exit_codes(pipeline):
    assert pipeline[3] == [EXIT_OK, EXIT_OK, EXIT_OK]


def test_pipeline_outputs_and_manifest(pipeline):
    _, _, out, _ = pipeline
    for name in ("certificate.json", "residual_report.json", "richness.json",
                 "verify/convergence.json", "verify/convergence_long.csv",
                 "verify/trace_0000.csv", "verify/trace_0001.csv", "verify/recheck.json"):
        assert (out / name).exists(), name
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["stages"]) == {"collect", "synthesize", "verify"}
    assert "certificate.json" in manifest["stages"]["synthesize"]["files"]
    assert manifest["versions"]["cvxpy"]
    assert manifest["stages"]["collect"]["seeds"]["data"] == 3


def test_synthesize_is_reproducible(pipeline):
    tmp, cfg, out, _ = pipeline
    again = tmp / "again"
    assert main(["synthesize", "--config", str(cfg), "--bundle", str(out / "data"),
                 "--out", str(again)]) == EXIT_OK
    assert (again / "certificate.json").read_bytes() == (out / "certificate.json").read_bytes()


def test_synthesize_never_reads_plant(pipeline, tmp_path):
    _, _, out, _ = pipeline
    cfg = write_run(tmp_path, plant="this is not toml [[[")
    assert main(["synthesize", "--config", str(cfg), "--bundle", str(out / "data"),
                 "--out", str(tmp_path / "o")]) == EXIT_OK


def test_collect_refuses_to_overwrite(pipeline, capsys):
    _, cfg, out, _ = pipeline
    assert main(["collect", "--config", str(cfg), "--out", str(out)]) == EXIT_CONFIG
    assert "--force" in capsys.readouterr().err


def test_recheck_ok_and_tampered(pipeline, tmp_path):
    _, _, out, _ = pipeline
    cert = json.loads((out / "certificate.json").read_text())
    assert main(["recheck", "--certificate", str(out / "certificate.json"),
                 "--bundle", str(out / "data")]) == EXIT_OK
    cert["Sigma"][0][0] += 0.1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(cert))
    assert main(["recheck", "--certificate", str(bad), "--bundle", str(out / "data"),
                 "--out", str(tmp_path)]) == EXIT_VERIFY
    assert json.loads((tmp_path / "recheck.json").read_text())["pass"] is False


def test_verify_different_inputs_need_bound(pipeline, tmp_path):
    _, cfg, out, _ = pipeline
    args = ["verify", "--config", str(cfg), "--certificate", str(out / "certificate.json"),
            "--bundle", str(out / "data"), "--out", str(tmp_path), "--signal-tilde", "zero"]
    assert main(args) == EXIT_CONFIG
    assert main(args + ["--B-norm-bound", "0.005"]) == EXIT_OK


def test_constant_input_is_richness_failure(tmp_path):
    cfg = BASE.replace("amplitude = 50.0", 'excitation = "constant"\nvalue = [0.0, 0.0, 0.0]')
    cfg = cfg.replace("x0 = [0.5, -0.2, 0.3]", "x0 = [1.0, 0.0, 0.0]")
    cfg = cfg.replace("x0_tilde = [-0.4, 0.6, 0.1]", "x0_tilde = [0.0, 1.0, 0.0]")
    path = write_run(tmp_path, cfg)
    assert main(["collect", "--config", str(path), "--out", str(tmp_path / "o")]) == EXIT_OK
    assert main(["synthesize", "--config", str(path), "--bundle", str(tmp_path / "o" / "data"),
                 "--out", str(tmp_path / "o")]) == EXIT_RICHNESS


def test_huge_epsilon_is_infeasible(pipeline, tmp_path):
    _, cfg, out, _ = pipeline
    assert main(["synthesize", "--config", str(cfg), "--bundle", str(out / "data"),
                 "--out", str(tmp_path), "--epsilon", "1e6"]) == EXIT_INFEASIBLE


@pytest.mark.parametrize("edit", [
    lambda s: s.replace('plant = "plant.toml"', 'plant = "missing.toml"'),
    lambda s: s.replace("tau = 0.1", "tau = -1.0"),
    lambda s: s.replace("epsilon = 0.9", "epsilon = 0.0"),
    lambda s: s + "\n[extras]\nx = 1\n",
    lambda s: s.replace("[synthesis]", "[synthesis]\nbogus = 1"),
    lambda s: s.replace("entries = [[1,0,0]", "entries = [[1,0]"),
    lambda s: s.replace("T = 80", "T = 80\nT2 = [["),
])
def test_config_errors(tmp_path, edit):
    path = write_run(tmp_path, edit(BASE))
    assert main(["collect", "--config", str(path), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.toml")


def test_dictionary_enumeration_config(tmp_path):
    cfg = BASE.replace("entries = [[1,0,0],[0,1,0],[0,0,1],[2,0,0],[1,1,0],[1,0,1],[0,1,1]]",
                       "n = 3\nd_min = 1\nd_max = 2")
    assert load_config(write_run(tmp_path, cfg)).dictionary.N == 9


def test_module_entry_point_help():
    r = subprocess.run([sys.executable, "-m", "deltaiss", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("collect", "synthesize", "verify", "recheck", "demo-spacecraft"):
        assert cmd in r.stdout


def test_shipped_config_parses():
    from pathlib import Path
    from deltaiss.cli import load_plant
    cfg = load_config(Path(__file__).parent.parent / "configs" / "spacecraft.toml")
    assert cfg.data.T == 300 and cfg.dictionary.N == 7
    assert cfg.synthesis_config().epsilon == 0.9
    assert load_plant(cfg.plant_path, cfg.builtin).n == 3
