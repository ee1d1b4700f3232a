import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from jointred.binio import read_matrix
from jointred.cli import EXIT_ASSERT, EXIT_CONFIG, EXIT_OK, check_assertions, main
from jointred.config import ExperimentConfig, env_overrides, load_config
from jointred.exceptions import InvalidConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs" / "desk"


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    import os
    for k in list(os.environ):
        if k.startswith("JOINTRED_"):
            monkeypatch.delenv(k)


def test_unknown_keys_rejected(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("model: {kind: toy2d}\ntruncation: {tau_gg: 1}\n")
    with pytest.raises(InvalidConfigError):
        load_config(p)
    p.write_text("model: {kind: toy2d}\ndata: {snr: 10, noise_std: 1}\n")
    with pytest.raises(InvalidConfigError):
        load_config(p)


def test_precedence_defaults_file_env_flags(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("model: {kind: toy2d}\nseed: 3\nsampler: {thin: 5}\n")
    env = {"JOINTRED_SAMPLER__THIN": "20", "JOINTRED_SEED": "4", "JOINTRED_CAP__TAU_D": "0.001"}
    cfg = load_config(p, {"seed": 9}, environ=env)
    assert cfg.sampler.thin == 20 and cfg.seed == 9 and cfg.cap.tau_d == 1e-3
    assert cfg.truncation.tau_g == ExperimentConfig.model_fields["truncation"].default_factory().tau_g
    assert env_overrides({"JOINTRED_A__B": "[1, 2]", "OTHER": "x"}) == {"a": {"b": [1, 2]}}
    cfg = load_config(environ={"JOINTRED_CONFIG": str(p)})
    assert cfg.seed == 3


def test_joint_settings_mapping():
    cfg = ExperimentConfig.model_validate({"model": {"kind": "toy2d"}, "truncation": {"tau_g": 0.3}})
    st = cfg.joint_settings()
    assert st.tau_g == 0.3 and st.thin == cfg.sampler.thin


def test_assertions_skip_missing_metrics():
    cfg = ExperimentConfig.model_validate({"model": {"kind": "toy2d"}, "assertions": [
        {"metric": "a.b", "op": "<", "value": 1}, {"metric": "c", "op": ">", "value": 0},
        {"metric": "lst.1", "op": "==", "value": 5}]})
    res, failed = check_assertions(cfg.assertions, {"a": {"b": 2}, "lst": [4, 5]})
    assert [r["status"] for r in res] == ["fail", "skipped", "pass"] and failed == 1


@pytest.fixture(scope="module")
def quick_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = str(CONFIGS / "linear_quick.yaml")
    codes = {c: main([c, "--config", cfg, "--out", str(out), "--seed", "0"])
             for c in ("make-data", "reduce", "sample", "compare", "spectra")}
    return out, codes


def test_cli_full_pipeline(quick_run):
    out, codes = quick_run
    assert all(v == EXIT_OK for v in codes.values()), codes
    for c in codes:
        man = json.loads((out / c / "manifest.json").read_text())
        assert man["status"] == "ok" and man["seeds"]["construct"] >= 0
        assert all(len(h) == 64 for h in man["artifacts"].values())
    draws = read_matrix(out / "sample" / "draws.bin")
    assert draws.shape == (500, 50)
    assert (out / "reduce" / "trace.csv").exists()
    assert (out / "compare" / "hellinger.csv").read_text().startswith("method,dim,hellinger2")
    assert (out / "spectra" / "spectra.csv").exists()


def test_cli_is_reproducible(quick_run, tmp_path):
    out, _ = quick_run
    shutil.copytree(out / "make-data", tmp_path / "make-data")
    cfg = str(CONFIGS / "linear_quick.yaml")
    assert main(["reduce", "--config", cfg, "--out", str(tmp_path), "--seed", "0"]) == EXIT_OK
    a = json.loads((out / "reduce" / "manifest.json").read_text())["artifacts"]
    b = json.loads((tmp_path / "reduce" / "manifest.json").read_text())["artifacts"]
    bins = [k for k in a if k.endswith(".bin")]
    assert bins and all(a[k] == b[k] for k in bins)


def test_cli_failed_assertion_exit_code(quick_run, monkeypatch):
    out, _ = quick_run
    monkeypatch.setenv("JOINTRED_ASSERTIONS", '[{metric: ess, op: "<", value: 0}]')
    code = main(["sample", "--config", str(CONFIGS / "linear_quick.yaml"), "--out", str(out)])
    assert code == EXIT_ASSERT


def test_cli_missing_artifacts_and_bad_config(tmp_path):
    cfg = str(CONFIGS / "linear_quick.yaml")
    assert main(["sample", "--config", cfg, "--out", str(tmp_path)]) == EXIT_CONFIG
    bad = tmp_path / "bad.yaml"
    bad.write_text("model: {kind: toy2d}\nbogus: 1\n")
    assert main(["reduce", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["reduce", "--config", str(tmp_path / "nope.yaml")]) == EXIT_CONFIG
