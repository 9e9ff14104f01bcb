"""Tests for the experiment harness.

Config validation is exercised field by field, with the error message
checked for the offending path. The runner is driven in process on a
tiny discrete experiment to cover the bundle layout, determinism, and
the report round trip, and the command line is driven through its main
entry point for exit codes, file outputs, and the simulator.
"""

import copy
import hashlib
import json
import os
import subprocess
import sys

import pytest

from miis.harness import cli, report
from miis.harness.config import load_config, parse_config
from miis.harness.errors import ConfigError, HarnessError
from miis.harness.runner import resolve_threads, run_experiment

# ---------------------------------------------------------------------------
# config fixtures
# ---------------------------------------------------------------------------


def bvn_raw():
    return {
        "experiment": "bvn",
        "output_dir": "out",
        "m": 200,
        "burn_in": 20,
        "replications": 3,
        "base_seed": 11,
        "functionals": ["mean", "covariance"],
        "model": {"rho": 0.5},
        "methods": [
            {
                "label": "mwg",
                "kind": "mwg",
                "estimator": "mc",
                "reference": True,
                "proposal": "student-t5",
            },
            {
                "label": "miis",
                "kind": "miis-gibbs",
                "estimator": "rb",
                "n_particles": 10,
                "proposal": "student-t5",
            },
        ],
    }


def oracle_raw(output_dir="out"):
    return {
        "experiment": "oracle",
        "output_dir": output_dir,
        "m": 120,
        "burn_in": 20,
        "replications": 3,
        "base_seed": 505,
        "init": "truth",
        "functionals": ["identity", "square"],
        "model": {"atoms": [-1.0, 0.0, 2.0], "probs": [0.2, 0.3, 0.5]},
        "methods": [
            {"label": "mwg", "kind": "mwg", "estimator": "mc", "reference": True},
            {"label": "miis", "kind": "miis-simple", "estimator": "miis", "n_particles": 4},
        ],
    }


def mutated(raw, path, value, delete=False):
    """Deep-copy raw, then set or delete the dotted/indexed path."""
    out = copy.deepcopy(raw)
    node = out
    keys = []
    for part in path.split("."):
        if "[" in part:
            name, idx = part[:-1].split("[")
            keys.extend([name, int(idx)])
        else:
            keys.append(part)
    for key in keys[:-1]:
        node = node[key]
    if delete:
        del node[keys[-1]]
    else:
        node[keys[-1]] = value
    return out


def expect_config_error(raw, fragment):
    with pytest.raises(ConfigError) as err:
        parse_config(raw)
    assert fragment in str(err.value), str(err.value)


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------


def test_valid_configs_parse():
    cfg = parse_config(bvn_raw())
    assert cfg.experiment == "bvn"
    assert cfg.reference_label == "mwg"
    assert cfg.functionals == ("mean", "covariance")
    assert parse_config(oracle_raw()).model["probs"] == (0.2, 0.3, 0.5)


def test_missing_model_field_names_path():
    expect_config_error(mutated(bvn_raw(), "model.rho", None, delete=True), "model.rho")


def test_unknown_keys_rejected():
    raw = bvn_raw()
    raw["typo_key"] = 1
    expect_config_error(raw, "typo_key")
    expect_config_error(mutated(bvn_raw(), "model.sigma", 2.0), "model")
    expect_config_error(mutated(bvn_raw(), "methods[0].gamma", 2.0), "methods[0]")


def test_bool_is_not_a_number():
    expect_config_error(mutated(bvn_raw(), "m", True), "m")
    expect_config_error(mutated(bvn_raw(), "model.rho", True), "model.rho")


def test_basic_range_checks():
    expect_config_error(mutated(bvn_raw(), "m", 0), "m")
    expect_config_error(mutated(bvn_raw(), "burn_in", -1), "burn_in")
    expect_config_error(mutated(bvn_raw(), "replications", 0), "replications")
    expect_config_error(mutated(bvn_raw(), "threads", 0), "threads")
    expect_config_error(mutated(bvn_raw(), "model.rho", 1.0), "model.rho")


def test_obm_batch_must_fit_run_length():
    expect_config_error(mutated(bvn_raw(), "obm_batch", 200), "obm_batch")
    expect_config_error(mutated(bvn_raw(), "obm_batch", 0), "obm_batch")
    cfg = parse_config(mutated(bvn_raw(), "obm_batch", 40))
    assert cfg.obm_batch == 40


def test_functional_names_checked():
    expect_config_error(mutated(bvn_raw(), "functionals", ["mean", "entropy"]), "functionals[1]")
    expect_config_error(mutated(bvn_raw(), "functionals", ["mean", "mean"]), "functionals")
    expect_config_error(mutated(bvn_raw(), "functionals", []), "functionals")


def test_method_kind_and_estimator_checked():
    expect_config_error(mutated(bvn_raw(), "methods[0].kind", "hmc"), "methods[0].kind")
    expect_config_error(
        mutated(bvn_raw(), "methods[0].estimator", "median"), "methods[0].estimator"
    )
    # the mmpp random-walk kind exists, but not for this experiment
    expect_config_error(
        mutated(bvn_raw(), "methods[1].kind", "miis-random-walk"), "methods[1].kind"
    )


def test_reference_count_enforced():
    expect_config_error(mutated(bvn_raw(), "methods[0].reference", False), "reference")
    expect_config_error(mutated(bvn_raw(), "methods[1].reference", True), "reference")


def test_duplicate_labels_rejected():
    expect_config_error(mutated(bvn_raw(), "methods[1].label", "mwg"), "methods")


def test_particle_count_rules():
    expect_config_error(mutated(bvn_raw(), "methods[1].n_particles", None, delete=True), "n_particles")
    expect_config_error(mutated(bvn_raw(), "methods[1].n_particles", 2), "n_particles")
    expect_config_error(mutated(bvn_raw(), "methods[0].n_particles", 10), "n_particles")
    anti = mutated(bvn_raw(), "methods[1].variant", "antithetic")
    expect_config_error(mutated(anti, "methods[1].n_particles", 9), "n_particles")
    expect_config_error(mutated(anti, "methods[1].n_particles", 4), "n_particles")
    assert parse_config(mutated(anti, "methods[1].n_particles", 6)).methods[1].variant == "antithetic"


def test_variant_only_on_sweep_sampler():
    expect_config_error(mutated(bvn_raw(), "methods[0].variant", "simple"), "variant")
    expect_config_error(mutated(bvn_raw(), "methods[1].variant", "mirror"), "variant")


def test_inner_repeats_only_on_baselines():
    ok = parse_config(mutated(bvn_raw(), "methods[0].inner_repeats", 5))
    assert ok.methods[0].inner_repeats == 5
    expect_config_error(mutated(bvn_raw(), "methods[1].inner_repeats", 5), "inner_repeats")
    expect_config_error(mutated(bvn_raw(), "methods[0].inner_repeats", 0), "inner_repeats")


def test_proposal_requirements():
    expect_config_error(mutated(bvn_raw(), "methods[0].proposal", None, delete=True), "proposal")
    expect_config_error(mutated(bvn_raw(), "methods[0].proposal", "cauchy"), "proposal")
    raw = oracle_raw()
    raw["methods"][1]["proposal"] = "student-t5"
    expect_config_error(raw, "proposal")


def test_estimator_kind_compatibility():
    expect_config_error(mutated(bvn_raw(), "methods[0].estimator", "miis"), "estimator")
    expect_config_error(mutated(bvn_raw(), "methods[0].estimator", "rb"), "estimator")
    raw = oracle_raw()
    raw["methods"][1]["estimator"] = "rb"
    expect_config_error(raw, "estimator")


def test_rb_block_rules():
    ok = mutated(bvn_raw(), "methods[1].rb_block", 1)
    assert parse_config(ok).methods[1].rb_block == 1
    expect_config_error(mutated(bvn_raw(), "methods[1].rb_block", "first"), "rb_block")
    expect_config_error(mutated(bvn_raw(), "methods[0].rb_block", 0), "rb_block")


def test_cv_configuration():
    base = mutated(bvn_raw(), "methods[1].estimator", "cv")
    expect_config_error(base, "methods[1].cv")
    full = mutated(base, "methods[1].cv", {"*": [["mean", 0]]})
    assert parse_config(full).methods[1].cv == {"*": (("mean", 0),)}
    expect_config_error(
        mutated(base, "methods[1].cv", {"mean": [["mean", 0]]}), "methods[1].cv"
    )
    expect_config_error(
        mutated(base, "methods[1].cv", {"*": [["entropy", 0]]}), "methods[1].cv"
    )
    expect_config_error(
        mutated(base, "methods[1].cv", {"*": [["mean", 2]]}), "methods[1].cv"
    )
    expect_config_error(
        mutated(base, "methods[1].cv", {"*": [["mean", -1]]}), "methods[1].cv"
    )
    expect_config_error(
        mutated(base, "methods[1].cv", {"*": [["mean", True]]}), "methods[1].cv"
    )
    expect_config_error(mutated(base, "methods[1].cv", {"*": []}), "methods[1].cv")
    # the sweep sampler has no full-target trace; the joint chain has no blocks
    expect_config_error(
        mutated(base, "methods[1].cv", {"*": [["mean", "full"]]}), "methods[1].cv"
    )
    mwg_cv = mutated(bvn_raw(), "methods[0].cv", {"*": [["mean", 0]]})
    expect_config_error(mutated(mwg_cv, "methods[0].estimator", "cv"), "methods[0].cv")
    # pairs supplied while the estimator is plain mc
    expect_config_error(mwg_cv, "cv")


def test_init_modes():
    assert parse_config(bvn_raw()).init == "origin"
    assert parse_config(mutated(bvn_raw(), "init", "truth")).init == "truth"
    assert parse_config(mutated(bvn_raw(), "init", [0.5, -0.5])).init == (0.5, -0.5)
    expect_config_error(mutated(bvn_raw(), "init", "warm"), "init")
    expect_config_error(mutated(bvn_raw(), "init", "prior-draw"), "init")
    expect_config_error(mutated(bvn_raw(), "init", [0.5]), "init")
    expect_config_error(mutated(bvn_raw(), "init", {"x": 1}), "init")


def test_pilot_only_for_event_models():
    expect_config_error(mutated(bvn_raw(), "pilot", {"iterations": 500}), "pilot")


def test_shipped_configs_parse():
    config_dir = os.path.join(os.path.dirname(__file__), os.pardir, "configs")
    paths = sorted(os.listdir(config_dir))
    assert len(paths) >= 5
    for name in paths:
        cfg = load_config(os.path.join(config_dir, name))
        assert cfg.config_hash


def test_load_config_reads_and_hashes(tmp_path):
    path = tmp_path / "cfg.json"
    blob = json.dumps(bvn_raw()).encode()
    path.write_bytes(blob)
    cfg = load_config(path)
    assert cfg.config_hash == hashlib.sha256(blob).hexdigest()
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


# ---------------------------------------------------------------------------
# thread resolution
# ---------------------------------------------------------------------------


def test_resolve_threads_precedence(monkeypatch):
    monkeypatch.delenv("MIIS_THREADS", raising=False)
    assert resolve_threads(3) == 3
    assert resolve_threads(3, cli_threads=2) == 2
    monkeypatch.setenv("MIIS_THREADS", "5")
    assert resolve_threads(3, cli_threads=2) == 5
    monkeypatch.setenv("MIIS_THREADS", "zero")
    with pytest.raises(HarnessError):
        resolve_threads(3)
    monkeypatch.setenv("MIIS_THREADS", "0")
    with pytest.raises(HarnessError):
        resolve_threads(3)
    monkeypatch.delenv("MIIS_THREADS")
    with pytest.raises(HarnessError):
        resolve_threads(3, cli_threads=0)


# ---------------------------------------------------------------------------
# runner + report round trip
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def oracle_bundle():
    return run_experiment(parse_config(oracle_raw()))


def test_bundle_layout(oracle_bundle):
    b = oracle_bundle
    assert b["experiment"] == "oracle"
    assert b["methods"] == ["mwg", "miis"]
    assert b["reference"] == "mwg"
    assert b["failures"] == []
    assert len(b["mse_rows"]) == 4
    seen = {(row["functional"], row["method"]) for row in b["mse_rows"]}
    assert seen == {(f, m) for f in ("identity", "square") for m in ("mwg", "miis")}
    for label in b["methods"]:
        for name in b["functionals"]:
            assert len(b["estimates"][label][name][0]) == 3
        assert len(b["diagnostics"][label]["work"][0]) == 3
        assert len(b["diagnostics"][label]["iact"]["identity"][0]) == 3


def test_reference_rows_are_unit(oracle_bundle):
    for row in oracle_bundle["mse_rows"]:
        if row["method"] == "mwg":
            assert row["relative_mse"] == 1.0
            assert row["time_adjusted_relative_mse"] == 1.0


def test_truth_recorded(oracle_bundle):
    truth = oracle_bundle["truth"][0]
    assert truth["identity"] == pytest.approx(0.2 * -1 + 0.5 * 2)
    assert truth["square"] == pytest.approx(0.2 * 1 + 0.5 * 4)


def test_runner_is_deterministic(oracle_bundle, tmp_path):
    again = run_experiment(parse_config(oracle_raw()))
    a = report.write_outputs(oracle_bundle, str(tmp_path / "one"))
    b = report.write_outputs(again, str(tmp_path / "two"))
    assert open(a["csv"], "rb").read() == open(b["csv"], "rb").read()


def test_seed_override_changes_results(oracle_bundle):
    other = run_experiment(parse_config(oracle_raw()), base_seed=99)
    assert other["base_seed"] == 99
    assert other["mse_rows"] != oracle_bundle["mse_rows"]


def test_report_round_trip(oracle_bundle, tmp_path):
    paths = report.write_outputs(oracle_bundle, str(tmp_path / "rt"))
    assert os.path.exists(paths["csv"])
    loaded = report.load_bundle(str(tmp_path / "rt"))
    assert loaded["config_hash"] == oracle_bundle["config_hash"]
    bundle, text = report.summarize_bundle(paths["bundle"])
    assert "relative_mse" in text
    assert bundle["mse_rows"] == loaded["mse_rows"]
    first_line = open(paths["csv"]).readline().strip()
    assert first_line == ",".join(report.CSV_COLUMNS)


def test_summarize_detects_tampering(oracle_bundle, tmp_path):
    paths = report.write_outputs(oracle_bundle, str(tmp_path / "tamper"))
    blob = json.load(open(paths["bundle"]))
    blob["mse_rows"][0]["mse"] += 1.0
    json.dump(blob, open(paths["bundle"], "w"))
    with pytest.raises(HarnessError):
        report.summarize_bundle(paths["bundle"])


def test_load_bundle_errors(tmp_path):
    with pytest.raises(HarnessError):
        report.load_bundle(str(tmp_path / "nope.json"))
    broken = tmp_path / "broken.json"
    broken.write_text("[1,")
    with pytest.raises(HarnessError):
        report.load_bundle(str(broken))


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------


def test_cli_oracle_check(capsys):
    assert cli.main(["oracle-check"]) == 0
    out = capsys.readouterr().out
    assert "ok" in out and "FAIL" not in out


def test_cli_rejects_bad_config(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text(json.dumps(mutated(bvn_raw(), "model.rho", None, delete=True)))
    assert cli.main(["run", str(path)]) == 2
    assert "model.rho" in capsys.readouterr().err


def test_cli_run_writes_outputs(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(oracle_raw(output_dir="res")))
    assert cli.main(["run", str(cfg_path)]) == 0
    for name in ("mse_table.csv", "bundle.json", "relative_mse.png", "diagnostics.png"):
        assert (tmp_path / "res" / name).exists(), name
    assert "wrote" in capsys.readouterr().out
    assert cli.main(["summarize", str(tmp_path / "res")]) == 0
    assert "identity" in capsys.readouterr().out


def test_cli_no_figures_flag(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(oracle_raw(output_dir="bare")))
    assert cli.main(["run", str(cfg_path), "--no-figures"]) == 0
    assert (tmp_path / "bare" / "mse_table.csv").exists()
    assert not (tmp_path / "bare" / "relative_mse.png").exists()


def test_cli_simulate_is_deterministic(tmp_path, capsys):
    args = ["simulate-mmpp", "--psi", "10,17", "--q", "1,1", "--window", "5", "--seed", "3"]
    p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
    assert cli.main(args + ["--out", str(p1)]) == 0
    assert cli.main(args + ["--out", str(p2)]) == 0
    assert p1.read_bytes() == p2.read_bytes()
    assert "events" in capsys.readouterr().out
    assert cli.main(["simulate-mmpp", "--psi", "10", "--q", "1,1", "--window", "5",
                     "--seed", "3", "--out", str(tmp_path / "c.txt")]) == 1
    assert "--psi" in capsys.readouterr().err


def test_cli_recorded_data_run(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    data = tmp_path / "events.txt"
    assert cli.main(["simulate-mmpp", "--psi", "10,17", "--q", "1,1", "--window", "5",
                     "--seed", "21", "--out", str(data)]) == 0
    cfg = {
        "experiment": "mmpp-data",
        "output_dir": "data-res",
        "m": 80,
        "burn_in": 20,
        "replications": 2,
        "base_seed": 31,
        "functionals": ["psi1", "psi2"],
        "model": {"path": str(data), "prior_means": [10.0, 17.0, 1.0, 1.0]},
        "pilot": {"iterations": 100, "rounds": 2},
        "methods": [
            {"label": "rwm", "kind": "rwm", "estimator": "mc", "reference": True},
        ],
    }
    cfg_path = tmp_path / "data.json"
    cfg_path.write_text(json.dumps(cfg))
    assert cli.main(["run", str(cfg_path), "--no-figures"]) == 0
    bundle = report.load_bundle("data-res")
    assert bundle["experiment"] == "mmpp-data"
    # no simulation truth: MSE columns are relative to the posterior-mean pool
    assert len(bundle["mse_rows"]) == 2


def test_console_script_installed():
    proc = subprocess.run(
        [sys.executable, "-m", "miis.harness.cli", "oracle-check"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "worst deviation" in proc.stdout
