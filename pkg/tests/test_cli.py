"""Command-line surface: validation diagnostics, artifacts, replayability.

Everything runs in-process through cli.main(argv) so exit codes and
stdout are observable; specs are written to tmp_path as real files since
the contract is about files on disk.
"""

import json
import os

import pytest

from ifslab import cli


def _write(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh)
    return str(path)


def _solve_spec(out_dir, seed=7):
    return {
        "kind": "solve",
        "model": {"family": "bernoulli", "lambda": 0.5},
        "q": 1.0,
        "atoms": 512,
        "target_error": 2e-3,
        "seed": seed,
        "out_dir": str(out_dir),
    }


# -- validation ----------------------------------------------------------------


def test_validate_model_probability_sum(tmp_path):
    path = _write(tmp_path / "model.json", {
        "maps": [
            {"kind": "affine", "a": 0.5, "b": 0.0, "p": 0.4},
            {"kind": "affine", "a": 0.5, "b": 0.5, "p": 0.5},
        ]
    })
    diags = cli.validate_config(path)
    assert len(diags) == 1
    assert "maps" in diags[0]["field"]
    assert "sum to" in diags[0]["message"] and "1" in diags[0]["message"]


def test_validate_model_field_pointers(tmp_path):
    path = _write(tmp_path / "model.json", {
        "family": "bernoulli", "lambda": 1.5, "extra": True,
    })
    diags = cli.validate_config(path)
    fields = {d["field"] for d in diags}
    assert any("lambda" in f for f in fields)
    assert any("extra" in f for f in fields)


def test_validate_spec_diagnostics(tmp_path):
    bad_kind = _write(tmp_path / "a.json", {"kind": "frobnicate"})
    diags = cli.validate_config(bad_kind)
    assert diags and diags[0]["field"] == "kind"
    assert "solve" in diags[0]["message"]  # lists the known kinds

    unknown = _write(tmp_path / "b.json", {
        "kind": "solve",
        "model": {"family": "bernoulli", "lambda": 0.5},
        "q": 1.0,
        "bogus": 3,
    })
    diags = cli.validate_config(unknown)
    assert [d["field"] for d in diags] == ["bogus"]

    bad_model = _write(tmp_path / "c.json", {
        "kind": "solve",
        "model": {"family": "bernoulli", "lambda": "x"},
        "q": 1.0,
    })
    diags = cli.validate_config(bad_model)
    assert any(d["field"].startswith("model.") for d in diags)


def test_validate_command_exit_codes(tmp_path, capsys):
    good = _write(tmp_path / "good.json", {"family": "reset", "a": 0.5, "p": 0.5})
    assert cli.main(["validate", good]) == 0
    assert "ok" in capsys.readouterr().out

    bad = _write(tmp_path / "bad.json", {"family": "reset", "a": 1.5, "p": 0.5})
    assert cli.main(["validate", bad]) == 1
    assert "a" in capsys.readouterr().out


def test_shipped_example_specs_validate():
    here = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    examples = os.path.join(here, "docs", "examples")
    names = sorted(os.listdir(examples))
    assert names  # the docs promise runnable examples
    for name in names:
        assert cli.validate_config(os.path.join(examples, name)) == []


def test_missing_file_is_machine_readable(tmp_path, capsys):
    missing = str(tmp_path / "nope.json")
    assert cli.main(["run", missing]) == 2
    obj = json.loads(capsys.readouterr().out)
    assert obj["error"] == "IoError"
    assert "nope.json" in obj["message"]


def test_invalid_spec_exit_2_with_diagnostics(tmp_path, capsys):
    path = _write(tmp_path / "spec.json", {"kind": "solve", "q": 1.0})
    assert cli.main(["run", path]) == 2
    obj = json.loads(capsys.readouterr().out)
    assert obj["error"] == "InvalidSpec"
    assert any(d["field"] == "model" for d in obj["diagnostics"])


def test_malformed_json_exit_2(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text('{"kind": "solve",')
    assert cli.main(["run", str(path)]) == 2
    obj = json.loads(capsys.readouterr().out)
    assert obj["error"] == "InvalidSpec"


# -- run artifacts --------------------------------------------------------------


def test_run_solve_artifacts(tmp_path):
    out = tmp_path / "out"
    spec = _write(tmp_path / "spec.json", _solve_spec(out))
    assert cli.main(["run", spec]) == 0

    recorded = json.load(open(out / "spec.json"))
    assert recorded["kind"] == "solve"
    assert recorded["seed"] == 7
    assert recorded["atoms"] == 512

    summary = json.load(open(out / "summary.json"))
    assert summary["verdict"] == "PASS"
    assert summary["kind"] == "solve"
    assert summary["seed"] == 7
    assert summary["backend"] in ("numpy", "numba")
    assert isinstance(summary["version"], str)
    assert "ledger" in summary

    with open(out / "measure.csv") as fh:
        assert fh.readline() == "position,weight\n"
    with open(out / "plotdata_measure.csv") as fh:
        assert fh.readline() == "x,y,yerr\n"


def test_rerun_recorded_spec_is_bitwise(tmp_path):
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    spec = _write(tmp_path / "spec.json", _solve_spec(out1))
    assert cli.main(["run", spec]) == 0
    # replay the machine-written record into a fresh directory
    assert cli.main(["run", str(out1 / "spec.json"), "--out-dir", str(out2)]) == 0
    for name in ("measure.csv", "plotdata_measure.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_seed_flag_overrides_spec(tmp_path):
    out = tmp_path / "out"
    spec = _write(tmp_path / "spec.json", _solve_spec(out, seed=7))
    assert cli.main(["run", spec, "--seed", "123"]) == 0
    assert json.load(open(out / "spec.json"))["seed"] == 123


def test_missing_seed_gets_recorded_entropy(tmp_path):
    cfg = _solve_spec(tmp_path / "out")
    del cfg["seed"]
    spec = _write(tmp_path / "spec.json", cfg)
    assert cli.main(["run", spec]) == 0
    recorded = json.load(open(tmp_path / "out" / "spec.json"))
    assert isinstance(recorded["seed"], int)
    assert recorded["seed"] >= 0


def test_certify_run_and_fail_verdict(tmp_path, capsys):
    out = tmp_path / "good"
    spec = _write(tmp_path / "c1.json", {
        "kind": "certify",
        "model": {"family": "two_map", "a": 0.5, "b": 1.5},
        "q": 0.5,
        "out_dir": str(out),
        "seed": 0,
    })
    assert cli.main(["run", spec]) == 0
    assert json.load(open(out / "summary.json"))["verdict"] == "PASS"
    assert (out / "certificate.csv").exists()

    # same family at q=2 is not contracting in the mean: honest FAIL
    out2 = tmp_path / "badq"
    spec2 = _write(tmp_path / "c2.json", {
        "kind": "certify",
        "model": {"family": "two_map", "a": 0.5, "b": 1.5},
        "q": 2.0,
        "out_dir": str(out2),
        "seed": 0,
    })
    assert cli.main(["run", spec2]) == 1
    summary = json.load(open(out2 / "summary.json"))
    assert summary["verdict"] == "FAIL"
    assert summary["rho"] > 1.0


def test_tail_spec_fail_exits_1(tmp_path):
    out = tmp_path / "out"
    spec = _write(tmp_path / "tail.json", {
        "kind": "tail",
        "a": 0.5,
        "p": 0.5,
        "n_samples": 50000,
        "slope_tol": 1e-9,  # no finite sample fits this tightly
        "seed": 3,
        "out_dir": str(out),
    })
    assert cli.main(["run", spec]) == 1
    summary = json.load(open(out / "summary.json"))
    assert summary["verdict"] == "FAIL"
    assert summary["bound_ok"] is True  # the bound holds; the slope gate failed
    assert (out / "rows.csv").exists()
    assert (out / "plotdata_tail.csv").exists()


def test_skew_converge_spec_runs(tmp_path):
    out = tmp_path / "out"
    spec = _write(tmp_path / "skew.json", {
        "kind": "skew-converge",
        "base": {"type": "rotation"},
        "fiber": {"type": "cosine", "slope": 0.5, "amp": 1.0},
        "k_grid": [1, 2, 3, 4, 5, 6],
        "n_realizations": 5000,
        "groups": 5,
        "seed": 0,
        "out_dir": str(out),
    })
    assert cli.main(["run", spec]) == 0
    summary = json.load(open(out / "summary.json"))
    assert summary["all_levels_ok"] is True
    assert summary["rho_tilde"] == 0.5
    with open(out / "rows.csv") as fh:
        assert fh.readline() == "k,level,stderr,allowance,level_ok\n"


def test_transport_selftest_spec(tmp_path):
    out = tmp_path / "out"
    spec = _write(tmp_path / "self.json", {
        "kind": "transport-selftest",
        "pairs": 6,
        "seed": 0,
        "out_dir": str(out),
    })
    assert cli.main(["run", spec]) == 0
    summary = json.load(open(out / "summary.json"))
    assert summary["verdict"] == "PASS"
    assert summary["pairs"] == 6


def test_selftest_command(capsys):
    assert cli.main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "backend" in out


def test_model_reference_by_path(tmp_path):
    model = _write(tmp_path / "model.json", {"family": "bernoulli", "lambda": 0.5})
    out = tmp_path / "out"
    spec = _write(tmp_path / "spec.json", {
        "kind": "certify",
        "model": "model.json",  # relative to the spec file
        "q": 1.0,
        "seed": 0,
        "out_dir": str(out),
    })
    assert cli.main(["run", spec]) == 0
    # the recorded spec is self-contained: model inlined, not a path
    recorded = json.load(open(out / "spec.json"))
    assert recorded["model"] == {"family": "bernoulli", "lambda": 0.5}
    assert os.path.basename(model) == "model.json"


def test_set_threads_validation():
    with pytest.raises(Exception):
        cli.set_threads(0)
    cli.set_threads(1)  # setting a real count must not raise
    cli.set_threads(None)  # no env, no-op
