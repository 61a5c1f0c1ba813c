"""Config resolution, exit codes, and artifact bytes of the command line."""

import json
import subprocess
import sys

import pytest

from percodrift.cli import (
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_OK,
    ConfigError,
    RunConfig,
    build_parser,
    load_config_file,
    main,
    resolve_config,
)


def _write_config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def _resolve(argv):
    return resolve_config(build_parser().parse_args(argv))


def test_defaults_without_config():
    cfg = _resolve(["identity-suite"])
    assert cfg.d == 2
    assert cfg.lam == 0.5
    assert cfg.n_steps == 1_000_000
    assert cfg.threads == 1
    assert cfg.out_dir == "artifacts"


def test_flags_beat_file_beat_defaults(tmp_path):
    path = _write_config(
        tmp_path, {"lambda": 0.7, "threads": 4, "master_seed": 9, "out_dir": "f"}
    )
    cfg = _resolve(
        ["identity-suite", "--config", path, "--seed", "42", "--out", "odir"]
    )
    assert cfg.lam == 0.7  # file beats default
    assert cfg.threads == 4  # file, no flag
    assert cfg.master_seed == 42  # flag beats file
    assert cfg.out_dir == "odir"  # flag beats file
    assert cfg.n_reps == 8  # untouched default


def test_threads_env_fills_in_only_when_file_is_silent(tmp_path, monkeypatch):
    monkeypatch.setenv("PERCODRIFT_THREADS", "6")
    assert _resolve(["identity-suite"]).threads == 6

    path = _write_config(tmp_path, {"threads": 3})
    assert _resolve(["identity-suite", "--config", path]).threads == 3
    assert (
        _resolve(["identity-suite", "--config", path, "--threads", "2"]).threads
        == 2
    )

    monkeypatch.setenv("PERCODRIFT_THREADS", "many")
    with pytest.raises(ConfigError, match="PERCODRIFT_THREADS"):
        _resolve(["identity-suite"])


def test_config_file_rejects_unknown_and_misnamed_fields(tmp_path):
    with pytest.raises(ConfigError, match="unknown config field"):
        load_config_file(_write_config(tmp_path, {"n_step": 5}))
    # the file key is "lambda"; the dataclass field name is not accepted
    with pytest.raises(ConfigError, match="lam"):
        load_config_file(_write_config(tmp_path, {"lam": 0.5}, "b.json"))


def test_config_file_rejects_bad_documents(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config_file(str(bad))
    with pytest.raises(ConfigError, match="JSON object"):
        load_config_file(_write_config(tmp_path, [1, 2], "arr.json"))


def test_config_file_maps_lambda_and_checks_types(tmp_path):
    fields = load_config_file(
        _write_config(tmp_path, {"lambda": 0.8, "eps_grid": [0, 0.01]})
    )
    assert fields == {"lam": 0.8, "eps_grid": (0.0, 0.01)}
    with pytest.raises(ConfigError, match="wrong type"):
        load_config_file(_write_config(tmp_path, {"n_reps": True}, "b.json"))
    with pytest.raises(ConfigError, match="wrong type"):
        load_config_file(_write_config(tmp_path, {"n_reps": 2.5}, "c.json"))


def test_runconfig_validation_catches_corrupt_values():
    with pytest.raises(ConfigError, match="strictly inside"):
        RunConfig(delta=1.0)
    with pytest.raises(ConfigError, match="direction length"):
        RunConfig(direction=(1.0, 0.0, 0.0))
    with pytest.raises(ConfigError, match="threads"):
        RunConfig(threads=0)


def test_main_maps_corrupt_config_to_exit_2(tmp_path, capsys):
    path = _write_config(tmp_path, {"delta": 1.0})
    assert main(["identity-suite", "--config", path]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_main_maps_missing_config_to_exit_3(capsys):
    assert main(["identity-suite", "--config", "/no/such/file.json"]) == EXIT_IO
    assert "cannot read config" in capsys.readouterr().err


def test_main_maps_unwritable_out_dir_to_exit_3(capsys):
    assert main(["identity-suite", "--out", "/dev/null/x"]) == EXIT_IO
    assert "output directory" in capsys.readouterr().err


def test_kalikow_check_enumeration_cap_is_exit_2(tmp_path, capsys):
    path = _write_config(tmp_path, {"n_edges": 13})
    out = str(tmp_path / "a")
    assert main(["kalikow-check", "--config", path, "--out", out]) == EXIT_CONFIG


def test_speed_sweep_rejects_thin_replica_counts(tmp_path, capsys):
    path = _write_config(tmp_path, {"n_reps": 4})
    out = str(tmp_path / "a")
    assert main(["speed-sweep", "--config", path, "--out", out]) == EXIT_CONFIG


def test_identity_suite_creates_dir_writes_meta_and_repeats_bytes(
    tmp_path, capsys
):
    cfg = _write_config(
        tmp_path, {"box_radius": 3, "n_envs": 20, "extent": 16, "tol": 1e-6}
    )
    out_a = tmp_path / "deep" / "nested"
    assert main(["identity-suite", "--config", cfg, "--out", str(out_a)]) == EXIT_OK
    stdout = capsys.readouterr().out
    assert stdout.count("identity ") >= 8
    assert "FAIL" not in stdout

    doc = json.loads((out_a / "identity_suite.json").read_text())
    assert doc["all_passed"] is True
    assert doc["config"]["lambda"] == 0.5
    assert doc["config"]["out_dir"] == str(out_a)
    assert doc["constants"]["eta"] == 7
    assert doc["constants"]["kappa1"] == pytest.approx(4.255251930412761)
    names = {c["name"] for c in doc["checks"]}
    assert {"kalikow_exhaustive", "first_step_total", "derivative_forms"} <= names

    # same config modulo out_dir must reproduce the artifact byte for byte
    out_b = tmp_path / "again"
    assert main(["identity-suite", "--config", cfg, "--out", str(out_b)]) == EXIT_OK
    a = (out_a / "identity_suite.json").read_bytes()
    b = (out_b / "identity_suite.json").read_bytes()
    assert a.replace(str(out_a).encode(), b"X") == b.replace(
        str(out_b).encode(), b"X"
    )


def test_console_module_help_exits_zero():
    proc = subprocess.run(
        [sys.executable, "-m", "percodrift.cli", "--help"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert "identity-suite" in proc.stdout
