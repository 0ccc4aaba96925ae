from __future__ import annotations

import json

import pytest

from spdelab.cli import EXIT_CONFIG, EXIT_INADMISSIBLE, EXIT_OK, main
from spdelab.config import load_config, parse_config
from spdelab.errors import ConfigError

MINIMAL = {"equation": "heat", "dimension": 1, "covariance": {"kind": "white"},
           "grid": {"half_width": 2.0, "points": 16, "horizon": 0.5, "steps": 4}}


def _text(**changes):
    cfg = json.loads(json.dumps(MINIMAL))
    cfg.update(changes)
    return json.dumps(cfg)


def test_minimal_config_gets_defaults():
    cfg = parse_config(_text())
    assert cfg.scheme == "picard" and cfg.replicates == 1 and cfg.seed == 0
    assert cfg.coefficients.to_dict() == {"sigma": {"name": "one"}, "b": {"name": "zero"}}
    assert cfg.initial_data.name == "zero"
    assert cfg.picard == {"tol": None, "rtol": 1e-6, "max_iter": 50}
    assert cfg.grid.window is None and cfg.grid.dx == 0.25


def test_config_round_trip():
    cfg = parse_config(_text(covariance={"kind": "riesz", "params": {"alpha": 0.5}},
                             initial_data={"kind": "gaussian_bump", "width": 0.5},
                             coefficients={"sigma": {"name": "sine"}}, seed=4))
    again = parse_config(json.dumps(cfg.to_dict()))
    assert again.to_dict() == cfg.to_dict()
    assert cfg.to_dict()["initial_data"] == {"kind": "gaussian_bump", "amplitude": 1.0,
                                             "width": 0.5, "velocity": 0.0}


@pytest.mark.parametrize("changes, fragment", [
    ({"equation": "wave", "dimension": 4}, "wave requires d"),
    ({"dimension": 2, "covariance": {"kind": "riesz", "params": {"alpha": 2.0}}}, "covariance"),
    ({"grid": {"half_width": 2.0, "points": 16, "horizon": 0.5, "steps": 4, "spacing": 1}},
     "grid"),
    ({"coefficients": {"sigma": {"name": "linear", "slope": 1}}}, "coefficients.sigma"),
    ({"scheme": "rk4"}, "scheme"),
    ({"seed": -1}, "seed"),
    ({"grid": {"half_width": 0.0, "points": 16, "horizon": 0.5, "steps": 4}}, "grid"),
])
def test_config_errors_name_the_field(changes, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config(_text(**changes))


def test_unknown_key_is_reported_with_its_path():
    with pytest.raises(ConfigError) as err:
        parse_config(_text(covariance={"kind": "exponential", "params": {"lambda": 1, "mu": 2}}))
    assert "covariance.params" in str(err.value) and "mu" in str(err.value)


def test_syntax_error_reports_line_and_column():
    with pytest.raises(ConfigError, match=r"line 2, column \d+"):
        parse_config('{"equation": "heat",\n "dimension": }')


def test_wave_config_needs_light_cone_room():
    with pytest.raises(ConfigError, match="grid"):
        parse_config(_text(equation="wave",
                           grid={"half_width": 1.0, "points": 16, "horizon": 0.5, "steps": 4,
                                 "window": 1.0}))


def _write(tmp_path, name="cfg.json", **changes):
    path = tmp_path / name
    path.write_text(_text(**changes))
    return path


def test_check_covariance_exit_codes(tmp_path, capsys):
    ok = _write(tmp_path, "ok.json")
    assert main(["check-covariance", "--config", str(ok)]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["admissible"] and report["dalang"]["holds"]
    bad = _write(tmp_path, "bad.json", dimension=3,
                 covariance={"kind": "riesz", "params": {"alpha": 2.5}},
                 grid={"half_width": 1.0, "points": 4, "horizon": 0.5, "steps": 2})
    assert main(["check-covariance", "--config", str(bad)]) == EXIT_INADMISSIBLE
    assert json.loads(capsys.readouterr().out)["admissible"] is False


def test_simulate_refuses_inadmissible_noise(tmp_path, capsys):
    bad = _write(tmp_path, dimension=2, grid={"half_width": 1.0, "points": 4,
                                              "horizon": 0.5, "steps": 2})
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_INADMISSIBLE
    assert not (tmp_path / "o" / "field.bin").exists()


def test_config_errors_exit_with_code_two(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{")
    assert main(["simulate", "--config", str(path)]) == EXIT_CONFIG
    assert "line 1" in capsys.readouterr().err
    assert main(["simulate"]) == EXIT_CONFIG


def test_simulate_is_byte_reproducible_and_report_reads_it(tmp_path, capsys):
    cfg = _write(tmp_path, coefficients={"sigma": {"name": "sine"}},
                 initial_data={"kind": "constant", "value": 1.0}, replicates=3, seed=8)
    blobs = []
    out = tmp_path / "a"
    for _ in range(2):
        assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
        blobs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        for p in out.iterdir():
            p.unlink()
    main(["simulate", "--config", str(cfg), "--out", str(out)])
    assert set(blobs[0]) == {"field.bin", "field.csv", "config.json", "provenance.json"}
    assert blobs[0] == blobs[1]
    assert json.loads(blobs[0]["config.json"])["seed"] == 8
    capsys.readouterr()
    assert main(["report", "--out", str(tmp_path / "a")]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["replicates"] == 3 and len(summary["center_mean"]) == 5
    assert summary["picard"]["verdict"] == "pass"


def test_seed_override_changes_output(tmp_path):
    cfg = _write(tmp_path, replicates=2)
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "1"])
    assert (tmp_path / "a" / "field.bin").read_bytes() != (tmp_path / "b" / "field.bin").read_bytes()


def test_linear_spectral_scheme_runs(tmp_path):
    cfg = _write(tmp_path, scheme="linear-spectral", replicates=2)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK


def test_verify_suite_writes_json(tmp_path, capsys):
    code = main(["verify", "--suite", "initial-terms", "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert "[PASS] criterion 6" in capsys.readouterr().out
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["suite"] == "initial-terms" and report["criteria"][0]["passed"]


def test_verify_linear_variance_with_fewer_replicates(tmp_path, capsys):
    code = main(["verify", "--suite", "linear-variance", "--replicates", "2000",
                 "--out", str(tmp_path)])
    assert code == EXIT_OK
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["criteria"][0]["number"] == 3


def test_load_config_from_file(tmp_path):
    assert load_config(_write(tmp_path)).equation == "heat"
