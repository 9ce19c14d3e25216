import json

import pytest
import yaml

from vortex_kinetics.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main
from vortex_kinetics.io import file_digest

WAVE = {
    "scenario": "uniform_wave",
    "seed": 3,
    "kernel": {"modes": [[1, 0, 1.0], [0, 1, 1.0]]},
    "f0": {"cosines": [[1, 0, 0.5]]},
    "n_particles": [8, 16],
    "n_samples": 512,
    "block_size": 128,
}


def _write(path, cfg):
    path.write_text(yaml.safe_dump(cfg))
    return path


def _manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_run_writes_manifest(tmp_path, capsys):
    cfg = _write(tmp_path / "wave.yaml", WAVE)
    out = tmp_path / "run"
    assert main(["run", str(cfg), "--out", str(out)]) == EXIT_OK
    man = _manifest(out)
    assert [s["name"] for s in man["stages"]] == ["kernel", "ensemble", "cumulants", "compare"]
    assert all(s["status"] == "ok" for s in man["stages"])
    assert man["scenario"] == "uniform_wave" and man["config"]["seed"] == 3
    for name, sha in man["artifacts"].items():
        assert file_digest(out / name) == sha
    assert "PASS" in capsys.readouterr().out


def test_unknown_key_exits_with_config_code(tmp_path, capsys):
    cfg = _write(tmp_path / "bad.yaml", {**WAVE, "dt_maxx": 0.1})
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "dt_maxx" in capsys.readouterr().err


def test_reruns_and_thread_counts_are_byte_identical(tmp_path):
    cfg = _write(tmp_path / "wave.yaml", WAVE)
    hashes = []
    for i, threads in enumerate(["1", "1", "2"]):
        out = tmp_path / f"run{i}"
        assert main(["--threads", threads, "run", str(cfg), "--out", str(out)]) == EXIT_OK
        hashes.append(_manifest(out)["artifacts"])
    assert hashes[0] == hashes[1] == hashes[2]


def test_coeffs_and_report(tmp_path, capsys):
    cfg = _write(tmp_path / "c.yaml", {"scenario": "coeffs_only", "kernel": {"modes": [[1, 0, 1.0], [0, 1, 0.7]]}})
    out = tmp_path / "coeffs"
    assert main(["coeffs", str(cfg), "--out", str(out)]) == EXIT_OK
    assert (out / "coefficients.json").exists()
    capsys.readouterr()
    assert main(["report", str(tmp_path)]) == EXIT_OK
    assert "coeffs" in capsys.readouterr().out


def test_numeric_failure_names_the_stage(tmp_path, capsys):
    cfg = _write(tmp_path / "strong.yaml", {
        "scenario": "nongaussian_fp",
        "kernel": {"family": "gaussian", "amplitude": -200.0, "width": 1.0},
        "potential": {"family": "polynomial", "coefficients": [1.0, 1.0]},
        "beta": 5.0,
        "f0": {"radius": 1.5, "width": 0.3},
    })
    with pytest.warns(UserWarning):
        code = main(["run", str(cfg), "--out", str(tmp_path / "o")])
    assert code == EXIT_NUMERIC
    assert "profile" in capsys.readouterr().err


def test_bad_arguments_exit_2():
    assert main(["verify", "medium"]) == EXIT_CONFIG
