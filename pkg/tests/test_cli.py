import csv
import json
import subprocess
import sys

import pytest

from obstacle_walk.cli import main
from obstacle_walk.lattice import load_environment


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def env_file(tmp_path, capsys):
    path = tmp_path / "env.bin"
    code, _, _ = run(["gen-env", "--d", 2, "--box", 20, "--p", 0.7, "--seed", 5,
                      "--plant-ball", "0,0,4", "--out", path], capsys)
    assert code == 0
    return path


def test_gen_env_is_reproducible(tmp_path, env_file, capsys):
    again = tmp_path / "again.bin"
    run(["gen-env", "--d", 2, "--box", 20, "--p", 0.7, "--seed", 5, "--plant-ball", "0,0,4",
         "--out", again], capsys)
    assert env_file.read_bytes() == again.read_bytes()
    env = load_environment(env_file)
    assert env.generator_tag == "planted" and env.is_open((0, 0))


def test_solve_pam_csv(tmp_path, env_file, capsys):
    out = tmp_path / "mass.csv"
    code, _, _ = run(["solve-pam", "--env", env_file, "--start", "0,0", "--t", 6,
                      "--snap", "0,6", "--out", out], capsys)
    assert code == 0
    rows = list(csv.reader(out.open()))
    assert rows[0][:3] == ["t", "x0", "x1"] and rows[0][-1] == "u"
    assert {r[0] for r in rows[1:]} == {"0", "6"}
    assert sum(float(r[-1]) for r in rows[1:] if r[0] == "0") == 1.0


def test_sample_matches_exact(env_file, capsys):
    code, out, _ = run(["sample", "--env", env_file, "--start", "0,0", "--n", 20,
                        "--samples", 20000, "--seed", 3, "--exact"], capsys)
    assert code == 0
    res = json.loads(out)
    m = res["metrics"]
    assert abs(m["survival_estimate"] - m["exact"]) <= 5 * m["stderr"]


def test_threads_do_not_change_results(env_file, capsys):
    argv = ["sample", "--env", env_file, "--start", "0,0", "--n", 20, "--samples", 10000, "--seed", 4]
    _, one, _ = run(["--threads", 1] + argv, capsys)
    _, three, _ = run(["--threads", 3] + argv, capsys)
    assert json.loads(one)["metrics"] == json.loads(three)["metrics"]


def test_eig_json(tmp_path, env_file, capsys):
    out = tmp_path / "eig.json"
    code, _, _ = run(["eig", "--env", env_file, "--domain-ball", "0,0,4", "--second", "--out", out], capsys)
    assert code == 0
    res = json.loads(out.read_text())
    assert 0 < res["lambda1"] < 1 and res["lambda2"] < res["lambda1"]


def test_profile_csv(tmp_path, capsys):
    out = tmp_path / "p.csv"
    assert run(["profile", "--kind", "phi1", "--radius", 10, "--center", "0,0", "--out", out], capsys)[0] == 0
    rows = list(csv.reader(out.open()))
    assert len(rows) > 100


def test_verify_pass_and_negative_control(capsys):
    code, _, _ = run(["verify", "--suite", "parity", "--n", 3], capsys)
    assert code == 0
    code, _, err = run(["verify", "--suite", "identities", "--n", 1, "--inject-corruption"], capsys)
    assert code == 1 and "residual" in err


def test_unknown_suite_is_schema_error(capsys):
    assert run(["verify", "--suite", "nonsense"], capsys)[0] == 2


def test_invalid_flag_exit_two(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["eig", "--no-such-flag"])
    assert exc.value.code == 2


def test_bad_value_exit_two(capsys):
    code, _, err = run(["iso-check", "--R", 5, "--suite", "exhaustive"], capsys)
    assert code == 2 and "error" in err


def test_config_overrides_flags(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"R": 3}))
    code, out, _ = run(["--config", cfg, "iso-check", "--R", 5, "--suite", "singleton"], capsys)
    assert code == 0 and json.loads(out)["metrics"]["rows"][0][1] == 3


def test_unknown_config_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    assert run(["--config", cfg, "iso-check", "--R", 5], capsys)[0] == 2


def test_empty_pipeline(tmp_path, capsys):
    cfg = tmp_path / "empty.json"
    cfg.write_text(json.dumps({"pipeline": []}))
    bundle = tmp_path / "bundle.json"
    assert run(["run", cfg, "--out", bundle], capsys)[0] == 0
    res = json.loads(bundle.read_text())
    assert res["steps"] == [] and res["status"] == "ok"


def test_bundle_rerun_reproduces_checksums(tmp_path, capsys):
    cfg = {"pipeline": [
        {"command": "gen-env", "args": {"d": 2, "box": 15, "p": 0.7, "seed": 9, "out": str(tmp_path / "e.bin")}},
        {"command": "solve-pam", "args": {"env": str(tmp_path / "e.bin"), "start": "0,0", "t": 5,
                                           "out": str(tmp_path / "m.csv")}},
        {"command": "profile-compare", "args": {"R": "15", "kind": "endpoint", "out": str(tmp_path / "pc.json")}},
    ]}
    cfg_path = tmp_path / "pipe.json"
    cfg_path.write_text(json.dumps(cfg))
    assert run(["run", cfg_path, "--out", tmp_path / "b1.json"], capsys)[0] == 0
    first = json.loads((tmp_path / "b1.json").read_text())
    # re-run the echoed config
    (tmp_path / "echo.json").write_text(json.dumps(first["config"]))
    assert run(["run", tmp_path / "echo.json", "--out", tmp_path / "b2.json"], capsys)[0] == 0
    second = json.loads((tmp_path / "b2.json").read_text())
    assert first["checksums"] == second["checksums"] and len(first["checksums"]) == 3
    pc = json.loads((tmp_path / "pc.json").read_text())
    assert "table" in pc


def test_pipeline_accepts_negative_box_bounds(tmp_path, capsys):
    env = tmp_path / "e.bin"
    cfg = {"pipeline": [
        {"command": "gen-env", "args": {"d": 2, "box": "-10:9,-10:9", "p": 0.7, "seed": 1, "out": str(env)}},
    ]}
    cfg_path = tmp_path / "pipe.json"
    cfg_path.write_text(json.dumps(cfg))
    assert run(["run", cfg_path, "--out", tmp_path / "b.json"], capsys)[0] == 0
    assert load_environment(env).box == ((-10, 9), (-10, 9))


def test_failed_step_marks_partial_bundle(tmp_path, capsys):
    cfg = {"pipeline": [
        {"command": "iso-check", "args": {"R": 2, "suite": "singleton"}},
        {"command": "verify", "args": {"suite": "identities", "n": 1, "inject_corruption": True}},
        {"command": "iso-check", "args": {"R": 2}},
    ]}
    cfg_path = tmp_path / "pipe.json"
    cfg_path.write_text(json.dumps(cfg))
    assert run(["run", cfg_path, "--out", tmp_path / "b.json"], capsys)[0] == 1
    res = json.loads((tmp_path / "b.json").read_text())
    assert res["status"] == "failed" and len(res["steps"]) == 2
    assert [s["status"] for s in res["steps"]] == ["ok", "failed"]


def test_invalid_pipeline_step_is_schema_error(tmp_path, capsys):
    cfg_path = tmp_path / "pipe.json"
    cfg_path.write_text(json.dumps({"pipeline": [{"command": "eig", "args": {"bogus": 1}}]}))
    assert run(["run", cfg_path, "--out", tmp_path / "b.json"], capsys)[0] == 2


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "obstacle_walk.cli", "iso-check", "--R", "2",
                           "--suite", "singleton"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["metrics"]
