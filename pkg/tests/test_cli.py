import json

import pytest

from badvamp.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, main


def write_config(path, **kw):
    doc = dict(experiment="csmu_sweep_mn", grid={"m_ratio": [0.5, 0.75]}, trials=2,
               fixed=dict(N=16, K=2, Q=2), solver=dict(t_max=20))
    doc.update(kw)
    path.write_text(json.dumps(doc))
    return path


def test_run_writes_csv_summary_and_figure(tmp_path, capsys):
    out = tmp_path / "res" / "sweep.csv"
    cfg = write_config(tmp_path / "c.json")
    assert main(["run", str(cfg), "--out", str(out)]) == EXIT_OK
    printed = capsys.readouterr().out.split()
    assert printed == [str(out), str(tmp_path / "res" / "sweep_summary.csv"),
                       str(tmp_path / "res" / "sweep.png")]
    assert (tmp_path / "res" / "sweep.png").read_bytes()[:4] == b"\x89PNG"
    assert len(out.read_text().splitlines()) == 5


def test_no_plot(tmp_path):
    out = tmp_path / "r.csv"
    assert main(["run", str(write_config(tmp_path / "c.json")), "--out", str(out),
                 "--no-plot"]) == EXIT_OK
    assert out.exists()
    assert not out.with_suffix(".png").exists()


def test_flags_override_config(tmp_path):
    out = tmp_path / "r.csv"
    cfg = write_config(tmp_path / "c.json")
    assert main(["run", str(cfg), "--out", str(out), "--trials", "1", "--seed", "3",
                 "--no-plot"]) == EXIT_OK
    assert len(out.read_text().splitlines()) == 3


def test_json_output(tmp_path):
    out = tmp_path / "r.json"
    assert main(["run", str(write_config(tmp_path / "c.json")), "--out", str(out),
                 "--no-plot"]) == EXIT_OK
    assert len(json.loads(out.read_text())) == 4


def test_config_error_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", experiment="unknown")
    assert main(["run", str(cfg)]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_bad_solver_setting_is_config_error(tmp_path):
    cfg = write_config(tmp_path / "c.json", solver=dict(zeta=0))
    assert main(["run", str(cfg)]) == EXIT_CONFIG


def test_missing_config_is_io_error(tmp_path):
    assert main(["run", str(tmp_path / "absent.json")]) == EXIT_IO


def test_unwritable_output_is_io_error(tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    cfg = write_config(tmp_path / "c.json")
    assert main(["run", str(cfg), "--out", str(blocker / "r.csv"), "--no-plot"]) == EXIT_IO


def test_subcommand_with_preset(tmp_path):
    out = tmp_path / "sc.csv"
    assert main(["selfcal", "--trials", "1", "--out", str(out)]) == EXIT_OK
    # the desk grid has 3 x 3 points
    assert len(out.read_text().splitlines()) == 10
    assert out.with_suffix(".png").exists()


def test_unknown_preset_rejected():
    with pytest.raises(SystemExit):
        main(["csmu", "--preset", "huge"])
