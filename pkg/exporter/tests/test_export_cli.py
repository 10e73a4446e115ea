import json

import pytest

from segexport import cli


def run_cli(argv):
    return cli.main(argv)


def test_selftest_passes(capsys):
    assert run_cli(["selftest"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 6
    assert "FAIL" not in out


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as exc:
        run_cli(["frobnicate"])
    assert exc.value.code == 2


def test_config_prints_defaults(capsys):
    assert run_cli(["config"]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["seg_model"] == "toy"
    assert cfg["scales"] == [0.9, 1.1]
    assert cfg["severity"] == 0.6


def test_config_set_overrides(capsys):
    assert run_cli(["config", "--set", "severity=0.3", "--set", "seg_model=other"]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["severity"] == 0.3
    assert cfg["seg_model"] == "other"


def test_bad_set_key_is_one_error_line(capsys):
    assert run_cli(["config", "--set", "nonsense=1"]) == 1
    err = capsys.readouterr().err
    assert err.startswith("ExportError:")
    assert len(err.strip().splitlines()) == 1


def test_export_command_full_cycle(input_set, tmp_path, capsys):
    images, labels = input_set
    out = tmp_path / "export"
    code = run_cli(
        ["export", "--images", *images, "--labels", *labels, "--out", str(out)]
    )
    assert code == 0
    assert (out / "manifest.json").is_file()
    assert "wrote 3 scenes" in capsys.readouterr().out


def test_export_with_config_file(input_set, tmp_path, capsys):
    images, labels = input_set
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(
        json.dumps(
            {
                "images": images,
                "labels": labels,
                "out_dir": str(tmp_path / "export"),
                "bank_count": 2,
                "severity": 0.4,
            }
        )
    )
    assert run_cli(["export", "--config", str(cfg_path)]) == 0
    manifest = json.loads((tmp_path / "export" / "manifest.json").read_text())
    assert manifest["splits"]["bank"] == ["frame_00", "frame_01"]


def test_invalid_config_lists_all_faults(capsys):
    code = run_cli(["export", "--set", "severity=2.0", "--set", "class_count=1"])
    assert code == 1
    err = capsys.readouterr().err
    assert "severity" in err
    assert "class_count" in err
    assert "images" in err  # empty image list is also reported


def test_missing_image_file_exits_1(tmp_path, capsys):
    code = run_cli(
        [
            "export",
            "--images",
            str(tmp_path / "nope.png"),
            "--labels",
            str(tmp_path / "nope_lab.png"),
            "--out",
            str(tmp_path / "x"),
        ]
    )
    assert code == 1
    assert "nope.png" in capsys.readouterr().err
