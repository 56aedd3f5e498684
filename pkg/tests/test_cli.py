import numpy as np
import pytest

from texpose.cli import main
from conftest import tiny_config


@pytest.fixture(scope="module")
def cfg_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.ini"
    cfg = tiny_config()
    cfg.set("train", "pretrain_steps", 120)
    cfg.save(path)
    return path


def test_cli_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit):
        main(["--help"])
    out = capsys.readouterr().out
    for cmd in ("pretrain-geom", "learn-texture", "synthesize", "train-pose",
                "selfsup", "baseline", "ablate", "render", "eval"):
        assert cmd in out


def test_cli_stagewise_workflow(tmp_path, cfg_file, capsys):
    out = tmp_path / "work"
    assert main(["pretrain-geom", "--config", str(cfg_file), "--seed", "3",
                 "--out", str(out)]) == 0
    assert (out / "field_pretrained.ckpt").exists()

    assert main(["learn-texture", "--config", str(cfg_file), "--seed", "3",
                 "--out", str(out)]) == 0
    assert (out / "field_textured0.ckpt").exists()

    assert main(["synthesize", "--config", str(cfg_file), "--seed", "3",
                 "--out", str(out)]) == 0
    assert (out / "synth0" / "img_0000.png").exists()
    assert (out / "synth0" / "img_0000.meta").exists()

    assert main(["train-pose", "--config", str(cfg_file), "--seed", "3",
                 "--out", str(out)]) == 0
    assert (out / "estimator_final.ckpt").exists()

    assert main(["eval", "--config", str(cfg_file), "--seed", "3",
                 "--out", str(out)]) == 0
    eval_csv = (out / "eval.csv").read_text()
    assert eval_csv.startswith("metric,value")

    assert main(["render", "--config", str(cfg_file), "--seed", "3",
                 "--out", str(out), "--n-poses", "2"]) == 0
    assert (out / "render_001_colour.png").exists()
    assert (out / "render_001_depth.pfm").exists()
    capsys.readouterr()


def test_cli_selfsup_writes_record_and_report(tmp_path, cfg_file, capsys):
    out = tmp_path / "full"
    assert main(["selfsup", "--config", str(cfg_file), "--seed", "3",
                 "--out", str(out)]) == 0
    assert (out / "record.json").exists()
    assert (out / "summary.csv").exists()
    assert "ADD@10%" in capsys.readouterr().out
