import csv
import json
import os

import pytest
from app import pose_lifting_cli
from metrics.metrics import CSV_HEADER
from posedata import dataset
from stmo import model as stmo_model
from stmo.checkpoint import CheckpointMeta, save_checkpoint
from stmo.config import ModelConfig, Stage
from training import trainer

SMALL_CONFIG = ModelConfig(n_frames=9, d_model=16, heads=2)


def _last_json(capsys) -> dict:
    lines = capsys.readouterr().out.strip().splitlines()
    return json.loads(lines[-1])


def _checkpoint(tmpdir, stage: Stage) -> str:
    path = os.path.join(str(tmpdir), "ckpt", f"{stage.value}.ckpt")
    model = stmo_model.build_model(SMALL_CONFIG, stage, seed=0)
    save_checkpoint(path, model, CheckpointMeta(stage=stage, model=SMALL_CONFIG))
    return path


@pytest.fixture(name="data_dir")
def fixture_data_dir(tmpdir, capsys):
    out = os.path.join(str(tmpdir), "data")
    argv = ["synth", "--out", out, "--frames", "20", "--sequences", "2"]
    assert pose_lifting_cli.main(argv) == pose_lifting_cli.EXIT_OK
    capsys.readouterr()
    return out


def test_rf(capsys):
    assert pose_lifting_cli.main(["rf", "--n", "27", "--s", "9"]) == 0
    assert capsys.readouterr().out.strip() == "243"
    assert pose_lifting_cli.main(["rf", "--n", "243", "--s", "2", "--json"]) == 0
    assert _last_json(capsys) == {"rf": 486, "span": 485}


def test_count(capsys):
    assert pose_lifting_cli.main(["count"]) == 0
    report = _last_json(capsys)
    assert report["params"] == pytest.approx(6.2e6, rel=0.05)
    assert report["stage"] == "finetune"

    assert pose_lifting_cli.main(["count", "--preset", "sem_only"]) == 0
    assert _last_json(capsys)["params"] == pytest.approx(1.1e6, rel=0.05)


def test_unknown_flag_is_a_usage_error():
    with pytest.raises(SystemExit) as info:
        pose_lifting_cli.main(["rf", "--n", "27", "--s", "1", "--bogus"])
    assert info.value.code == 2


def test_synth(tmpdir, capsys):
    out = os.path.join(str(tmpdir), "one")
    assert pose_lifting_cli.main(["synth", "--out", out, "--frames", "30"]) == 0
    record = _last_json(capsys)
    assert record["status"] == "ok"
    assert record["sequences"] == 1
    names = sorted(os.listdir(out))
    assert len([name for name in names if name.endswith(".pseq")]) == 2
    assert "manifest.json" in names
    (sequence,) = dataset.load_dataset(out)
    assert sequence.num_frames == 30
    assert sequence.has_targets


def test_synth_is_reproducible(tmpdir):
    trees = []
    for run in ("first", "second"):
        out = os.path.join(str(tmpdir), run)
        argv = ["synth", "--out", out, "--frames", "15", "--cameras", "2"]
        assert pose_lifting_cli.main(argv + ["--seed", "4"]) == 0
        tree = {}
        for name in sorted(os.listdir(out)):
            with open(os.path.join(out, name), "rb") as file:
                tree[name] = file.read()
        trees.append(tree)
    assert trees[0] == trees[1]
    assert len(trees[0]) == 5


def test_pretrain_passes_overrides(tmpdir, mocker, capsys):
    run_stage1 = mocker.patch(
        "training.trainer.run_stage1", return_value="run/best.ckpt"
    )
    argv = ["pretrain", "--out", str(tmpdir), "--epochs", "0", "--qt", "0.5"]
    assert pose_lifting_cli.main(argv + ["--n-frames", "27"]) == 0
    config = run_stage1.call_args.args[0]
    assert config.optim.epochs_stage1 == 0
    assert config.optim.epochs_stage2 == 80
    assert config.masking.q_t == 0.5
    assert config.model.n_frames == 27
    assert _last_json(capsys) == {"status": "ok", "checkpoint": "run/best.ckpt"}


def test_finetune_without_pretrained_encoder(tmpdir, mocker, capsys):
    report = mocker.Mock(mpjpe=42.0)
    run_stage2 = mocker.patch(
        "training.trainer.run_stage2", return_value=("best.ckpt", report)
    )
    assert pose_lifting_cli.main(["finetune", "--out", str(tmpdir)]) == 0
    assert run_stage2.call_args.kwargs["pretrained"] is None
    assert _last_json(capsys)["mpjpe"] == 42.0


def test_invalid_config_is_a_validation_error(tmpdir, capsys):
    argv = ["pretrain", "--out", str(tmpdir), "--n-frames", "242"]
    assert pose_lifting_cli.main(argv) == pose_lifting_cli.EXIT_VALIDATION
    record = _last_json(capsys)
    assert record["status"] == "fail"
    assert record["exception"] == "ValidationError"


def test_runtime_failure(tmpdir, mocker, capsys):
    mocker.patch("training.trainer.run_stage1", side_effect=RuntimeError("boom"))
    argv = ["pretrain", "--out", str(tmpdir)]
    assert pose_lifting_cli.main(argv) == pose_lifting_cli.EXIT_RUNTIME
    assert _last_json(capsys)["message"] == "boom"


def test_eval(tmpdir, capsys, data_dir):
    ckpt = _checkpoint(tmpdir, Stage.FINETUNE)
    out = os.path.join(str(tmpdir), "eval")
    argv = ["eval", "--ckpt", ckpt, "--data", data_dir, "--out", out]
    assert pose_lifting_cli.main(argv) == 0
    report = _last_json(capsys)
    assert report["num_frames"] == 40
    assert "per_action" not in report

    with open(os.path.join(out, "metrics.csv"), "r", encoding="utf-8") as file:
        rows = list(csv.reader(file))
    assert tuple(rows[0]) == CSV_HEADER
    assert [row[0] for row in rows[1:]] == ["motion0", "motion1", "pooled"]
    assert os.path.exists(os.path.join(out, "report.json"))

    assert pose_lifting_cli.main(argv + ["--noise-sigma", "0"]) == 0
    assert _last_json(capsys) == report


@pytest.mark.parametrize("flags, expected", [([], 1), (["--stride", "3"], 3)])
def test_eval_stride_defaults_to_checkpoint(tmpdir, mocker, data_dir, flags, expected):
    path = os.path.join(str(tmpdir), "ckpt", "strided.ckpt")
    model = stmo_model.build_model(SMALL_CONFIG, Stage.FINETUNE, seed=0)
    meta = CheckpointMeta(stage=Stage.FINETUNE, model=SMALL_CONFIG, stride=1)
    save_checkpoint(path, model, meta)
    evaluate = mocker.patch("training.trainer.evaluate", wraps=trainer.evaluate)

    out = os.path.join(str(tmpdir), "eval")
    argv = ["eval", "--ckpt", path, "--data", data_dir, "--out", out]
    assert pose_lifting_cli.main(argv + flags) == 0
    assert evaluate.call_args.kwargs["stride"] == expected


def test_eval_rejects_pretrain_checkpoint(tmpdir, capsys, data_dir):
    ckpt = _checkpoint(tmpdir, Stage.PRETRAIN)
    argv = ["eval", "--ckpt", ckpt, "--data", data_dir, "--out", str(tmpdir)]
    assert pose_lifting_cli.main(argv) == pose_lifting_cli.EXIT_VALIDATION
    assert _last_json(capsys)["exception"] == "CheckpointException"


def test_eval_rejects_mismatched_config(tmpdir, capsys, data_dir):
    ckpt = _checkpoint(tmpdir, Stage.FINETUNE)
    config = tmpdir.join("run.json")
    config.write('{"model": {"n_frames": 27}}')
    argv = ["eval", "--ckpt", ckpt, "--data", data_dir, "--out", str(tmpdir)]
    assert pose_lifting_cli.main(argv + ["--config", str(config)]) == 3
    assert _last_json(capsys)["exception"] == "CommandException"


def test_attn(tmpdir, capsys, data_dir):
    ckpt = _checkpoint(tmpdir, Stage.PRETRAIN)
    out = os.path.join(str(tmpdir), "attn")
    argv = ["attn", "--ckpt", ckpt, "--data", data_dir, "--out", out]
    assert pose_lifting_cli.main(argv + ["--formats", "csv"]) == 0
    record = _last_json(capsys)
    assert record == {"status": "ok", "dumps": 10, "files": 10}
    tem = [name for name in os.listdir(out) if name.startswith("pretrain_tem_")]
    assert len(tem) == 3 * 2


def test_attn_rejects_window_index(tmpdir, capsys, data_dir):
    ckpt = _checkpoint(tmpdir, Stage.FINETUNE)
    argv = ["attn", "--ckpt", ckpt, "--data", data_dir, "--out", str(tmpdir)]
    assert pose_lifting_cli.main(argv + ["--window-index", "40"]) == 3
    assert _last_json(capsys)["exception"] == "PoseDataException"
