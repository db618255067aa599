"""
Command-line entry point of the pose lifting pipeline: synthetic data
generation, the two training stages, evaluation, attention export and model
accounting.

    python -m app.pose_lifting_cli <subcommand> [options]

Exit codes: 0 success, 2 usage error, 3 validation error, 4 runtime failure.
Failures also print a one-line JSON error record to standard output.
"""

import argparse
import json
import logging
import os
import sys
import textwrap
import typing as t

import numpy as np
import pydantic

from analysis import attention, complexity, heatmap
from masking.masking import MaskConfig, MaskingException, build_plan
from metrics.metrics import MetricException, per_action_csv
from posedata import dataset, synth
from posedata.sequences import PoseDataException, filter_sequences
from posedata.skeleton import Skeleton
from stmo.checkpoint import CheckpointException, load_checkpoint
from stmo.config import ModelConfig, ModelInputException, Stage, Variant
from stmo.model import TransferException
from training import trainer
from training.config import RunConfig, load_run_config
from training.data import WindowDataset

EXIT_OK = 0
EXIT_VALIDATION = 3
EXIT_RUNTIME = 4

VALIDATION_ERRORS = (
    pydantic.ValidationError,
    PoseDataException,
    MaskingException,
    ModelInputException,
    CheckpointException,
    TransferException,
    MetricException,
    attention.AttentionExportException,
)


# Custom Exceptions
class CommandException(Exception):
    """Exception raised when command-line arguments contradict each other"""


def configure_logging(level: str = "INFO"):
    """
    Diagnostics go to standard error with timestamps, progress records go to
    standard output as bare JSON lines.
    """
    logging.basicConfig(
        format="%(asctime)s %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
        level=getattr(logging, level),
    )
    progress = logging.getLogger(trainer.PROGRESS_LOGGER)
    if not progress.handlers:
        handler = logging.StreamHandler(sys.stdout)
        handler.setFormatter(logging.Formatter("%(message)s"))
        progress.addHandler(handler)
    progress.setLevel(logging.INFO)
    progress.propagate = False


def _print_json(record: t.Any):
    print(json.dumps(record, sort_keys=True))


def _print_failure(e: Exception):
    _print_json({"status": "fail", "message": str(e), "exception": type(e).__name__})


def _skip_none(values: t.Mapping[str, t.Any]) -> t.Dict[str, t.Any]:
    return {key: value for key, value in values.items() if value is not None}


def resolve_config(args: argparse.Namespace, stage: Stage) -> RunConfig:
    """Run config from the file named by --config with flag overrides on top"""
    config = load_run_config(args.config)
    epochs_key = "epochs_stage1" if stage == Stage.PRETRAIN else "epochs_stage2"
    return config.with_overrides(
        model=_skip_none({"n_frames": args.n_frames}),
        masking=_skip_none({"q_t": args.qt, "m_s": args.ms}),
        optim=_skip_none({epochs_key: args.epochs, "batch_size": args.batch}),
        data=_skip_none({"train": args.data, "val": args.val, "stride": args.stride}),
        run=_skip_none({"seed": args.seed, "workers": args.workers}),
    )


def cmd_synth(args: argparse.Namespace):
    """
    Write a synthetic multi-view corpus. Every (subject, sequence) pair is one
    motion seen by each camera of a ring around the subject.
    """
    skeleton = Skeleton.h36m17()
    cameras = synth.camera_ring(args.cameras)
    sequences = []
    for subject in range(args.subjects):
        for index in range(args.sequences):
            seeds = np.random.SeedSequence([args.seed, subject, index])
            state = seeds.generate_state(1)
            for camera_index, camera in enumerate(cameras):
                motion = synth.generate_motion(
                    skeleton, args.frames, int(state[0]), camera=camera
                )
                sequences.append(
                    motion.sequence(
                        subject=f"S{subject + 1}",
                        action=f"motion{index}",
                        camera=str(camera_index),
                        name=f"S{subject + 1}_motion{index}_cam{camera_index}",
                    )
                )
    path = dataset.save_dataset(sequences, args.out, skeleton)
    logging.info(f"Wrote {len(sequences)} synthetic sequences to {path}")
    _print_json({"status": "ok", "manifest": path, "sequences": len(sequences)})


def cmd_pretrain(args: argparse.Namespace):
    config = resolve_config(args, Stage.PRETRAIN)
    best = trainer.run_stage1(config, args.out, resume=args.resume)
    _print_json({"status": "ok", "checkpoint": best})


def cmd_finetune(args: argparse.Namespace):
    config = resolve_config(args, Stage.FINETUNE)
    best, report = trainer.run_stage2(
        config, args.out, pretrained=args.from_pretrained, resume=args.resume
    )
    _print_json({"status": "ok", "checkpoint": best, "mpjpe": report.mpjpe})


def _load_data(path: str, cameras: t.Optional[t.List[str]]):
    sequences = filter_sequences(dataset.load_dataset(path), cameras=cameras)
    if not sequences:
        raise PoseDataException(f"No sequences of {path} match cameras {cameras}")
    return sequences, dataset.load_skeleton(path)


def cmd_eval(args: argparse.Namespace):
    model, meta = load_checkpoint(args.ckpt)
    if meta.stage != Stage.FINETUNE:
        raise CheckpointException(f"{args.ckpt} is not a fine-tuned checkpoint")
    stride = args.stride
    if args.config is not None:
        config = load_run_config(args.config)
        if config.model.n_frames != meta.model.n_frames:
            raise CommandException(
                f"Config window of {config.model.n_frames} frames does not match"
                f" the checkpoint window of {meta.model.n_frames}"
            )
        stride = stride or config.data.stride
    stride = stride or meta.stride or RunConfig().data.stride

    sequences, skeleton = _load_data(args.data, args.cameras)
    report = trainer.evaluate(
        model,
        sequences,
        skeleton,
        stride=stride,
        center_stride=args.center_stride,
        flip=args.flip,
        noise_sigma=args.noise_sigma,
        shuffle=args.shuffle,
        seed=args.seed or 0,
    )
    os.makedirs(args.out, exist_ok=True)
    per_action_csv(report, os.path.join(args.out, "metrics.csv"))
    with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as file:
        file.write(report.model_dump_json(indent=2))
    _print_json(report.model_dump(exclude={"per_action"}))


def cmd_attn(args: argparse.Namespace):
    model, meta = load_checkpoint(args.ckpt)
    sequences, skeleton = _load_data(args.data, args.cameras)
    windows = WindowDataset(
        sequences, skeleton, meta.model.n_frames, stride=args.stride
    )
    if not 0 <= args.window_index < len(windows):
        raise PoseDataException(
            f"Window index {args.window_index} outside of [0, {len(windows)})"
        )
    window = windows.window(args.window_index)

    plan = None
    if meta.stage == Stage.PRETRAIN:
        mask_config = MaskConfig(q_t=args.qt, m_s=args.ms)
        rng = np.random.default_rng(args.seed or 0)
        plan = build_plan(mask_config, meta.model.n_frames, skeleton.num_joints, rng)
    dumps = attention.export_attention(model, window.inputs, plan)
    paths = heatmap.write_heatmaps(dumps, args.out, formats=args.formats.split(","))
    _print_json({"status": "ok", "dumps": len(dumps), "files": len(paths)})


def cmd_count(args: argparse.Namespace):
    config = load_run_config(args.config).model if args.config else ModelConfig()
    if args.variant is not None:
        config = config.with_overrides(variant=Variant(args.variant))
    if args.n_frames is not None:
        config = config.with_overrides(n_frames=args.n_frames)
    if args.preset is not None:
        config = complexity.ablation_presets(config)[args.preset]
    report = complexity.complexity_report(config, Stage(args.stage))
    _print_json(report.model_dump(mode="json"))


def cmd_rf(args: argparse.Namespace):
    field = complexity.receptive_field(args.n, args.s)
    if args.json:
        _print_json(field.model_dump())
    else:
        print(field.rf)


def _add_run_arguments(parser: argparse.ArgumentParser):
    parser.add_argument("--config", type=str, help="JSON run config file")
    parser.add_argument("--out", type=str, required=True, help="Run directory")
    parser.add_argument("--data", type=str, help="Training dataset directory")
    parser.add_argument("--val", type=str, help="Validation dataset directory")
    parser.add_argument("--resume", type=str, help="Checkpoint to resume from")
    parser.add_argument("--epochs", type=int, help="Number of epochs")
    parser.add_argument("--batch", type=int, help="Batch size")
    parser.add_argument("--n-frames", type=int, help="Window length N (odd)")
    parser.add_argument("--stride", type=int, help="Temporal downsampling rate s")
    parser.add_argument("--qt", type=float, help="Temporal masking ratio")
    parser.add_argument("--ms", type=int, help="Masked joints per frame")
    parser.add_argument("--seed", type=int, help="Random seed")
    parser.add_argument("--workers", type=int, help="Data loader worker processes")


def build_parser() -> argparse.ArgumentParser:
    module = os.path.splitext(os.path.basename(__file__))[0]
    parser = argparse.ArgumentParser(
        prog="python -m app.pose_lifting_cli",
        description=textwrap.dedent(f"""\
            2D-to-3D human pose lifting with masked pose modeling pre-training.

            Example usage:
                python -m app.{module} synth --out data --sequences 4
                python -m app.{module} pretrain --data data --out runs/mpm
                python -m app.{module} finetune --data data --out runs/stmo \\
                    --from-pretrained runs/mpm/best.ckpt
            """),
        formatter_class=argparse.RawTextHelpFormatter,
    )
    parser.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        default="INFO",
        help="Logging level of the diagnostics on standard error",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    synth_parser = commands.add_parser("synth", help="Generate a synthetic corpus")
    synth_parser.add_argument("--out", type=str, required=True)
    synth_parser.add_argument("--frames", type=int, default=600)
    synth_parser.add_argument("--sequences", type=int, default=1)
    synth_parser.add_argument("--seed", type=int, default=0)
    synth_parser.add_argument(
        "--cameras", type=int, default=1, help="Views of every motion"
    )
    synth_parser.add_argument(
        "--subjects", type=int, default=1, help="Subjects, each with its own motions"
    )
    synth_parser.set_defaults(handler=cmd_synth)

    pretrain_parser = commands.add_parser(
        "pretrain", help="Stage I masked pose modeling"
    )
    _add_run_arguments(pretrain_parser)
    pretrain_parser.set_defaults(handler=cmd_pretrain)

    finetune_parser = commands.add_parser(
        "finetune", help="Stage II fine-tuning on 3D targets"
    )
    _add_run_arguments(finetune_parser)
    finetune_parser.add_argument(
        "--from-pretrained",
        type=str,
        help=textwrap.dedent("""\
            Stage I checkpoint whose encoder initializes the model.
            Without it the model starts from random initialization.
            """),
    )
    finetune_parser.set_defaults(handler=cmd_finetune)

    eval_parser = commands.add_parser("eval", help="Evaluate a fine-tuned checkpoint")
    eval_parser.add_argument("--ckpt", type=str, required=True)
    eval_parser.add_argument("--data", type=str, required=True)
    eval_parser.add_argument("--out", type=str, required=True)
    eval_parser.add_argument("--config", type=str, help="Run config to check against")
    eval_parser.add_argument("--stride", type=int)
    eval_parser.add_argument("--center-stride", type=int, default=1)
    eval_parser.add_argument("--cameras", type=str, nargs="+")
    eval_parser.add_argument(
        "--flip",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="Average with the prediction on the mirrored input",
    )
    eval_parser.add_argument(
        "--noise-sigma",
        type=float,
        default=0.0,
        help="Gaussian noise added to the normalized 2D inputs",
    )
    eval_parser.add_argument(
        "--shuffle", action="store_true", help="Shuffle the frames of every window"
    )
    eval_parser.add_argument("--seed", type=int)
    eval_parser.set_defaults(handler=cmd_eval)

    attn_parser = commands.add_parser("attn", help="Export attention heatmaps")
    attn_parser.add_argument("--ckpt", type=str, required=True)
    attn_parser.add_argument("--data", type=str, required=True)
    attn_parser.add_argument("--out", type=str, required=True)
    attn_parser.add_argument("--window-index", type=int, default=0)
    attn_parser.add_argument("--stride", type=int, default=1)
    attn_parser.add_argument("--cameras", type=str, nargs="+")
    attn_parser.add_argument("--qt", type=float, default=MaskConfig().q_t)
    attn_parser.add_argument("--ms", type=int, default=MaskConfig().m_s)
    attn_parser.add_argument("--seed", type=int)
    attn_parser.add_argument(
        "--formats", type=str, default=",".join(heatmap.FORMATS)
    )
    attn_parser.set_defaults(handler=cmd_attn)

    count_parser = commands.add_parser("count", help="Parameters and FLOPs")
    count_parser.add_argument("--config", type=str)
    count_parser.add_argument(
        "--stage", choices=[s.value for s in Stage], default=Stage.FINETUNE.value
    )
    count_parser.add_argument("--variant", choices=["S", "full"])
    count_parser.add_argument("--n-frames", type=int)
    count_parser.add_argument(
        "--preset", choices=sorted(complexity.ablation_presets().keys())
    )
    count_parser.set_defaults(handler=cmd_count)

    rf_parser = commands.add_parser("rf", help="Temporal receptive field N·s")
    rf_parser.add_argument("--n", type=int, required=True)
    rf_parser.add_argument("--s", type=int, required=True)
    rf_parser.add_argument("--json", action="store_true", help="Also print the span")
    rf_parser.set_defaults(handler=cmd_rf)

    return parser


def main(argv: t.Optional[t.Sequence[str]] = None) -> int:
    # pylint: disable=broad-except
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        args.handler(args)
    except VALIDATION_ERRORS + (CommandException, ValueError) as e:
        logging.error(f"Validation failed: {e}")
        _print_failure(e)
        return EXIT_VALIDATION
    except Exception as e:
        logging.exception(f"{args.command} failed")
        _print_failure(e)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
