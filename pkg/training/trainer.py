"""
The two training stages: masked pose modeling pre-training (Stage I) and
fine-tuning of the full lifting model (Stage II), with evaluation,
checkpointing and a run directory per invocation.

Run directory layout:
    config.json           resolved run config
    metrics.csv           epoch,split,mpjpe,p_mpjpe,pck150,auc,loss
    checkpoints/epochN.ckpt
    best.ckpt
    report.json           Stage II only, report of the best checkpoint
    per_action.csv        Stage II only
"""

import csv
import json
import logging
import math
import os
import typing as t

import numpy as np
import torch
from torch import nn

from metrics.losses import (
    LossValue,
    loss_multiple,
    loss_single,
    pretrain_loss,
    total_loss,
)
from metrics.metrics import MetricReport, compute_report, per_action_csv
from posedata.dataset import load_dataset, load_skeleton
from posedata.sequences import (
    PoseSequence,
    add_gaussian_noise,
    filter_sequences,
    shuffle_frames,
)
from posedata.skeleton import Skeleton
from stmo.checkpoint import (
    CheckpointMeta,
    load_optimizer_state,
    load_parameters,
    read_meta,
    read_pstm,
    save_checkpoint,
)
from stmo.config import Stage
from stmo.model import (
    PlanBatch,
    PretrainModel,
    STMOModel,
    TransferException,
    build_model,
    transfer_encoder,
)
from training.config import RunConfig
from training.data import (
    Purpose,
    WindowDataset,
    canonical_order,
    make_loader,
    plans_of,
    sample_rng,
)

PROGRESS_LOGGER = "pose_lifting.progress"
METRICS_HEADER = ("epoch", "split", "mpjpe", "p_mpjpe", "pck150", "auc", "loss")
EVAL_BATCH_SIZE = 256


# Custom Exceptions
class TrainingException(Exception):
    """Exception raised when a training run cannot continue"""

    def __init__(
        self, message: str, step: t.Optional[int] = None, lr: t.Optional[float] = None
    ):
        details = []
        if step is not None:
            details.append(f"step {step}")
        if lr is not None:
            details.append(f"lr {lr:g}")
        super().__init__(f"{message} ({', '.join(details)})" if details else message)
        self.step = step
        self.lr = lr


def lr_schedule(epoch: int, lr0: float, decay: float) -> float:
    """Learning rate of an epoch, lr0 * decay^epoch"""
    if epoch < 0:
        raise ValueError(f"Epoch must be nonnegative, got {epoch}")
    return lr0 * decay**epoch


def emit_progress(**record: t.Any):
    """Log a one-line JSON progress record"""
    logging.getLogger(PROGRESS_LOGGER).info(json.dumps(record, sort_keys=True))


def make_optimizer(model: nn.Module, config: RunConfig, lr: float) -> torch.optim.Adam:
    return torch.optim.Adam(
        model.parameters(),
        lr=lr,
        betas=tuple(config.optim.betas),
        eps=config.optim.eps,
        weight_decay=0.0,
    )


def _set_lr(optimizer: torch.optim.Optimizer, lr: float):
    for group in optimizer.param_groups:
        group["lr"] = lr


def _seed_epoch(seed: int, stage: Stage, epoch: int):
    # Dropout draws from the global torch RNG; reseeding per epoch keeps
    # resumed runs on the same stream as uninterrupted ones
    stage_code = 0 if stage == Stage.PRETRAIN else 1
    state = np.random.SeedSequence(
        [seed, stage_code, epoch, int(Purpose.DROPOUT)]
    ).generate_state(1)
    torch.manual_seed(int(state[0]))


def _apply_update(
    model: nn.Module,
    optimizer: torch.optim.Optimizer,
    loss: LossValue,
    step: int,
    grad_clip: t.Optional[float],
):
    if not loss.is_finite():
        raise TrainingException(
            f"Loss became {loss.scalar}", step=step, lr=optimizer.param_groups[0]["lr"]
        )
    optimizer.zero_grad(set_to_none=True)
    loss.value.backward()
    if grad_clip is not None:
        nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
    optimizer.step()


def pretrain_step(
    model: PretrainModel,
    optimizer: torch.optim.Optimizer,
    inputs: torch.Tensor,
    plans: PlanBatch,
    step: int = 0,
    grad_clip: t.Optional[float] = None,
) -> LossValue:
    """
    One Stage I update: reconstruct the masked windows and regress the clean,
    unmasked inputs.
    """
    model.train()
    loss = pretrain_loss(model(inputs, plans), inputs)
    _apply_update(model, optimizer, loss, step, grad_clip)
    return loss


def finetune_step(
    model: STMOModel,
    optimizer: torch.optim.Optimizer,
    inputs: torch.Tensor,
    target_center: torch.Tensor,
    targets_all: torch.Tensor,
    lam: float = 1.0,
    step: int = 0,
    grad_clip: t.Optional[float] = None,
) -> LossValue:
    """One Stage II update on the combined single- and multi-frame loss"""
    model.train()
    y_center, y_all = model(inputs)
    loss = total_loss(
        loss_single(y_center, target_center), loss_multiple(y_all, targets_all), lam
    )
    _apply_update(model, optimizer, loss, step, grad_clip)
    return loss


def flip_poses(poses: torch.Tensor, skeleton: Skeleton) -> torch.Tensor:
    """Torch counterpart of posedata.sequences.horizontal_flip"""
    flipped = poses.clone()
    flipped[..., 0] = -flipped[..., 0]
    permutation = torch.as_tensor(skeleton.flip_permutation(), dtype=torch.long)
    return flipped[..., permutation, :]


@torch.no_grad()
def predict_center(
    model: STMOModel,
    inputs: torch.Tensor,
    skeleton: t.Optional[Skeleton] = None,
    flip: bool = False,
) -> torch.Tensor:
    """
    Center-frame 3D poses (B, J, 3). With flip, the prediction on the mirrored
    input is mirrored back and averaged with the plain one.
    """
    model.eval()
    prediction = model(inputs)[0]
    if flip:
        mirrored = model(flip_poses(inputs, skeleton))[0]
        prediction = (prediction + flip_poses(mirrored, skeleton)) / 2.0
    return prediction


def evaluate(
    model: STMOModel,
    sequences: t.Sequence[PoseSequence],
    skeleton: Skeleton,
    stride: int = 1,
    center_stride: int = 1,
    flip: bool = True,
    noise_sigma: float = 0.0,
    shuffle: bool = False,
    seed: int = 0,
    include_root: bool = True,
) -> MetricReport:
    """
    Metrics of the center-frame predictions over every window of the
    sequences. Noise and frame shuffling perturb the 2D inputs only.
    The result does not depend on the order of the sequences.
    """
    ordered = canonical_order(sequences)
    if noise_sigma > 0:
        ordered = [
            add_gaussian_noise(seq, noise_sigma, sample_rng(seed, index, Purpose.NOISE))
            for index, seq in enumerate(ordered)
        ]
    dataset = WindowDataset(
        ordered,
        skeleton,
        model.config.n_frames,
        stride=stride,
        center_stride=center_stride,
        seed=seed,
        require_targets=True,
    )

    predictions, targets, actions = [], [], []
    for start in range(0, len(dataset), EVAL_BATCH_SIZE):
        indices = range(start, min(start + EVAL_BATCH_SIZE, len(dataset)))
        windows = [dataset.window(index) for index in indices]
        if shuffle:
            windows = [
                shuffle_frames(window, sample_rng(seed, index, Purpose.SHUFFLE))
                for index, window in zip(indices, windows)
            ]
        inputs = torch.tensor(
            np.stack([window.inputs for window in windows]), dtype=torch.float32
        )
        predictions.append(
            predict_center(model, inputs, skeleton, flip).double().numpy()
        )
        targets.extend(window.target_center for window in windows)
        actions.extend(
            dataset.sequences[dataset.centers[index][0]].action for index in indices
        )

    return compute_report(
        np.concatenate(predictions),
        np.stack(targets),
        actions,
        include_root=include_root,
        root_index=skeleton.root_index,
    )


@torch.no_grad()
def reconstruction_error(
    model: PretrainModel, dataset: WindowDataset, batch_size: int = EVAL_BATCH_SIZE
) -> float:
    """Mean per-window reconstruction MSE on masked windows of a dataset"""
    model.eval()
    errors = []
    for batch in make_loader(dataset, batch_size, shuffle=False, epoch=0):
        recon = model(batch["inputs"], plans_of(batch))
        errors.extend(((recon - batch["inputs"]) ** 2).mean(dim=(1, 2, 3)).tolist())
    return math.fsum(errors) / len(errors)


class RunDirectory:
    """Files of one training run"""

    def __init__(self, path: str, fresh: bool = True):
        self.path = path
        os.makedirs(os.path.join(path, "checkpoints"), exist_ok=True)
        if fresh or not os.path.exists(self.metrics_path):
            with open(self.metrics_path, "w", encoding="utf-8", newline="") as file:
                csv.writer(file).writerow(METRICS_HEADER)

    @property
    def config_path(self) -> str:
        return os.path.join(self.path, "config.json")

    @property
    def metrics_path(self) -> str:
        return os.path.join(self.path, "metrics.csv")

    @property
    def best_path(self) -> str:
        return os.path.join(self.path, "best.ckpt")

    @property
    def report_path(self) -> str:
        return os.path.join(self.path, "report.json")

    @property
    def per_action_path(self) -> str:
        return os.path.join(self.path, "per_action.csv")

    def checkpoint_path(self, epoch: int) -> str:
        return os.path.join(self.path, "checkpoints", f"epoch{epoch}.ckpt")

    def write_config(self, config: RunConfig):
        with open(self.config_path, "w", encoding="utf-8") as file:
            file.write(config.model_dump_json(indent=2))

    def append_metrics(
        self,
        epoch: int,
        split: str,
        report: t.Optional[MetricReport] = None,
        loss: t.Optional[float] = None,
    ):
        def cell(value: t.Optional[float]) -> str:
            return "" if value is None else f"{value:.6f}"

        values = [None] * 4
        if report is not None:
            values = [report.mpjpe, report.p_mpjpe, report.pck150, report.auc]
        with open(self.metrics_path, "a", encoding="utf-8", newline="") as file:
            csv.writer(file).writerow(
                [epoch, split] + [cell(value) for value in values] + [cell(loss)]
            )


def _resolve_data(
    config: RunConfig,
    stage: Stage,
    train: t.Optional[t.Sequence[PoseSequence]],
    val: t.Optional[t.Sequence[PoseSequence]],
    skeleton: t.Optional[Skeleton],
) -> t.Tuple[t.List[PoseSequence], t.List[PoseSequence], Skeleton]:
    cameras = (
        config.data.pretrain_cameras
        if stage == Stage.PRETRAIN
        else config.data.finetune_cameras
    )
    if train is None:
        if config.data.train is None:
            raise TrainingException("The run config names no training dataset")
        train = load_dataset(config.data.train)
        skeleton = skeleton or load_skeleton(config.data.train)
        train = filter_sequences(train, cameras=cameras)
    if val is None and config.data.val is not None:
        val = filter_sequences(load_dataset(config.data.val), config.data.eval_cameras)
    skeleton = skeleton or Skeleton.h36m17()

    if skeleton.num_joints != config.model.n_joints:
        raise TrainingException(
            f"The model expects {config.model.n_joints} joints, the data has"
            f" {skeleton.num_joints}"
        )
    if not train:
        raise TrainingException(f"No training sequences left for cameras {cameras}")
    return list(train), list(val) if val else list(train), skeleton


def _resume(
    path: str, model: nn.Module, optimizer: torch.optim.Optimizer, stage: Stage
) -> CheckpointMeta:
    meta = read_meta(path)
    if meta.stage != stage:
        raise TrainingException(
            f"Cannot resume a {stage.value} run from a {meta.stage.value} checkpoint"
        )
    load_parameters(model, read_pstm(path))
    load_optimizer_state(path, model, optimizer)
    logging.info(f"Resuming {stage.value} from {path} at epoch {meta.epoch}")
    return meta


def run_stage1(
    config: RunConfig,
    run_dir: str,
    train: t.Optional[t.Sequence[PoseSequence]] = None,
    val: t.Optional[t.Sequence[PoseSequence]] = None,
    skeleton: t.Optional[Skeleton] = None,
    resume: t.Optional[str] = None,
) -> str:
    """
    Masked pose modeling pre-training. Training windows are re-masked every
    epoch; validation windows keep one fixed set of masks.
    :return: Path of the checkpoint with the lowest validation reconstruction error
    """
    stage = Stage.PRETRAIN
    train, val, skeleton = _resolve_data(config, stage, train, val, skeleton)
    optim = config.optim
    run = RunDirectory(run_dir, fresh=resume is None)
    run.write_config(config)

    model = build_model(config.model, stage, seed=config.seed)
    optimizer = make_optimizer(model, config, optim.lr_stage1)
    dataset = WindowDataset(
        train,
        skeleton,
        config.model.n_frames,
        stride=config.data.stride,
        center_stride=config.data.train_center_stride,
        seed=config.seed,
        flip=config.data.flip_train,
        mask_config=config.masking,
    )
    val_dataset = WindowDataset(
        val,
        skeleton,
        config.model.n_frames,
        stride=config.data.stride,
        center_stride=config.data.eval_center_stride,
        seed=config.seed,
        mask_config=config.masking,
    )

    def meta(epoch: int, step: int, best: t.Optional[float]) -> CheckpointMeta:
        return CheckpointMeta(
            stage=stage,
            model=config.model,
            epoch=epoch,
            step=step,
            seed=config.seed,
            best_metric=best,
            learning_rate=lr_schedule(epoch, optim.lr_stage1, optim.lr_decay),
            stride=config.data.stride,
        )

    start_epoch, step, best = 0, 0, None
    if resume is not None:
        saved = _resume(resume, model, optimizer, stage)
        start_epoch, step, best = saved.epoch, saved.step, saved.best_metric
    else:
        best = reconstruction_error(model, val_dataset)
        run.append_metrics(0, "val", loss=best)
        save_checkpoint(run.checkpoint_path(0), model, meta(0, 0, best), optimizer)
        save_checkpoint(run.best_path, model, meta(0, 0, best))
        emit_progress(stage=stage.value, epoch=0, step=0, val_loss=best)

    for epoch in range(start_epoch, optim.epochs_stage1):
        lr = lr_schedule(epoch, optim.lr_stage1, optim.lr_decay)
        _set_lr(optimizer, lr)
        _seed_epoch(config.seed, stage, epoch)
        losses = []
        loader = make_loader(
            dataset, optim.batch_size, shuffle=True, epoch=epoch, workers=config.workers
        )
        for batch in loader:
            loss = pretrain_step(
                model,
                optimizer,
                batch["inputs"],
                plans_of(batch),
                step,
                optim.grad_clip,
            )
            losses.append(loss.scalar * len(batch["inputs"]))
            step += 1
        train_loss = math.fsum(losses) / len(dataset)
        run.append_metrics(epoch + 1, "train", loss=train_loss)
        record = dict(
            stage=stage.value, epoch=epoch + 1, step=step, lr=lr, loss=train_loss
        )

        if (epoch + 1) % config.eval_every == 0 or epoch + 1 == optim.epochs_stage1:
            val_loss = reconstruction_error(model, val_dataset)
            run.append_metrics(epoch + 1, "val", loss=val_loss)
            record["val_loss"] = val_loss
            if best is None or val_loss < best:
                best = val_loss
                save_checkpoint(run.best_path, model, meta(epoch + 1, step, best))
        save_checkpoint(
            run.checkpoint_path(epoch + 1),
            model,
            meta(epoch + 1, step, best),
            optimizer,
        )
        emit_progress(**record)

    return run.best_path


def _transfer_from(path: str, model: STMOModel):
    meta = read_meta(path)
    if meta.stage != Stage.PRETRAIN:
        raise TransferException(f"{path} is a {meta.stage.value} checkpoint")
    transfer_encoder(read_pstm(path), model)


def run_stage2(
    config: RunConfig,
    run_dir: str,
    pretrained: t.Optional[str] = None,
    train: t.Optional[t.Sequence[PoseSequence]] = None,
    val: t.Optional[t.Sequence[PoseSequence]] = None,
    skeleton: t.Optional[Skeleton] = None,
    resume: t.Optional[str] = None,
) -> t.Tuple[str, MetricReport]:
    """
    Fine-tune the full lifting model, starting from a pre-trained encoder when
    one is given. The checkpoint with the lowest pooled validation MPJPE is
    kept as best.ckpt and its report is written next to it.
    :return: Path of the best checkpoint and its report
    """
    stage = Stage.FINETUNE
    train, val, skeleton = _resolve_data(config, stage, train, val, skeleton)
    optim = config.optim
    run = RunDirectory(run_dir, fresh=resume is None)
    run.write_config(config)

    model = build_model(config.model, stage, seed=config.seed)
    if pretrained is not None and resume is None:
        _transfer_from(pretrained, model)
    optimizer = make_optimizer(model, config, optim.lr_stage2)
    dataset = WindowDataset(
        train,
        skeleton,
        config.model.n_frames,
        stride=config.data.stride,
        center_stride=config.data.train_center_stride,
        seed=config.seed,
        flip=config.data.flip_train,
        require_targets=True,
    )

    def validate() -> MetricReport:
        return evaluate(
            model,
            val,
            skeleton,
            stride=config.data.stride,
            center_stride=config.data.eval_center_stride,
            flip=config.data.flip_eval,
            seed=config.seed,
        )

    def meta(epoch: int, step: int, best: t.Optional[float]) -> CheckpointMeta:
        return CheckpointMeta(
            stage=stage,
            model=config.model,
            epoch=epoch,
            step=step,
            seed=config.seed,
            best_metric=best,
            learning_rate=lr_schedule(epoch, optim.lr_stage2, optim.lr_decay),
            stride=config.data.stride,
        )

    def keep_best(report: MetricReport, epoch: int, step: int):
        save_checkpoint(run.best_path, model, meta(epoch, step, report.mpjpe))
        with open(run.report_path, "w", encoding="utf-8") as file:
            file.write(report.model_dump_json(indent=2))
        per_action_csv(report, run.per_action_path)

    start_epoch, step, best = 0, 0, None
    if resume is not None:
        saved = _resume(resume, model, optimizer, stage)
        start_epoch, step, best = saved.epoch, saved.step, saved.best_metric
    else:
        report = validate()
        best = report.mpjpe
        run.append_metrics(0, "val", report=report)
        save_checkpoint(run.checkpoint_path(0), model, meta(0, 0, best), optimizer)
        keep_best(report, 0, 0)
        emit_progress(stage=stage.value, epoch=0, step=0, val_mpjpe=report.mpjpe)

    for epoch in range(start_epoch, optim.epochs_stage2):
        lr = lr_schedule(epoch, optim.lr_stage2, optim.lr_decay)
        _set_lr(optimizer, lr)
        _seed_epoch(config.seed, stage, epoch)
        losses = []
        loader = make_loader(
            dataset, optim.batch_size, shuffle=True, epoch=epoch, workers=config.workers
        )
        for batch in loader:
            loss = finetune_step(
                model,
                optimizer,
                batch["inputs"],
                batch["target_center"],
                batch["targets_all"],
                optim.lam,
                step,
                optim.grad_clip,
            )
            losses.append(loss.scalar * len(batch["inputs"]))
            step += 1
        train_loss = math.fsum(losses) / len(dataset)
        run.append_metrics(epoch + 1, "train", loss=train_loss)
        record = dict(
            stage=stage.value, epoch=epoch + 1, step=step, lr=lr, loss=train_loss
        )

        if (epoch + 1) % config.eval_every == 0 or epoch + 1 == optim.epochs_stage2:
            report = validate()
            run.append_metrics(epoch + 1, "val", report=report)
            record["val_mpjpe"] = report.mpjpe
            if best is None or report.mpjpe < best:
                best = report.mpjpe
                keep_best(report, epoch + 1, step)
        save_checkpoint(
            run.checkpoint_path(epoch + 1),
            model,
            meta(epoch + 1, step, best),
            optimizer,
        )
        emit_progress(**record)

    if not os.path.exists(run.report_path):
        # Resumed into a fresh directory without ever improving on the saved best
        keep_best(validate(), optim.epochs_stage2, step)
    with open(run.report_path, "r", encoding="utf-8") as file:
        return run.best_path, MetricReport.model_validate_json(file.read())
