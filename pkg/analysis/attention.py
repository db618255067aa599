"""
Export of the attention maps of one window: one row-stochastic matrix per
(module, layer, head) for TEM, the Stage I decoder and MOFA.
"""

import dataclasses
import typing as t

import numpy as np
import torch
from torch import nn

from masking.masking import MaskPlan
from stmo.model import AttentionRecord, PlanBatch, PretrainModel, record_attention

ROW_SUM_TOLERANCE = 1e-5


# Custom Exceptions
class AttentionExportException(Exception):
    """Exception raised when attention maps cannot be exported"""


@dataclasses.dataclass(frozen=True)
class AttentionDump:
    """
    Attention weights of one head, rows are queries and columns keys. Decoder
    dumps carry the number of unmasked frames a: the first a tokens are the
    encoded frames, the remaining b the temporal padding embeddings.
    """

    stage: str
    module: str
    layer: int
    head: int
    weights: np.ndarray
    boundary: t.Optional[int] = None

    @property
    def name(self) -> str:
        return f"{self.stage}_{self.module}_L{self.layer}_H{self.head}"

    def blocks(self) -> t.Dict[str, np.ndarray]:
        """The four blocks split at the encoded/padding boundary"""
        if self.boundary is None:
            raise AttentionExportException(f"{self.name} has no partition boundary")
        a = self.boundary
        return {
            "D1": self.weights[:a, :a],
            "D2": self.weights[:a, a:],
            "D3": self.weights[a:, :a],
            "D4": self.weights[a:, a:],
        }


def dumps_from_records(
    records: t.Sequence[AttentionRecord],
    stage: str,
    decoder_boundary: t.Optional[int] = None,
) -> t.List[AttentionDump]:
    """
    Split recorded attention of a single-window forward pass into per-head
    dumps.
    """
    if not records:
        raise AttentionExportException(
            "No attention was recorded, run the forward pass inside record_attention"
        )
    dumps = []
    for record in records:
        weights = record.weights.double().numpy()
        if weights.shape[0] != 1:
            raise AttentionExportException(
                "Expected the attention of one window, got a batch of"
                f" {weights.shape[0]}"
            )
        for head in range(weights.shape[1]):
            matrix = weights[0, head]
            worst = float(np.max(np.abs(matrix.sum(axis=-1) - 1.0)))
            if worst > ROW_SUM_TOLERANCE:
                raise AttentionExportException(
                    f"Rows of {record.module} layer {record.layer} head {head} are"
                    f" off from 1 by {worst}"
                )
            dumps.append(
                AttentionDump(
                    stage=stage,
                    module=record.module,
                    layer=record.layer,
                    head=head,
                    weights=matrix,
                    boundary=decoder_boundary if record.module == "decoder" else None,
                )
            )
    return dumps


def export_attention(
    model: nn.Module, window: t.Any, plan: t.Optional[MaskPlan] = None
) -> t.List[AttentionDump]:
    """
    Run one window (N×J×2) through the model with attention recording on.
    The Stage I model takes an optional mask plan, the Stage II model none.
    """
    config = model.config
    inputs = torch.as_tensor(np.asarray(window), dtype=torch.float32).unsqueeze(0)
    model.eval()
    boundary = None
    with torch.no_grad(), record_attention(model) as records:
        if isinstance(model, PretrainModel):
            plan = plan or MaskPlan.empty(config.n_frames)
            boundary = plan.num_unmasked
            model(inputs, PlanBatch.from_plans([plan], config.n_joints))
        else:
            if plan is not None and not plan.is_empty:
                raise AttentionExportException(
                    "The fine-tuning model does not take a mask plan"
                )
            model(inputs)
    return dumps_from_records(records, model.stage.value, boundary)
