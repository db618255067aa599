"""
Building blocks: multi-head self-attention with optional recording, the SEM
MLP block, pre-norm Transformer encoder layers and the strided layers of the
many-to-one frame aggregator.
"""

import typing as t

import torch
from torch import nn

from stmo.config import ModelInputException


class MultiHeadAttention(nn.Module):
    """Scaled dot-product self-attention over the frame axis of (B, T, d)"""

    def __init__(self, d_model: int, heads: int, dropout: float = 0.0):
        super().__init__()
        self.heads = heads
        self.head_dim = d_model // heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.proj = nn.Linear(d_model, d_model)
        self.attn_drop = nn.Dropout(dropout)
        self.proj_drop = nn.Dropout(dropout)
        # Attention probabilities of every forward pass while recording
        self.recorded: t.Optional[t.List[torch.Tensor]] = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        batch, length, d_model = x.shape
        qkv = self.qkv(x).reshape(batch, length, 3, self.heads, self.head_dim)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-2, -1) * self.head_dim**-0.5
        attn = scores.softmax(dim=-1)
        if self.recorded is not None:
            self.recorded.append(attn.detach().cpu())
        attn = self.attn_drop(attn)
        out = (attn @ v).transpose(1, 2).reshape(batch, length, d_model)
        return self.proj_drop(self.proj(out))


class FeedForward(nn.Module):
    def __init__(self, d_model: int, hidden: int, dropout: float = 0.0):
        super().__init__()
        self.lin1 = nn.Linear(d_model, hidden)
        self.act = nn.GELU()
        self.drop1 = nn.Dropout(dropout)
        self.lin2 = nn.Linear(hidden, d_model)
        self.drop2 = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.drop2(self.lin2(self.drop1(self.act(self.lin1(x)))))


class MLPBlock(nn.Module):
    """Residual pre-norm MLP sub-block of the spatial encoder"""

    def __init__(self, d_model: int, hidden: int, dropout: float = 0.0):
        super().__init__()
        self.norm = nn.LayerNorm(d_model)
        self.lin1 = nn.Linear(d_model, hidden)
        self.act = nn.GELU()
        self.drop1 = nn.Dropout(dropout)
        self.lin2 = nn.Linear(hidden, d_model)
        self.drop2 = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.drop1(self.act(self.lin1(self.norm(x))))
        return x + self.drop2(self.lin2(y))


class EncoderLayer(nn.Module):
    """Pre-norm Transformer encoder layer"""

    def __init__(self, d_model: int, heads: int, hidden: int, dropout: float = 0.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, heads, dropout)
        self.norm2 = nn.LayerNorm(d_model)
        self.ffn = FeedForward(d_model, hidden, dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.ffn(self.norm2(x))


class StridedConvFeedForward(nn.Module):
    """
    Feed-forward whose second linear map is a temporal convolution with
    kernel size equal to its stride, so every M frames merge into one.
    """

    def __init__(self, d_model: int, hidden: int, kernel: int, dropout: float = 0.0):
        super().__init__()
        self.kernel = kernel
        self.conv1 = nn.Conv1d(d_model, hidden, kernel_size=1)
        self.act = nn.GELU()
        self.drop1 = nn.Dropout(dropout)
        self.conv2 = nn.Conv1d(hidden, d_model, kernel_size=kernel, stride=kernel)
        self.drop2 = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] % self.kernel != 0:
            raise ModelInputException(
                f"Sequence of length {x.shape[1]} cannot be strided by {self.kernel}"
            )
        y = self.drop1(self.act(self.conv1(x.transpose(1, 2))))
        return self.drop2(self.conv2(y)).transpose(1, 2)


class StridedEncoderLayer(nn.Module):
    """
    Transformer layer whose feed-forward is the strided convolution. The
    temporal length shrinks by the kernel size, so only the attention
    sub-layer has a residual connection.
    """

    def __init__(
        self, d_model: int, heads: int, hidden: int, kernel: int, dropout: float = 0.0
    ):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, heads, dropout)
        self.norm2 = nn.LayerNorm(d_model)
        self.ffn = StridedConvFeedForward(d_model, hidden, kernel, dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return self.ffn(self.norm2(x))


class PositionalTransformer(nn.Module):
    """
    Stack of encoder layers preceded by a learnable positional table with one
    slot per window position. Tokens can be placed at arbitrary positions,
    which is how the unmasked frames keep their original slots.
    """

    def __init__(
        self,
        length: int,
        depth: int,
        d_model: int,
        heads: int,
        hidden: int,
        dropout: float = 0.0,
    ):
        super().__init__()
        self.pos_embed = nn.Parameter(torch.zeros(length, d_model))
        self.layers = nn.ModuleList(
            [EncoderLayer(d_model, heads, hidden, dropout) for _ in range(depth)]
        )
        self.norm = nn.LayerNorm(d_model)

    def forward(
        self, x: torch.Tensor, positions: t.Optional[torch.Tensor] = None
    ) -> torch.Tensor:
        length = x.shape[1]
        if positions is None:
            if length > self.pos_embed.shape[0]:
                raise ModelInputException(
                    f"Sequence of length {length} exceeds the positional table of"
                    f" {self.pos_embed.shape[0]} slots"
                )
            x = x + self.pos_embed[:length]
        else:
            if positions.numel() and int(positions.max()) >= self.pos_embed.shape[0]:
                raise ModelInputException(
                    f"Position {int(positions.max())} exceeds the positional table"
                )
            x = x + self.pos_embed[positions]
        for layer in self.layers:
            x = layer(x)
        return self.norm(x)
