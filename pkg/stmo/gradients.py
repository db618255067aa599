"""
Reverse-mode gradients keyed by parameter name, and a central finite
difference checker that verifies them on a float64 copy of the model.
"""

import copy
import dataclasses
import typing as t

import numpy as np
import torch
from torch import nn


def backward(loss: torch.Tensor, model: nn.Module) -> t.Dict[str, torch.Tensor]:
    """
    Gradients of a scalar loss with respect to every parameter of the model.
    Parameters the loss does not depend on get a zero gradient.
    """
    named = list(model.named_parameters())
    grads = torch.autograd.grad(
        loss, [param for _, param in named], allow_unused=True
    )
    return {
        name: torch.zeros_like(param) if grad is None else grad
        for (name, param), grad in zip(named, grads)
    }


@dataclasses.dataclass(frozen=True)
class GradientCheck:
    name: str
    index: int
    analytic: float
    numeric: float

    @property
    def relative_error(self) -> float:
        scale = max(abs(self.analytic), abs(self.numeric), 1e-6)
        return abs(self.analytic - self.numeric) / scale


def check_gradients(
    model: nn.Module,
    loss_fn: t.Callable[[nn.Module], torch.Tensor],
    num_checks: int = 100,
    step: float = 1e-3,
    rng: t.Optional[np.random.Generator] = None,
    include: t.Sequence[str] = (),
) -> t.List[GradientCheck]:
    """
    Compare analytic gradients with central differences at randomly chosen
    parameter coordinates. Runs on a float64 copy in eval mode; loss_fn gets
    that copy and must cast its inputs to the copy's dtype.
    :param include: Parameters checked at every coordinate on top of the random
        picks
    """
    rng = rng or np.random.default_rng(0)
    shadow = copy.deepcopy(model).double().eval()
    analytic = backward(loss_fn(shadow), shadow)

    named = list(shadow.named_parameters())
    sizes = np.array([param.numel() for _, param in named])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    picks = set(
        int(i)
        for i in rng.choice(
            offsets[-1], size=min(num_checks, offsets[-1]), replace=False
        )
    )
    names = [name for name, _ in named]
    for name in include:
        if name not in names:
            raise KeyError(f"Model has no parameter '{name}'")
        which = names.index(name)
        picks.update(range(int(offsets[which]), int(offsets[which + 1])))

    checks = []
    with torch.no_grad():
        for flat_index in sorted(picks):
            which = int(np.searchsorted(offsets, flat_index, side="right") - 1)
            name, param = named[which]
            index = flat_index - int(offsets[which])
            values = param.view(-1)
            original = values[index].item()

            values[index] = original + step
            loss_plus = loss_fn(shadow).item()
            values[index] = original - step
            loss_minus = loss_fn(shadow).item()
            values[index] = original

            checks.append(
                GradientCheck(
                    name=name,
                    index=index,
                    analytic=analytic[name].reshape(-1)[index].item(),
                    numeric=(loss_plus - loss_minus) / (2.0 * step),
                )
            )
    return checks
