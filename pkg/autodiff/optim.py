"""
optim.py - Adam over the unconstrained parameter pre-images
"""
from dataclasses import dataclass, field
from typing import Dict, Iterable, List

import torch

from utils import config
from utils.errors import ConfigurationError


@dataclass
class AdamState:
    """First/second moments, step count and hyperparameters of one Adam run."""

    params: List[torch.nn.Parameter]
    lr: float = field(default_factory=lambda: config.LEARNING_RATE)
    beta1: float = field(default_factory=lambda: config.ADAM_BETAS[0])
    beta2: float = field(default_factory=lambda: config.ADAM_BETAS[1])
    eps: float = field(default_factory=lambda: config.ADAM_EPS)
    step_count: int = 0

    def __post_init__(self):
        self.params = list(self.params)
        self.optimizer = torch.optim.Adam(self.params, lr=self.lr, betas=(self.beta1, self.beta2), eps=self.eps)

    def moments(self, param: torch.nn.Parameter):
        """(first, second) moment tensors of `param`, zeros before the first step."""
        state = self.optimizer.state.get(param, {})
        if "exp_avg" not in state:
            return torch.zeros_like(param), torch.zeros_like(param)
        return state["exp_avg"], state["exp_avg_sq"]

    def zero_grad(self) -> None:
        self.optimizer.zero_grad(set_to_none=True)

    def export(self, names: Dict[torch.nn.Parameter, str]) -> Dict[str, torch.Tensor]:
        """Moment tensors keyed by parameter name, for checkpointing."""
        tensors = {}
        for param in self.params:
            first, second = self.moments(param)
            tensors[f"{names[param]}.exp_avg"] = first.detach().clone()
            tensors[f"{names[param]}.exp_avg_sq"] = second.detach().clone()
        return tensors

    def restore(self, names: Dict[torch.nn.Parameter, str], tensors: Dict[str, torch.Tensor], step_count: int) -> None:
        self.step_count = int(step_count)
        if self.step_count == 0:
            return
        for param in self.params:
            first = tensors[f"{names[param]}.exp_avg"]
            second = tensors[f"{names[param]}.exp_avg_sq"]
            if first.shape != param.shape or second.shape != param.shape:
                raise ConfigurationError(f"optimizer moments for {names[param]} do not match parameter shape")
            self.optimizer.state[param] = {
                "step": torch.tensor(float(self.step_count), dtype=torch.float32),
                "exp_avg": first.clone().to(param.dtype),
                "exp_avg_sq": second.clone().to(param.dtype),
            }


def adam_step(params: Iterable[torch.nn.Parameter], state: AdamState) -> None:
    """Apply one Adam update to the pre-images in `params` (must belong to `state`)."""
    owned = {id(p) for p in state.params}
    for param in params:
        if id(param) not in owned:
            raise ConfigurationError("parameter is not tracked by this AdamState")
        if param.grad is not None and param.grad.shape != param.shape:
            raise ConfigurationError(f"gradient shape {tuple(param.grad.shape)} != {tuple(param.shape)}")
    state.optimizer.step()
    state.step_count += 1
