"""Single-use gradient tape over a module's parameters.

Recording and reverse replay are delegated to torch autograd; the tape owns
the contract that a recording is replayed at most once.
"""

from __future__ import annotations

import torch
from torch import nn


class TapeError(RuntimeError):
    pass


class GradTape:
    """Record a forward pass inside ``with tape:``, then call :func:`backward` once."""

    def __init__(self, params):
        if isinstance(params, nn.Module):
            params = dict(params.named_parameters())
        elif not isinstance(params, dict):
            params = {str(i): p for i, p in enumerate(params)}
        self.params = {k: p for k, p in params.items() if p.requires_grad}
        self._recorded = False
        self._replayed = False
        self._grad_mode = None

    def __enter__(self):
        self._grad_mode = torch.is_grad_enabled()
        torch.set_grad_enabled(True)
        self._recorded = True
        self._replayed = False
        return self

    def __exit__(self, *exc):
        torch.set_grad_enabled(self._grad_mode)
        return False

    def gradients(self, loss: torch.Tensor) -> dict[str, torch.Tensor]:
        if not self._recorded:
            raise TapeError("nothing recorded: run the forward pass inside the tape")
        if self._replayed:
            raise TapeError("tape already replayed; record the forward pass again")
        if loss.numel() != 1:
            raise TapeError("loss must be a scalar")
        self._replayed = True
        names = list(self.params)
        tensors = [self.params[n] for n in names]
        if not loss.requires_grad:
            return {n: torch.zeros_like(t) for n, t in zip(names, tensors)}
        grads = torch.autograd.grad(loss, tensors, allow_unused=True)
        return {n: torch.zeros_like(t) if g is None else g for n, t, g in zip(names, tensors, grads)}


def backward(tape: GradTape, loss: torch.Tensor) -> dict[str, torch.Tensor]:
    return tape.gradients(loss)
