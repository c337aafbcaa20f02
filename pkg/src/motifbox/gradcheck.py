"""Central finite-difference gradient checking for small networks.

Leaky ReLU and max pooling are only piecewise smooth. When a +/-h perturbation
moves some activation across a kink (a sign flip at a leaky unit, or a changed
argmax inside a pooling window), the central difference no longer estimates the
derivative at the base point. Those coordinates are detected exactly by comparing
activation patterns and reported as skipped rather than silently averaged in.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    n_skipped: int
    seconds: float
    worst: tuple = ()
    errors: list = field(default_factory=list, repr=False)


class _KinkRecorder:
    """Collects the activation pattern of every piecewise-linear unit during a forward."""

    def __init__(self, model: nn.Module):
        self.pattern: list[torch.Tensor] = []
        self._handles = []
        for m in model.modules():
            if isinstance(m, nn.LeakyReLU):
                self._handles.append(m.register_forward_hook(self._leaky))
            elif isinstance(m, nn.MaxPool2d):
                self._handles.append(m.register_forward_hook(self._pool))

    def _leaky(self, mod, inp, out):
        self.pattern.append(inp[0].detach() > 0)

    def _pool(self, mod, inp, out):
        _, idx = F.max_pool2d(inp[0].detach(), mod.kernel_size, mod.stride, mod.padding, mod.dilation,
                              ceil_mode=mod.ceil_mode, return_indices=True)
        self.pattern.append(idx)

    def take(self) -> list[torch.Tensor]:
        p, self.pattern = self.pattern, []
        return p

    def close(self):
        for h in self._handles:
            h.remove()


def _same(a, b) -> bool:
    return len(a) == len(b) and all(torch.equal(x, y) for x, y in zip(a, b))


def finite_difference_check(model: nn.Module, loss_fn: Callable[[nn.Module], torch.Tensor], h: float = 1e-5,
                            max_coords: int | None = None, seed: int = 0, floor: float = 1e-6) -> GradCheckReport:
    """Compare autograd against central differences for (a sample of) every parameter.

    ``loss_fn(model)`` must return a scalar. The model is converted to float64 in place.
    Relative error is |a - fd| / max(|a|, |fd|, floor).
    """
    t0 = time.perf_counter()
    model.double()
    rec = _KinkRecorder(model)
    try:
        model.zero_grad(set_to_none=True)
        loss_fn(model).backward()
        base_pattern = rec.take()
        coords = [(name, i) for name, p in model.named_parameters() for i in range(p.numel())]
        if max_coords is not None and max_coords < len(coords):
            pick = np.random.default_rng(seed).choice(len(coords), size=max_coords, replace=False)
            coords = [coords[k] for k in sorted(pick)]
        params = dict(model.named_parameters())
        worst, worst_at, n_skip, errors = 0.0, (), 0, []
        with torch.no_grad():
            for name, i in coords:
                flat = params[name].data.view(-1)
                orig = flat[i].item()
                flat[i] = orig + h
                up = loss_fn(model).item()
                pat_up = rec.take()
                flat[i] = orig - h
                down = loss_fn(model).item()
                pat_down = rec.take()
                flat[i] = orig
                if not (_same(pat_up, base_pattern) and _same(pat_down, base_pattern)):
                    n_skip += 1
                    continue
                fd = (up - down) / (2 * h)
                an = params[name].grad.view(-1)[i].item()
                err = abs(an - fd) / max(abs(an), abs(fd), floor)
                errors.append(err)
                if err > worst:
                    worst, worst_at = err, (name, i, an, fd)
    finally:
        rec.close()
    return GradCheckReport(worst, len(errors), n_skip, time.perf_counter() - t0, worst_at, errors)
