"""Gradient balancing for multi-loss training.

Each balanced loss is backpropagated only as far as the model output; the
per-loss gradients are rescaled so every loss contributes a fixed, weight-
determined fraction of the gradient magnitude at that point, then the sum is
propagated through the rest of the model.  This decouples the choice of loss
weights from the natural scale of each term.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

EPS = 1e-8


class GradientBalancer:
    """Rescales per-loss gradients at the model output before backprop.

    For loss ``i`` with weight ``w_i`` the effective gradient is::

        g~_i = R * (w_i / sum_j w_j) * g_i / <||g_i||_2>

    where ``<.>`` is a bias-corrected exponential moving average (decay
    ``beta``) of the gradient norm, updated *before* scaling each step, and
    ``R`` is the total gradient norm budget.  Each ``g~_i`` is a positive
    multiple of ``g_i`` so per-loss gradient directions are preserved.
    """

    def __init__(self, weights: dict, beta: float = 0.999,
                 reference_norm: float = 1.0, eps: float = EPS):
        if not weights:
            raise ValueError("balancer needs at least one weighted loss")
        for name, value in weights.items():
            if value < 0:
                raise ValueError(f"weight for {name!r} must be non-negative")
        self.weights = dict(weights)
        self.beta = float(beta)
        self.reference_norm = float(reference_norm)
        self.eps = float(eps)
        self.ema_norms = {name: 0.0 for name in weights}
        self.step_count = 0

    # -- persistence --------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "ema_norms": dict(self.ema_norms),
            "step_count": self.step_count,
        }

    def load_state_dict(self, state: dict):
        self.ema_norms = {name: float(v) for name, v in state["ema_norms"].items()}
        self.step_count = int(state["step_count"])

    # -- core ---------------------------------------------------------------

    def _per_loss_output_grads(self, losses: dict, output: Tensor) -> dict:
        """Gradient of each loss w.r.t. ``output``, leaving the rest intact.

        The output node is temporarily detached from its own inputs so the
        per-loss backward passes stop there instead of flowing into the
        model; the graph from output to each loss is untouched and reusable.
        """
        saved_parents, saved_bw = output._parents, output._bw
        saved_grad = output.grad
        output._parents, output._bw = (), None
        grads = {}
        try:
            for name, loss in losses.items():
                output.grad = None
                loss.backward()
                if output.grad is None:
                    raise ValueError(
                        f"loss {name!r} does not depend on the model output; "
                        f"it cannot be gradient-balanced"
                    )
                grads[name] = output.grad.copy()
        finally:
            output._parents, output._bw = saved_parents, saved_bw
            output.grad = saved_grad
        return grads

    def backward(self, losses: dict, output: Tensor, unbalanced=None) -> dict:
        """Backpropagate the balanced gradient sum through ``output``.

        ``losses`` maps names (which must have weights) to scalar loss
        tensors built on the live graph.  ``unbalanced`` losses (for example
        the quantizer commitment term) are backpropagated as-is afterwards,
        so their gradients accumulate unscaled.  Returns per-loss metrics:
        raw values, raw output-gradient norms, and effective norm fractions.
        """
        unknown = set(losses) - set(self.weights)
        if unknown:
            raise ValueError(f"no balancer weight for losses {sorted(unknown)}")
        if not losses:
            raise ValueError("balancer.backward needs at least one loss")

        grads = self._per_loss_output_grads(losses, output)

        self.step_count += 1
        correction = 1.0 - self.beta ** self.step_count
        norms = {}
        for name, grad in grads.items():
            norm = float(np.linalg.norm(grad.astype(np.float64, copy=False)))
            norms[name] = norm
            self.ema_norms[name] = (
                self.beta * self.ema_norms[name] + (1.0 - self.beta) * norm
            )

        total_weight = sum(self.weights[name] for name in losses)
        if total_weight <= 0:
            raise ValueError("balanced weights sum to zero")

        total_grad = np.zeros_like(output.data)
        effective_norms = {}
        for name, grad in grads.items():
            ema = self.ema_norms[name] / correction
            scale = (
                self.reference_norm
                * (self.weights[name] / total_weight)
                / max(ema, self.eps)
            )
            scaled = grad * output.data.dtype.type(scale)
            effective_norms[name] = float(np.linalg.norm(scaled))
            total_grad = total_grad + scaled

        output.backward(total_grad)

        metrics = {}
        for name, loss in losses.items():
            metrics[f"loss_{name}"] = float(loss.data)
            metrics[f"grad_norm_{name}"] = norms[name]
            metrics[f"grad_frac_{name}"] = (
                effective_norms[name] / max(self.reference_norm, self.eps)
            )
        if unbalanced:
            for name, loss in unbalanced.items():
                loss.backward()
                metrics[f"loss_{name}"] = float(loss.data)
        return metrics


def per_loss_output_grads(losses: dict, output: Tensor) -> dict:
    """Gradient of each scalar loss w.r.t. ``output``, as float64 arrays.

    Standalone diagnostic version of the balancer's internal probe: useful
    for inspecting how individual loss terms pull on the decoded audio
    (for example when chasing a non-finite loss).  The graph is left
    reusable; a loss that does not reach ``output`` raises ``ValueError``.
    """
    probe = GradientBalancer({name: 1.0 for name in losses})
    grads = probe._per_loss_output_grads(losses, output)
    return {name: g.astype(np.float64) for name, g in grads.items()}
