"""Central finite-difference checks of every differentiable op, in float64.

Each registered case builds random inputs and a function of them. Cases
with a non-scalar output are reduced to a scalar through a fixed random
projection, so every output entry contributes to the gradient.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from ghvit.errors import ConfigError, GradcheckFailed
from ghvit.graph import AdjacencyMode, gcn_positional_embedding, grid_operator
from ghvit.model import build_variant, forward, param_layout
from ghvit.nn import MLP_RATIO, AttentionParams, EncoderLayerParams, encoder_layer, mhsa
from ghvit.rng import Rng
from ghvit.tensor import (
    Tensor,
    backward,
    concat,
    conv2d_patchify,
    float64_mode,
    gelu,
    layer_norm,
    matmul,
    no_grad,
    relu,
    softmax,
)
from ghvit.train import cross_entropy

logger = logging.getLogger(__name__)

STEP = 1e-5
OP_TOLERANCE = 1e-5
MODEL_TOLERANCE = 1e-4
# central differences at STEP leave ~1e-11 of rounding noise per entry
ABS_TOLERANCE = 1e-8
_KINK_MARGIN = 1e-3

Inputs = dict[str, np.ndarray]
Fn = Callable[[dict[str, Tensor]], Tensor]


@dataclass(frozen=True)
class GradCase:
    name: str
    build: Callable[[Rng], tuple[Inputs, Fn]]
    tolerance: float = OP_TOLERANCE
    # sample this many entries per input instead of all of them
    max_entries: Optional[int] = None


@dataclass(frozen=True)
class GradcheckResult:
    op: str
    max_rel_error: float
    worst_input: str
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


GRADCHECKS: dict[str, GradCase] = {}


def register(name: str, *, tolerance: float = OP_TOLERANCE, max_entries: Optional[int] = None):
    def decorator(build: Callable[[Rng], tuple[Inputs, Fn]]):
        GRADCHECKS[name] = GradCase(name, build, tolerance, max_entries)
        return build

    return decorator


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst per-entry error once the absolute allowance is spent.

    An entry passes a tolerance ``tol`` when
    ``|a - n| <= ABS_TOLERANCE + tol * max(|a|, |n|)``; the value returned is
    the smallest ``tol`` every entry passes.
    """
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    numeric = np.asarray(numeric, dtype=np.float64).reshape(-1)
    excess = np.maximum(np.abs(analytic - numeric) - ABS_TOLERANCE, 0.0)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    ratio = np.divide(excess, scale, out=np.zeros_like(excess), where=excess > 0)
    return float(ratio.max(initial=0.0))


def _normal(rng: Rng, *shape: int, std: float = 1.0) -> np.ndarray:
    return rng.normal(shape, std, dtype=np.float64)


def _away_from_zero(rng: Rng, *shape: int) -> np.ndarray:
    magnitude = rng.uniform(shape, 0.1, 1.0, dtype=np.float64)
    sign = np.where(rng.uniform(shape, dtype=np.float64) < 0.5, -1.0, 1.0)
    return magnitude * sign


# ----------------------------------------------------------------------
# primitive ops
# ----------------------------------------------------------------------
@register("add")
def _add(rng: Rng):
    return {"a": _normal(rng, 2, 3, 4), "b": _normal(rng, 4)}, lambda t: t["a"] + t["b"]


@register("mul")
def _mul(rng: Rng):
    return {"a": _normal(rng, 3, 4), "b": _normal(rng, 3, 4)}, lambda t: t["a"] * t["b"] - t["b"]


@register("matmul")
def _matmul(rng: Rng):
    return {"a": _normal(rng, 2, 3, 4), "b": _normal(rng, 4, 5)}, lambda t: matmul(t["a"], t["b"])


@register("shape_ops")
def _shape_ops(rng: Rng):
    def fn(t):
        joined = concat([t["a"], t["b"]], axis=1)  # [2, 5, 3]
        moved = joined.transpose(0, 2, 1).reshape(6, 5)
        return moved.select(axis=1, index=2) + moved.sum(axis=0).broadcast_to((6, 5)).mean(axis=1)

    return {"a": _normal(rng, 2, 2, 3), "b": _normal(rng, 2, 3, 3)}, fn


@register("softmax")
def _softmax(rng: Rng):
    return {"x": _normal(rng, 2, 3, 5)}, lambda t: softmax(t["x"])


@register("softmax_row_shift")
def _softmax_row_shift(rng: Rng):
    # the shift cancels inside softmax, so its exact gradient is zero
    inputs = {"x": _normal(rng, 2, 3, 5), "shift": _normal(rng, 2, 3, 1)}
    return inputs, lambda t: softmax(t["x"] + t["shift"])


@register("layer_norm")
def _layer_norm(rng: Rng):
    inputs = {"x": _normal(rng, 2, 3, 6), "gamma": 1.0 + _normal(rng, 6, std=0.3), "beta": _normal(rng, 6)}
    return inputs, lambda t: layer_norm(t["x"], t["gamma"], t["beta"])


@register("gelu")
def _gelu(rng: Rng):
    return {"x": _normal(rng, 3, 7, std=2.0)}, lambda t: gelu(t["x"])


@register("relu")
def _relu(rng: Rng):
    return {"x": _away_from_zero(rng, 4, 6)}, lambda t: relu(t["x"])


@register("conv2d_patchify")
def _conv(rng: Rng):
    inputs = {"x": _normal(rng, 2, 4, 4, 3), "kernel": _normal(rng, 2, 2, 3, 5), "bias": _normal(rng, 5)}
    return inputs, lambda t: conv2d_patchify(t["x"], t["kernel"], t["bias"])


@register("cross_entropy")
def _cross_entropy(rng: Rng):
    labels = rng.integers(0, 5, (4,))
    return {"logits": _normal(rng, 4, 5, std=2.0)}, lambda t: cross_entropy(t["logits"], labels)


# ----------------------------------------------------------------------
# composite layers
# ----------------------------------------------------------------------
def _gcn_case(mode: AdjacencyMode):
    def build(rng: Rng):
        operator = grid_operator(4, 4, mode.value)
        # resample until no pre-activation sits on the ReLU kink
        while True:
            x, w = _normal(rng, 2, 16, 6), _normal(rng, 6, 6, std=0.5)
            if np.abs(operator.entries @ x @ w).min() > _KINK_MARGIN:
                break
        return {"x": x, "w": w}, lambda t: gcn_positional_embedding(t["x"], operator, t["w"])

    return build


register("gcn_one_way")(_gcn_case(AdjacencyMode.ONE_WAY))
register("gcn_bidirectional")(_gcn_case(AdjacencyMode.BIDIRECTIONAL))


def _attention_inputs(rng: Rng, d: int) -> Inputs:
    inputs = {}
    for part in ("q", "k", "v", "o"):
        inputs[f"w_{part}"] = _normal(rng, d, d, std=0.4)
        inputs[f"b_{part}"] = _normal(rng, d, std=0.1)
    return inputs


def _attention(t: dict[str, Tensor], heads: int) -> AttentionParams:
    return AttentionParams(**{k: v for k, v in t.items() if k[:2] in ("w_", "b_")}, heads=heads)


@register("mhsa")
def _mhsa(rng: Rng):
    inputs = {"x": _normal(rng, 2, 3, 8), **_attention_inputs(rng, 8)}
    return inputs, lambda t: mhsa(t["x"], _attention(t, heads=2))


@register("encoder_layer")
def _encoder_layer(rng: Rng):
    d, hidden = 8, 8 * MLP_RATIO
    inputs = {
        "x": _normal(rng, 2, 3, d),
        **_attention_inputs(rng, d),
        "ln1_gamma": 1.0 + _normal(rng, d, std=0.2),
        "ln1_beta": _normal(rng, d, std=0.2),
        "ln2_gamma": 1.0 + _normal(rng, d, std=0.2),
        "ln2_beta": _normal(rng, d, std=0.2),
        "mlp_w1": _normal(rng, d, hidden, std=0.3),
        "mlp_b1": _normal(rng, hidden, std=0.1),
        "mlp_w2": _normal(rng, hidden, d, std=0.3),
        "mlp_b2": _normal(rng, d, std=0.1),
    }

    def fn(t):
        layer = EncoderLayerParams(
            attention=_attention(t, heads=2),
            **{k: v for k, v in t.items() if k.startswith(("ln", "mlp"))},
        )
        return encoder_layer(t["x"], layer)

    return inputs, fn


# ----------------------------------------------------------------------
# end to end
# ----------------------------------------------------------------------
def _model_case(variant: str):
    def build(rng: Rng):
        config = build_variant(variant, (8, 8, 1), num_classes=3, embed_dim=8, layers_per_level=1, heads=2)
        inputs: Inputs = {}
        for name, shape, kind in param_layout(config):
            # every parameter random, including the zero-initialized head
            base = 1.0 if kind == "one" else 0.0
            inputs[name] = base + _normal(rng, *shape, std=0.2 if kind == "one" else 0.5)
        images = rng.uniform((2, 8, 8, 1), dtype=np.float64)
        labels = rng.integers(0, 3, (2,))
        return inputs, lambda t: cross_entropy(forward(config, t, images), labels)

    return build


for _variant in ("gcn_hvit_1", "hvit", "vit4"):
    register(f"model_{_variant}", tolerance=MODEL_TOLERANCE, max_entries=20)(_model_case(_variant))


# ----------------------------------------------------------------------
# runner
# ----------------------------------------------------------------------
def _scalarize(fn: Fn, inputs: Inputs, rng: Rng) -> Callable[[dict[str, Tensor]], Tensor]:
    with no_grad():
        sample = fn({k: Tensor(v, dtype=np.float64) for k, v in inputs.items()})
    if sample.size == 1:
        return lambda t: fn(t).reshape(())
    projection = Tensor(_normal(rng, *sample.shape), dtype=np.float64)
    return lambda t: (fn(t) * projection).sum()


def check_case(case: GradCase, seed: int = 0) -> GradcheckResult:
    started = time.perf_counter()
    rng = Rng(seed)
    with float64_mode():
        inputs, fn = case.build(rng.fork(0))
        loss_fn = _scalarize(fn, inputs, rng.fork(1))

        leaves = {k: Tensor(v, requires_grad=True, dtype=np.float64) for k, v in inputs.items()}
        backward(loss_fn(leaves))

        def evaluate(name: str, flat_index: int, delta: float) -> float:
            arrays = {k: v.copy() for k, v in inputs.items()}
            arrays[name].reshape(-1)[flat_index] += delta
            with no_grad():
                return loss_fn({k: Tensor(v, dtype=np.float64) for k, v in arrays.items()}).item()

        worst, worst_input = 0.0, ""
        sampler = rng.fork(2)
        for name, array in inputs.items():
            size = array.size
            picks = np.arange(size)
            if case.max_entries is not None and size > case.max_entries:
                picks = np.sort(sampler.permutation(size)[: case.max_entries])
            analytic = leaves[name].grad
            analytic = np.zeros(size) if analytic is None else analytic.reshape(-1)[picks]
            numeric = np.array([(evaluate(name, i, STEP) - evaluate(name, i, -STEP)) / (2 * STEP) for i in picks])
            err = relative_error(analytic, numeric)
            if err >= worst:
                worst, worst_input = err, name
    result = GradcheckResult(case.name, worst, worst_input, case.tolerance, time.perf_counter() - started)
    logger.debug("gradcheck %s: %.3e (worst input %s)", case.name, worst, worst_input)
    return result


def run_gradcheck(only: Optional[Iterable[str]] = None, seed: int = 0) -> list[GradcheckResult]:
    names = list(GRADCHECKS) if only is None else list(only)
    unknown = [n for n in names if n not in GRADCHECKS]
    if unknown:
        raise ConfigError(f"unknown gradcheck op(s) {', '.join(unknown)}; valid: {', '.join(GRADCHECKS)}")
    return [check_case(GRADCHECKS[name], seed) for name in names]


def require_passing(results: Iterable[GradcheckResult]) -> None:
    failed = [r for r in results if not r.passed]
    if failed:
        summary = ", ".join(f"{r.op} ({r.max_rel_error:.3e} >= {r.tolerance:.0e})" for r in failed)
        raise GradcheckFailed(f"gradient check failed for {summary}", details={"ops": [r.op for r in failed]})
