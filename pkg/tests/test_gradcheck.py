from __future__ import annotations

import numpy as np
import pytest

from ghvit.errors import ConfigError, GradcheckFailed
from ghvit.gradcheck import (
    GRADCHECKS,
    OP_TOLERANCE,
    check_case,
    relative_error,
    require_passing,
    run_gradcheck,
)
from ghvit.tensor import MatMul

PRIMITIVES = [name for name in GRADCHECKS if not name.startswith("model_")]
MODELS = [name for name in GRADCHECKS if name.startswith("model_")]


@pytest.mark.parametrize("op", PRIMITIVES)
def test_op_gradients_match_finite_differences(op):
    result = check_case(GRADCHECKS[op])
    assert result.max_rel_error < 1e-5, f"{op}: {result.max_rel_error:.3e} on {result.worst_input}"


@pytest.mark.parametrize("op", MODELS)
def test_end_to_end_gradients_match_finite_differences(op):
    result = check_case(GRADCHECKS[op])
    assert result.max_rel_error < 1e-4, f"{op}: {result.max_rel_error:.3e} on {result.worst_input}"


def test_registry_covers_every_differentiable_op():
    expected = {"matmul", "softmax", "layer_norm", "gelu", "relu", "conv2d_patchify", "cross_entropy", "mhsa"}
    assert expected <= set(GRADCHECKS)
    assert {"gcn_one_way", "gcn_bidirectional", "encoder_layer", "model_gcn_hvit_1"} <= set(GRADCHECKS)


def test_relative_error_edge_cases():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.array([1.0]), np.array([1.0])) == 0.0
    assert relative_error(np.array([1.0]), np.array([-1.0])) == pytest.approx(2.0)
    assert relative_error(np.array([2.0, 0.0]), np.array([2.002, 0.0])) == pytest.approx((0.002 - 1e-8) / 2.002)


def test_rounding_noise_on_a_zero_gradient_passes():
    assert relative_error(np.zeros(8), np.full(8, 2e-11)) == 0.0
    assert relative_error(np.zeros(8), np.full(8, 1e-5)) > OP_TOLERANCE


def test_zero_gradient_case_passes():
    result = check_case(GRADCHECKS["softmax_row_shift"])
    assert result.passed, f"{result.max_rel_error:.3e} on {result.worst_input}"


def test_corrupted_backward_is_detected(monkeypatch):
    original = MatMul.backward

    def skewed(self, grad):
        ga, gb = original(self, grad)
        return ga * 1.01, gb

    monkeypatch.setattr(MatMul, "backward", skewed)
    results = run_gradcheck(["matmul", "relu"])
    with pytest.raises(GradcheckFailed, match="matmul") as info:
        require_passing(results)
    assert info.value.details == {"ops": ["matmul"]}


def test_unknown_op_is_rejected():
    with pytest.raises(ConfigError, match="unknown gradcheck op"):
        run_gradcheck(["matmull"])
