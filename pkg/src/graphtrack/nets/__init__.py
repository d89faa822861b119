"""Forward passes, analytic weight Jacobians, and the finite-difference
oracle for the three node-network architectures."""

from .layers import (ARCHITECTURES, LayerSpec, NodeWeights, init_weights,
                     stack_attention, stack_weights, stacked_from_flat,
                     unflatten)
from .forward import (EnsembleActivations, augment, dnn_forward, gat_forward,
                      gnn_forward, masked_softmax)
from .jacobian import gat_jacobian, gnn_jacobian
from .finitediff import DEFAULT_STEP, finite_diff_jacobian, jacobian_mismatch

__all__ = [
    "ARCHITECTURES", "LayerSpec", "NodeWeights", "init_weights",
    "stack_attention", "stack_weights", "stacked_from_flat", "unflatten",
    "EnsembleActivations", "augment", "dnn_forward", "gat_forward",
    "gnn_forward", "masked_softmax", "gat_jacobian", "gnn_jacobian",
    "DEFAULT_STEP", "finite_diff_jacobian", "jacobian_mismatch",
]
