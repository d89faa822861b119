"""Forward passes for the message-passing, attention, and feedforward nets.

All three share the same layer convention (see layers.py).  The
message-passing net aggregates bias-augmented neighbor features by summation;
the attention variant replaces the sum with a masked-softmax weighted average
whose scores are learned per node; the feedforward baseline is the
message-passing net on a single self-looped node.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import LayerSpec, NodeWeights, stack_attention, stack_weights


def _abar(graph) -> np.ndarray:
    """Self-looped adjacency from a GraphMatrices or a raw (N, N) array."""
    abar = getattr(graph, "adjacency_self", graph)
    abar = np.asarray(abar, dtype=float)
    if abar.ndim != 2 or abar.shape[0] != abar.shape[1]:
        raise ValueError("adjacency must be square")
    if not np.all(np.diag(abar) == 1):
        raise ValueError("adjacency must carry self-loops on the diagonal")
    return abar


def augment(x: np.ndarray) -> np.ndarray:
    """Append the constant bias channel along the last axis."""
    pad = np.ones(x.shape[:-1] + (1,), dtype=float)
    return np.concatenate([x, pad], axis=-1)


@dataclass
class EnsembleActivations:
    """Every intermediate quantity of one ensemble forward evaluation.

    ``agg[j]`` is the aggregated input consumed by layer j's weights
    (neighbor sum, or attention-weighted average), ``preact[j]`` the
    activation argument, ``hidden[j]`` the bias-augmented layer output.
    For attention nets, ``coeffs[j]`` holds the raw scores c, ``betas[j]``
    the masked-softmax weights, and ``wfeat[j][i, m]`` the transformed
    feature W_i^(j)T phi_m^(j-1) entering the score for the pair (i, m).
    """

    inputs_aug: np.ndarray
    agg: list[np.ndarray] = field(default_factory=list)
    preact: list[np.ndarray] = field(default_factory=list)
    hidden: list[np.ndarray] = field(default_factory=list)
    outputs: np.ndarray | None = None
    coeffs: list[np.ndarray] = field(default_factory=list)
    betas: list[np.ndarray] = field(default_factory=list)
    wfeat: list[np.ndarray] = field(default_factory=list)

    def phis(self) -> list[np.ndarray]:
        """Bias-augmented features entering layer j, for j = 0 .. k."""
        return [self.inputs_aug] + self.hidden


def _check_shapes(spec: LayerSpec, n_nodes: int, inputs: np.ndarray,
                  wstack: list[np.ndarray]):
    if inputs.shape != (n_nodes, spec.d_in):
        raise ValueError(
            f"inputs shape {inputs.shape} != ({n_nodes}, {spec.d_in})")
    for W, dims in zip(wstack, spec.layer_dims()):
        if W.shape[1:] != dims:
            raise ValueError(f"weight shape {W.shape[1:]} != {dims}")


def gnn_forward_stacked(spec: LayerSpec, abar: np.ndarray,
                        wstack: list[np.ndarray],
                        inputs: np.ndarray) -> EnsembleActivations:
    """Message-passing forward on stacked (N, rows, cols) weights."""
    act, _ = spec.act()
    n_nodes = abar.shape[0]
    _check_shapes(spec, n_nodes, inputs, wstack)
    acts = EnsembleActivations(inputs_aug=augment(np.asarray(inputs, float)))
    prev = acts.inputs_aug
    for j in range(spec.k):
        y = abar @ prev
        x = np.matmul(y[:, None, :], wstack[j])[:, 0, :]
        acts.agg.append(y)
        acts.preact.append(x)
        prev = augment(act(x))
        acts.hidden.append(prev)
    acts.outputs = np.matmul(prev[:, None, :], wstack[spec.k])[:, 0, :]
    return acts


def masked_softmax(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the masked support, stable under large scores."""
    neg = np.where(mask, scores, -np.inf)
    shifted = neg - neg.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def gat_forward_stacked(spec: LayerSpec, abar: np.ndarray,
                        wstack: list[np.ndarray], astack: list[np.ndarray],
                        inputs: np.ndarray) -> EnsembleActivations:
    """Attention forward on stacked weights; astack[j] is (N, 2*widths[j])."""
    act, _ = spec.act()
    n_nodes = abar.shape[0]
    _check_shapes(spec, n_nodes, inputs, wstack)
    mask = abar > 0
    idx = np.arange(n_nodes)
    acts = EnsembleActivations(inputs_aug=augment(np.asarray(inputs, float)))
    prev = acts.inputs_aug
    for j in range(spec.k):
        d = spec.widths[j]
        a_self, a_nbr = astack[j][:, :d], astack[j][:, d:]
        t = np.matmul(prev[None], wstack[j])
        scores = (a_self * t[idx, idx]).sum(1)[:, None] \
            + np.matmul(t, a_nbr[:, :, None])[:, :, 0]
        beta = masked_softmax(scores, mask)
        y = beta @ prev
        x = np.matmul(y[:, None, :], wstack[j])[:, 0, :]
        acts.wfeat.append(t)
        acts.coeffs.append(scores)
        acts.betas.append(beta)
        acts.agg.append(y)
        acts.preact.append(x)
        prev = augment(act(x))
        acts.hidden.append(prev)
    acts.outputs = np.einsum("nrc,nr->nc", wstack[spec.k], prev)
    return acts


def gnn_forward(spec: LayerSpec, graph, weights: list[NodeWeights],
                inputs: np.ndarray):
    """Per-node outputs (N, d_out) of the message-passing net, plus acts."""
    acts = gnn_forward_stacked(spec, _abar(graph), stack_weights(weights),
                               np.asarray(inputs, float))
    return acts.outputs, acts


def gat_forward(spec: LayerSpec, graph, weights: list[NodeWeights],
                inputs: np.ndarray):
    """Per-node outputs (N, d_out) of the attention net, plus acts."""
    if not weights[0].has_attention:
        raise ValueError("attention vectors missing from weights")
    acts = gat_forward_stacked(spec, _abar(graph), stack_weights(weights),
                               stack_attention(weights),
                               np.asarray(inputs, float))
    return acts.outputs, acts


def dnn_forward(spec: LayerSpec, weights: NodeWeights,
                x: np.ndarray) -> np.ndarray:
    """Plain feedforward pass with bias-appending activations."""
    act, _ = spec.act()
    h = np.append(np.asarray(x, float), 1.0)
    for j in range(spec.k):
        h = np.append(act(weights.layers[j].T @ h), 1.0)
    return weights.layers[spec.k].T @ h
