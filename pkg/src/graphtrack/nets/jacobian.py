"""Analytic cross-node weight Jacobians, written as a direct transcription of
the layer-by-layer chain rule.

`gnn_jacobian(spec, graph, weights, inputs, i, z)` is the derivative of node
i's output with respect to node z's flat weight vector.  Blocks are assembled
per layer in the flat-vector order of layers.py; column indexing matches
column-major vec, so block column (u, b) differentiates W[b, u].

The recursion carries, for every node m, the derivative of m's layer-l
output with respect to the chosen weight block.  Hidden-layer derivative
matrices keep the bias row (identically zero) so shapes compose with the
augmented features.  These dense routines favor clarity; fast.py holds the
factored equivalents used inside the simulation loop and is tested against
this module.
"""

from __future__ import annotations

import numpy as np

from .forward import EnsembleActivations, _abar, gat_forward, gnn_forward
from .layers import LayerSpec, NodeWeights


def _pi(sp_row: np.ndarray) -> np.ndarray:
    """Derivative of the bias-appending activation: [diag(sigma'); 0]."""
    return np.vstack([np.diag(sp_row), np.zeros((1, sp_row.size))])


def _kron_rows(eye_dim: int, v: np.ndarray) -> np.ndarray:
    """I_{eye_dim} (x) v^T, the derivative of W^T v in vec(W)."""
    return np.kron(np.eye(eye_dim), v[None, :])


def gnn_jacobian(spec: LayerSpec, graph, weights: list[NodeWeights],
                 inputs: np.ndarray, i: int, z: int,
                 acts: EnsembleActivations | None = None) -> np.ndarray:
    """d(output_i)/d(theta_z) for the message-passing net, (d_out, p)."""
    abar = _abar(graph)
    n_nodes = abar.shape[0]
    if not (0 <= i < n_nodes and 0 <= z < n_nodes):
        raise ValueError("node index out of range")
    if acts is None:
        _, acts = gnn_forward(spec, abar, weights, inputs)
    _, dact = spec.act()
    sp = [dact(x) for x in acts.preact]
    k = spec.k
    dims = spec.layer_dims()

    blocks = []
    for j in range(k):
        rows_j, cols_j = dims[j]
        width = rows_j * cols_j
        deriv = [np.zeros((spec.widths[j] + 1, width))
                 for _ in range(n_nodes)]
        deriv[z] = _pi(sp[j][z]) @ _kron_rows(cols_j, acts.agg[j][z])
        for ell in range(j + 1, k):
            nxt = []
            for m in range(n_nodes):
                s = sum(abar[m, mm] * deriv[mm] for mm in range(n_nodes)
                        if abar[m, mm] > 0)
                nxt.append(_pi(sp[ell][m]) @ (weights[m].layers[ell].T @ s))
            deriv = nxt
        blocks.append(weights[i].layers[k].T @ deriv[i])
    if z == i:
        blocks.append(_kron_rows(spec.d_out, acts.hidden[k - 1][i]))
    else:
        blocks.append(np.zeros((spec.d_out, dims[k][0] * dims[k][1])))
    return np.hstack(blocks)


def _softmax_rows(beta_row: np.ndarray, support: np.ndarray,
                  dscore: dict[int, np.ndarray]) -> dict[int, np.ndarray]:
    """Quotient rule for one node's masked softmax.

    Given d(score_m')/d(block) rows for every m' in the support, returns
    d(beta_m')/d(block) = beta_m' (d(score_m') - sum_n beta_n d(score_n)).
    """
    avg = sum(beta_row[mm] * dscore[mm] for mm in support)
    return {mm: beta_row[mm] * (dscore[mm] - avg) for mm in support}


def _gat_propagate(spec: LayerSpec, abar, weights, acts, sp, deriv,
                   start: int) -> list[np.ndarray]:
    """Push per-node derivative matrices from layer `start` up to k-1."""
    n_nodes = abar.shape[0]
    for ell in range(start, spec.k):
        d = spec.widths[ell]
        prev = acts.phis()[ell]
        beta = acts.betas[ell]
        nxt = []
        for m in range(n_nodes):
            support = np.flatnonzero(abar[m] > 0)
            a_self = weights[m].attention[ell][:d]
            a_nbr = weights[m].attention[ell][d:]
            # Scores transform both the self and the neighbor feature with
            # node m's own layer weights.
            wt = {mm: weights[m].layers[ell].T @ deriv[mm]
                  for mm in support}
            wt_self = weights[m].layers[ell].T @ deriv[m]
            dscore = {mm: a_self @ wt_self + a_nbr @ wt[mm]
                      for mm in support}
            dbeta = _softmax_rows(beta[m], support, dscore)
            s = sum(beta[m, mm] * deriv[mm] + np.outer(prev[mm], dbeta[mm])
                    for mm in support)
            nxt.append(_pi(sp[ell][m]) @ (weights[m].layers[ell].T @ s))
        deriv = nxt
    return deriv


def gat_jacobian(spec: LayerSpec, graph, weights: list[NodeWeights],
                 inputs: np.ndarray, i: int, z: int,
                 acts: EnsembleActivations | None = None) -> np.ndarray:
    """d(output_i)/d(theta_z) for the attention net, (d_out, p_gat).

    Layer-weight blocks come first, then one block per attention vector;
    both account for the dependence of the softmax weights on the block.
    """
    abar = _abar(graph)
    n_nodes = abar.shape[0]
    if not (0 <= i < n_nodes and 0 <= z < n_nodes):
        raise ValueError("node index out of range")
    if acts is None:
        _, acts = gat_forward(spec, abar, weights, inputs)
    _, dact = spec.act()
    sp = [dact(x) for x in acts.preact]
    k = spec.k
    dims = spec.layer_dims()
    phis = acts.phis()
    support_z = np.flatnonzero(abar[z] > 0)

    blocks = []
    for j in range(k):
        rows_j, cols_j = dims[j]
        width = rows_j * cols_j
        prev = phis[j]
        beta = acts.betas[j]
        a_self = weights[z].attention[j][:cols_j]
        a_nbr = weights[z].attention[j][cols_j:]
        # Scores c_{z,m'} involve only z's layer weights, through both the
        # self feature W_z^T phi_z and the neighbor feature W_z^T phi_m'.
        dscore = {mm: np.kron(a_self, prev[z]) + np.kron(a_nbr, prev[mm])
                  for mm in support_z}
        dbeta = _softmax_rows(beta[z], support_z, dscore)
        indirect = sum(np.outer(prev[mm], dbeta[mm]) for mm in support_z)
        root = _pi(sp[j][z]) @ (_kron_rows(cols_j, acts.agg[j][z])
                                + weights[z].layers[j].T @ indirect)
        deriv = [np.zeros((spec.widths[j] + 1, width))
                 for _ in range(n_nodes)]
        deriv[z] = root
        deriv = _gat_propagate(spec, abar, weights, acts, sp, deriv, j + 1)
        blocks.append(weights[i].layers[k].T @ deriv[i])
    if z == i:
        blocks.append(_kron_rows(spec.d_out, acts.hidden[k - 1][i]))
    else:
        blocks.append(np.zeros((spec.d_out, dims[k][0] * dims[k][1])))

    for j in range(k):
        width = 2 * spec.widths[j]
        prev = phis[j]
        beta = acts.betas[j]
        t = acts.wfeat[j]
        # Scores are linear in the attention vector: c_{z,m'} = a_z . f,
        # with f the concatenated (self, neighbor) transformed features.
        dscore = {mm: np.concatenate([t[z, z], t[z, mm]])
                  for mm in support_z}
        dbeta = _softmax_rows(beta[z], support_z, dscore)
        indirect = sum(np.outer(prev[mm], dbeta[mm]) for mm in support_z)
        root = _pi(sp[j][z]) @ (weights[z].layers[j].T @ indirect)
        deriv = [np.zeros((spec.widths[j] + 1, width))
                 for _ in range(n_nodes)]
        deriv[z] = root
        deriv = _gat_propagate(spec, abar, weights, acts, sp, deriv, j + 1)
        blocks.append(weights[i].layers[k].T @ deriv[i])
    return np.hstack(blocks)
