"""Layer specifications, per-node weight containers, and weight initialization.

Conventions used throughout the nets subpackage:

* Hidden layers are indexed ``j = 0 .. k-1``; the linear output layer has
  index ``k``.
* The elementwise activation appends a constant 1 so every hidden feature
  vector carries a bias channel: ``sigma_bar(x) = [sigma(x), 1]``.
* ``W[0]`` has shape ``(d_in + 1, widths[0])`` (it consumes the
  bias-augmented input), ``W[j]`` has shape ``(widths[j-1] + 1, widths[j])``
  and ``W[k]`` has shape ``(widths[k-1] + 1, d_out)``.
* Flat weight vectors stack column-major vec's of each layer matrix in
  order, followed (for attention nets) by the attention vectors
  ``a[0] .. a[k-1]`` with ``a[j]`` of length ``2 * widths[j]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ARCHITECTURES = ("dnn", "gnn", "gat")


def tanh_act(x):
    return np.tanh(x)


def tanh_act_deriv(x):
    t = np.tanh(x)
    return 1.0 - t * t


_ACTIVATIONS = {"tanh": (tanh_act, tanh_act_deriv)}


@dataclass(frozen=True)
class LayerSpec:
    """Shape description of a k-hidden-layer network with linear output."""

    d_in: int
    d_out: int
    widths: tuple[int, ...]
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.d_in < 1 or self.d_out < 1:
            raise ValueError("d_in and d_out must be positive")
        if len(self.widths) < 1 or any(w < 1 for w in self.widths):
            raise ValueError("need at least one hidden layer of positive width")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def k(self) -> int:
        return len(self.widths)

    def act(self):
        """(sigma, sigma_prime) pair for the hidden layers."""
        return _ACTIVATIONS[self.activation]

    def layer_dims(self) -> list[tuple[int, int]]:
        """Shapes of W[0..k] as (rows, cols) pairs."""
        dims = [(self.d_in + 1, self.widths[0])]
        for j in range(1, self.k):
            dims.append((self.widths[j - 1] + 1, self.widths[j]))
        dims.append((self.widths[self.k - 1] + 1, self.d_out))
        return dims

    def n_layer_weights(self) -> int:
        return sum(r * c for r, c in self.layer_dims())

    def n_attention_weights(self) -> int:
        return sum(2 * w for w in self.widths)

    def n_weights(self, arch: str) -> int:
        """Length of the flat weight vector for the given architecture."""
        if arch not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {arch!r}")
        p = self.n_layer_weights()
        if arch == "gat":
            p += self.n_attention_weights()
        return p


@dataclass
class NodeWeights:
    """One node's layer weight matrices plus optional attention vectors."""

    layers: list[np.ndarray]
    attention: list[np.ndarray] = field(default_factory=list)

    @property
    def has_attention(self) -> bool:
        return len(self.attention) > 0

    def flat(self) -> np.ndarray:
        """Column-major flattening of all layer (then attention) weights."""
        parts = [W.ravel(order="F") for W in self.layers]
        parts.extend(a.ravel() for a in self.attention)
        return np.concatenate(parts)

    def copy(self) -> "NodeWeights":
        return NodeWeights([W.copy() for W in self.layers],
                           [a.copy() for a in self.attention])


def unflatten(spec: LayerSpec, arch: str, theta: np.ndarray) -> NodeWeights:
    """Inverse of NodeWeights.flat for the given spec/architecture."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (spec.n_weights(arch),):
        raise ValueError(
            f"theta has length {theta.size}, expected {spec.n_weights(arch)}")
    layers = []
    off = 0
    for r, c in spec.layer_dims():
        layers.append(theta[off:off + r * c].reshape((r, c), order="F"))
        off += r * c
    attention = []
    if arch == "gat":
        for w in spec.widths:
            attention.append(theta[off:off + 2 * w])
            off += 2 * w
    return NodeWeights(layers, attention)


def init_weights(spec: LayerSpec, arch: str, n_nodes: int, seed: int,
                 stddev: float | None = None) -> list[NodeWeights]:
    """Draw one normal(0, stddev^2) weight set and replicate it per node.

    Every node starts from the same draw; the simulator's distributed update
    laws are what make the per-node weights diverge.  Default stddev is 0.03
    for dnn/gnn and 0.3 for gat (attention vectors included).
    """
    if arch not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {arch!r}")
    if stddev is None:
        stddev = 0.3 if arch == "gat" else 0.03
    if stddev <= 0:
        raise ValueError("stddev must be positive")
    rng = np.random.default_rng(seed)
    layers = [rng.normal(0.0, stddev, size=dims) for dims in spec.layer_dims()]
    attention = []
    if arch == "gat":
        attention = [rng.normal(0.0, stddev, size=2 * w) for w in spec.widths]
    proto = NodeWeights(layers, attention)
    return [proto.copy() for _ in range(n_nodes)]


def stack_weights(weights: list[NodeWeights]) -> list[np.ndarray]:
    """Stack per-node layer matrices into (N, rows, cols) arrays."""
    n_layers = len(weights[0].layers)
    return [np.stack([w.layers[j] for w in weights]) for j in range(n_layers)]


def stack_attention(weights: list[NodeWeights]) -> list[np.ndarray]:
    """Stack per-node attention vectors into (N, 2*width) arrays."""
    n_att = len(weights[0].attention)
    return [np.stack([w.attention[j] for w in weights]) for j in range(n_att)]


def stacked_from_flat(spec: LayerSpec, arch: str, theta: np.ndarray):
    """View an (N, p) flat weight array as stacked layer/attention arrays.

    Returns (layer_stacks, attention_stacks) without copying: layer j is a
    strided view of shape (N, rows_j, cols_j) consistent with column-major
    vec ordering.
    """
    theta = np.ascontiguousarray(theta)
    n_nodes = theta.shape[0]
    if theta.shape[1] != spec.n_weights(arch):
        raise ValueError("flat weight array width does not match spec")
    layer_stacks = []
    off = 0
    for r, c in spec.layer_dims():
        block = theta[:, off:off + r * c].reshape(n_nodes, c, r)
        layer_stacks.append(block.swapaxes(1, 2))
        off += r * c
    att_stacks = []
    if arch == "gat":
        for w in spec.widths:
            att_stacks.append(theta[:, off:off + 2 * w])
            off += 2 * w
    return layer_stacks, att_stacks
