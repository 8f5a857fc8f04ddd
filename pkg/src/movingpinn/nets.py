"""Dense feedforward networks with exact input derivatives up to second order.

Networks are plain parameter containers evaluated in float64 numpy. Besides
the value, the forward pass propagates the full input Jacobian and the
spatial Laplacian layer by layer ("jets"), so PDE residuals never need
nested automatic differentiation. Parameter gradients of any smooth
functional of those jets are obtained by reverse accumulation over the same
pass.

Point convention: a point is a length-(d+1) vector ``(x_1, ..., x_d, t)``.
The spatial Laplacian sums second derivatives over the first ``n_spatial``
input coordinates only.

Flat parameter ordering (used by checkpoints, optimizers and gradients):
for each layer in order, the weight matrix in row-major order followed by
the bias vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ConfigurationError",
    "NumericError",
    "DenseNet",
    "Jet",
    "JetBatch",
    "init_dense_net",
    "forward_values",
    "forward_jets",
    "forward_extended",
    "loss_and_param_grad",
    "value_loss_and_param_grad",
    "save_checkpoint",
    "load_checkpoint",
]


class ConfigurationError(ValueError):
    """Malformed network, point, or option combination."""


class NumericError(FloatingPointError):
    """A non-finite value appeared during evaluation.

    ``point_index`` identifies the first offending point of the batch when
    known, otherwise it is None.
    """

    def __init__(self, message, point_index=None):
        super().__init__(message)
        self.point_index = point_index


@dataclass
class DenseNet:
    """Fully connected feedforward net: tanh hidden layers, identity output."""

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise ConfigurationError(f"bad layer sizes {sizes!r}")
        if self.activation != "tanh":
            raise ConfigurationError(f"unsupported activation {self.activation!r}")
        self.layer_sizes = sizes
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i + 1], sizes[i]) or b.shape != (sizes[i + 1],):
                raise ConfigurationError(
                    f"layer {i} shape mismatch: W{w.shape} b{b.shape} for sizes {sizes}"
                )

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def get_params(self) -> np.ndarray:
        """Flatten all parameters in the documented ordering."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def set_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_params,):
            raise ConfigurationError(
                f"expected {self.n_params} parameters, got {flat.shape}"
            )
        k = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = flat[k : k + w.size].reshape(w.shape).copy()
            k += w.size
            self.biases[i] = flat[k : k + b.size].copy()
            k += b.size

    def copy(self) -> "DenseNet":
        return DenseNet(
            self.layer_sizes,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
        )


@dataclass
class Jet:
    """Value, full input gradient, and spatial Laplacian at one point."""

    value: float
    grad: np.ndarray
    lap_x: float


@dataclass
class JetBatch:
    """Jets for a batch of points: value (B,), grad (B, D), lap_x (B,)."""

    value: np.ndarray
    grad: np.ndarray
    lap_x: np.ndarray


def init_dense_net(layer_sizes, seed: int, activation: str = "tanh") -> DenseNet:
    """Glorot-uniform weights, zero biases, seeded."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-limit, limit, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return DenseNet(tuple(layer_sizes), weights, biases, activation)


def _check_points(net: DenseNet, points: np.ndarray) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[1] != net.n_inputs:
        raise ConfigurationError(
            f"points have width {points.shape[1]}, net expects {net.n_inputs}"
        )
    return points


def forward_values(net: DenseNet, points: np.ndarray) -> np.ndarray:
    """Scalar network values at a batch of points, no derivatives."""
    h = _check_points(net, points)
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w.T + b
        if i < last:
            h = np.tanh(h)
    return h[:, 0]


def _forward_tape(net: DenseNet, points: np.ndarray, n_spatial: int):
    """Run the jet-propagating forward pass and keep all intermediates.

    Carries, per layer: h (B, n), J = dh/dpoint (B, n, D), lap (B, n).
    Returns the tape needed for reverse accumulation.
    """
    h = _check_points(net, points)
    batch, dim = h.shape
    if not 0 <= n_spatial <= dim:
        raise ConfigurationError(f"n_spatial {n_spatial} out of range for width {dim}")
    jac = np.broadcast_to(np.eye(dim), (batch, dim, dim)).copy()
    lap = np.zeros((batch, dim))
    tape = []
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w.T + b
        jz = np.einsum("mn,bnd->bmd", w, jac, optimize=True)
        lz = lap @ w.T
        if i < last:
            a = np.tanh(z)
            s1 = 1.0 - a * a
            q = np.einsum("bmd,bmd->bm", jz[:, :, :n_spatial], jz[:, :, :n_spatial])
            s2 = -2.0 * a * s1
            tape.append(("tanh", h, jac, lap, z, jz, lz, a, s1, s2, q))
            h = a
            jac = s1[:, :, None] * jz
            lap = s2 * q + s1 * lz
        else:
            tape.append(("affine", h, jac, lap, z, jz, lz))
            h, jac, lap = z, jz, lz
    return h, jac, lap, tape


def forward_jets(net: DenseNet, points: np.ndarray, n_spatial: int | None = None) -> JetBatch:
    """Values, input gradients and spatial Laplacians at a batch of points."""
    if n_spatial is None:
        n_spatial = net.n_inputs - 1
    h, jac, lap, _ = _forward_tape(net, points, n_spatial)
    return JetBatch(value=h[:, 0], grad=jac[:, 0, :], lap_x=lap[:, 0])


def forward_extended(net: DenseNet, point: np.ndarray, n_spatial: int | None = None) -> Jet:
    """Single-point jet: exact value, full gradient, spatial Laplacian."""
    jets = forward_jets(net, np.asarray(point, dtype=np.float64)[None, :], n_spatial)
    return Jet(value=float(jets.value[0]), grad=jets.grad[0].copy(), lap_x=float(jets.lap_x[0]))


def loss_and_param_grad(net, points, loss_fn, n_spatial=None):
    """Loss over jets at a point batch and its exact parameter gradient.

    ``loss_fn(jets: JetBatch) -> (loss, bar_value, bar_grad, bar_lap)`` must
    return the loss together with its partial derivatives with respect to the
    jet components (arrays shaped like them; None means zero). The gradient
    is accumulated in reverse over the jet-propagating forward pass.
    """
    if n_spatial is None:
        n_spatial = net.n_inputs - 1
    h, jac, lap, tape = _forward_tape(net, points, n_spatial)
    jets = JetBatch(value=h[:, 0], grad=jac[:, 0, :], lap_x=lap[:, 0])
    bad = ~(
        np.isfinite(jets.value) & np.isfinite(jets.lap_x) & np.isfinite(jets.grad).all(axis=1)
    )
    if bad.any():
        raise NumericError("non-finite jet in forward pass", point_index=int(np.flatnonzero(bad)[0]))
    loss, bar_value, bar_grad, bar_lap = loss_fn(jets)
    if not np.isfinite(loss):
        raise NumericError("non-finite loss value")

    batch, dim = jets.grad.shape
    hbar = np.zeros_like(h)
    jbar = np.zeros_like(jac)
    lbar = np.zeros_like(lap)
    if bar_value is not None:
        hbar[:, 0] = bar_value
    if bar_grad is not None:
        jbar[:, 0, :] = bar_grad
    if bar_lap is not None:
        lbar[:, 0] = bar_lap

    wgrads = [None] * len(net.weights)
    bgrads = [None] * len(net.biases)
    for i in range(len(tape) - 1, -1, -1):
        rec = tape[i]
        if rec[0] == "tanh":
            _, h_in, j_in, l_in, z, jz, lz, a, s1, s2, q = rec
            # adjoints arriving on (a, J_a, lap_a); convert to (z, J_z, lap_z)
            s3 = -2.0 * (s1 * s1 + a * s2)
            zbar = hbar * s1
            zbar += np.einsum("bmd,bmd->bm", jbar, jz) * s2
            zbar += lbar * (s3 * q + s2 * lz)
            jzbar = s1[:, :, None] * jbar
            jzbar[:, :, :n_spatial] += 2.0 * (lbar * s2)[:, :, None] * jz[:, :, :n_spatial]
            lzbar = s1 * lbar
        else:
            _, h_in, j_in, l_in, z, jz, lz = rec
            zbar, jzbar, lzbar = hbar, jbar, lbar
        w = net.weights[i]
        wgrads[i] = (
            zbar.T @ h_in
            + np.einsum("bmd,bnd->mn", jzbar, j_in, optimize=True)
            + lzbar.T @ l_in
        )
        bgrads[i] = zbar.sum(axis=0)
        hbar = zbar @ w
        jbar = np.einsum("bmd,mn->bnd", jzbar, w, optimize=True)
        lbar = lzbar @ w

    flat = np.concatenate([np.concatenate([wg.ravel(), bg]) for wg, bg in zip(wgrads, bgrads)])
    return float(loss), flat


def value_loss_and_param_grad(net, points, loss_fn):
    """As :func:`loss_and_param_grad` for losses of the value alone.

    ``loss_fn(values) -> (loss, bar_value)``. Uses a plain forward/backward
    pass without Jacobian carriers, which is considerably cheaper for
    initial- and boundary-condition terms.
    """
    h = _check_points(net, points)
    last = len(net.weights) - 1
    acts = []
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        acts.append(h)
        h = h @ w.T + b
        if i < last:
            h = np.tanh(h)
    values = h[:, 0]
    if not np.isfinite(values).all():
        raise NumericError(
            "non-finite network value",
            point_index=int(np.flatnonzero(~np.isfinite(values))[0]),
        )
    loss, bar_value = loss_fn(values)
    hbar = np.zeros_like(h)
    hbar[:, 0] = bar_value
    wgrads = [None] * len(net.weights)
    bgrads = [None] * len(net.biases)
    out = h
    for i in range(last, -1, -1):
        if i < last:
            hbar = hbar * (1.0 - out * out)
        zbar = hbar
        wgrads[i] = zbar.T @ acts[i]
        bgrads[i] = zbar.sum(axis=0)
        hbar = zbar @ net.weights[i]
        out = acts[i]
    flat = np.concatenate([np.concatenate([wg.ravel(), bg]) for wg, bg in zip(wgrads, bgrads)])
    return float(loss), flat


_CHECKPOINT_MAGIC = "movingpinn-densenet v1"


def save_checkpoint(net: DenseNet, path) -> None:
    """Write a flat text checkpoint that round-trips bit-exactly."""
    lines = [
        _CHECKPOINT_MAGIC,
        "layer_sizes " + " ".join(str(s) for s in net.layer_sizes),
        f"activation {net.activation}",
    ]
    lines.extend("%.17g" % v for v in net.get_params())
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> DenseNet:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != _CHECKPOINT_MAGIC:
        raise ConfigurationError(f"{path}: not a movingpinn checkpoint")
    sizes = tuple(int(s) for s in lines[1].split()[1:])
    activation = lines[2].split()[1]
    params = np.array([float(v) for v in lines[3:] if v], dtype=np.float64)
    net = init_dense_net(sizes, seed=0, activation=activation)
    net.set_params(params)
    return net
