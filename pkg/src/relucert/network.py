"""Feedforward ReLU networks and certification instances.

A :class:`Network` is a stack of dense ReLU layers ``x_{k+1} = max(0, W_k x_k + b_k)``
followed by a linear readout ``s = W_out x_L + b_out``. Certification targets the
final activation vector ``f(x) = x_L``, not the readout: a :class:`Ball` goal asks
for ``||f(x) - z_hat|| <= rho``, a :class:`Halfspace` goal for ``<w, f(x)> + b <= 0``.

Class indices are 0-based throughout.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ParseError

__all__ = [
    "Network",
    "Halfspace",
    "Ball",
    "CertInstance",
    "forward",
    "attack_instance",
    "halfspace_to_ball",
    "ball_from_halfspace",
    "truncate",
    "load_network",
    "save_network",
    "load_instance",
    "save_instance",
]


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Network:
    """Dense feedforward ReLU network with a linear readout layer.

    Parameters
    ----------
    layers:
        Sequence of ``(W_k, b_k)`` pairs, ``W_k`` of shape ``(n_{k+1}, n_k)``.
    output:
        Readout pair ``(W_out, b_out)``, ``W_out`` of shape ``(m, n_L)``.
    """

    layers: tuple
    output: tuple

    def __init__(self, layers: Sequence, output: Sequence):
        if len(layers) < 1:
            raise ValueError("a network needs at least one ReLU layer")
        frozen_layers = []
        for k, (W, b) in enumerate(layers):
            W = _freeze(np.atleast_2d(W))
            b = _freeze(np.atleast_1d(b))
            if b.ndim != 1 or W.ndim != 2 or W.shape[0] != b.shape[0]:
                raise ValueError(f"layer {k}: weight/bias shapes {W.shape}/{b.shape} disagree")
            if min(W.shape) < 1:
                raise ValueError(f"layer {k}: dimensions must be >= 1")
            if frozen_layers and W.shape[1] != frozen_layers[-1][0].shape[0]:
                raise ValueError(
                    f"layer {k}: expects input of size {W.shape[1]}, "
                    f"previous layer outputs {frozen_layers[-1][0].shape[0]}"
                )
            frozen_layers.append((W, b))
        W_out = _freeze(np.atleast_2d(output[0]))
        b_out = _freeze(np.atleast_1d(output[1]))
        if W_out.shape[0] != b_out.shape[0]:
            raise ValueError("output: weight/bias shapes disagree")
        if W_out.shape[1] != frozen_layers[-1][0].shape[0]:
            raise ValueError(
                f"output: expects input of size {W_out.shape[1]}, "
                f"last layer outputs {frozen_layers[-1][0].shape[0]}"
            )
        object.__setattr__(self, "layers", tuple(frozen_layers))
        object.__setattr__(self, "output", (W_out, b_out))

    @property
    def dims(self) -> tuple:
        """Dimension chain ``(n_0, ..., n_L, m)``."""
        ns = [self.layers[0][0].shape[1]]
        ns.extend(W.shape[0] for W, _ in self.layers)
        ns.append(self.output[0].shape[0])
        return tuple(ns)

    @property
    def depth(self) -> int:
        """Number of ReLU layers."""
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def activation_dim(self) -> int:
        """Size of the final activation vector f(x)."""
        return self.layers[-1][0].shape[0]


@dataclass(frozen=True)
class Halfspace:
    """Goal ``<w, f(x)> + b <= 0`` (targeted misclassification margin).

    ``rho`` is an optional conversion radius carried by instance files so the
    goal can be turned into a :class:`Ball` via :func:`halfspace_to_ball`.
    ``true_class``/``target_class`` record provenance when the goal was built
    from a classifier row difference.
    """

    w: np.ndarray
    b: float
    rho: Optional[float] = None
    true_class: Optional[int] = None
    target_class: Optional[int] = None

    def __post_init__(self):
        w = _freeze(np.atleast_1d(self.w))
        if not np.any(w):
            raise ValueError("degenerate halfspace: w must be nonzero")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", float(self.b))


@dataclass(frozen=True)
class Ball:
    """Goal ``||f(x) - z_hat|| <= rho``.

    ``source_halfspace`` is set when the ball was produced by the tangent
    conversion from a halfspace goal, so downstream code can verify that a
    recovered attack actually crosses the original decision boundary.
    """

    z_hat: np.ndarray
    rho: float
    source_halfspace: Optional[Halfspace] = None

    def __post_init__(self):
        object.__setattr__(self, "z_hat", _freeze(np.atleast_1d(self.z_hat)))
        object.__setattr__(self, "rho", float(self.rho))
        if self.rho <= 0:
            raise ValueError(f"rho must be positive, got {self.rho}")


Goal = Union[Halfspace, Ball]


@dataclass(frozen=True)
class CertInstance:
    """One certification problem: a network, an anchor input, and a goal."""

    net: Network
    x_hat: np.ndarray
    goal: Goal

    def __post_init__(self):
        x_hat = _freeze(np.atleast_1d(self.x_hat))
        if x_hat.shape[0] != self.net.input_dim:
            raise ValueError(
                f"x_hat has length {x_hat.shape[0]}, network expects {self.net.input_dim}"
            )
        tgt = self.goal.w if isinstance(self.goal, Halfspace) else self.goal.z_hat
        if tgt.shape[0] != self.net.activation_dim:
            raise ValueError(
                f"goal vector has length {tgt.shape[0]}, "
                f"final activation has length {self.net.activation_dim}"
            )
        object.__setattr__(self, "x_hat", x_hat)


def forward(net: Network, x: np.ndarray):
    """Evaluate the network.

    Returns ``(activations, s)`` where ``activations`` is the list
    ``[x_1, ..., x_L]`` of post-ReLU layer outputs and ``s`` is the readout
    prediction ``W_out x_L + b_out``.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (net.input_dim,):
        raise ValueError(f"input has shape {x.shape}, expected ({net.input_dim},)")
    acts = []
    h = x
    for W, b in net.layers:
        h = np.maximum(0.0, W @ h + b)
        acts.append(h)
    W_out, b_out = net.output
    return acts, W_out @ h + b_out


def attack_instance(net: Network, x_hat: np.ndarray, true_class: int, target_class: int) -> CertInstance:
    """Targeted-misclassification instance: goal ``<w, f(x)> + b <= 0``.

    ``w`` is the difference of the readout rows for the two classes and ``b``
    the matching bias difference; the goal holds exactly when the target class
    score reaches the true class score.
    """
    m = net.output[0].shape[0]
    for name, c in (("true_class", true_class), ("target_class", target_class)):
        if not 0 <= c < m:
            raise ValueError(f"{name}={c} out of range for {m} classes")
    if true_class == target_class:
        raise ValueError("true_class and target_class must differ")
    W_out, b_out = net.output
    w = W_out[true_class] - W_out[target_class]
    b = float(b_out[true_class] - b_out[target_class])
    goal = Halfspace(w=w, b=b, true_class=true_class, target_class=target_class)
    return CertInstance(net=net, x_hat=x_hat, goal=goal)


def halfspace_to_ball(w: np.ndarray, b: float, rho: float) -> np.ndarray:
    """Center of the radius-``rho`` ball inscribed tangentially in the halfspace.

    ``z_hat = -w (b/||w||^2 + rho/||w||)``. Every ``z`` with ``||z - z_hat|| <= rho``
    satisfies ``<w, z> + b <= 0``, with equality exactly on the tangent point:
    ``<w, z_hat> + b = -rho ||w||``.
    """
    w = np.asarray(w, dtype=float)
    nw = np.linalg.norm(w)
    if nw == 0.0:
        raise ValueError("degenerate halfspace: w must be nonzero")
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    return -w * (b / nw**2 + rho / nw)


def ball_from_halfspace(instance: CertInstance, rho: Optional[float] = None) -> CertInstance:
    """Restrict a halfspace instance to its inscribed ball at radius ``rho``.

    ``rho`` defaults to the conversion radius stored on the goal. The returned
    Ball records the source halfspace.
    """
    goal = instance.goal
    if not isinstance(goal, Halfspace):
        raise ValueError("instance goal is not a halfspace")
    if rho is None:
        rho = goal.rho
    if rho is None:
        raise ValueError("no radius: pass rho or use a goal that stores one")
    z_hat = halfspace_to_ball(goal.w, goal.b, rho)
    return CertInstance(
        net=instance.net,
        x_hat=instance.x_hat,
        goal=Ball(z_hat=z_hat, rho=rho, source_halfspace=goal),
    )


def truncate(net: Network, k: int) -> Network:
    """Prefix network consisting of the first ``k`` ReLU layers.

    The readout of the truncated network is the identity on the k-th
    activation, so ball goals on intermediate activations can be certified
    without touching the original classifier.
    """
    if not 1 <= k <= net.depth:
        raise ValueError(f"k={k} out of range for a depth-{net.depth} network")
    if k == net.depth:
        return net
    layers = net.layers[:k]
    nk = layers[-1][0].shape[0]
    return Network(layers=layers, output=(np.eye(nk), np.zeros(nk)))


# ---------------------------------------------------------------------------
# JSON serialization.
#
# Floats are written with 17 significant decimal digits so values round-trip
# to the exact same binary double.


def _fmt_float(v: float) -> str:
    if not math.isfinite(v):
        raise ValueError(f"non-finite value {v} cannot be serialized")
    return format(float(v), ".17g")


def _fmt_vector(v) -> str:
    return "[" + ", ".join(_fmt_float(x) for x in v) + "]"


def _fmt_matrix(M) -> str:
    return "[" + ", ".join(_fmt_vector(row) for row in M) + "]"


def save_network(net: Network) -> str:
    """Serialize a network to the documented JSON schema."""
    dims = net.dims
    parts = ['{\n  "dims": [' + ", ".join(str(d) for d in dims) + "],"]
    parts.append('  "layers": [')
    layer_blobs = []
    for W, b in net.layers:
        layer_blobs.append(
            '    {"weights": ' + _fmt_matrix(W) + ', "bias": ' + _fmt_vector(b) + "}"
        )
    parts.append(",\n".join(layer_blobs))
    parts.append("  ],")
    W_out, b_out = net.output
    parts.append(
        '  "output": {"weights": ' + _fmt_matrix(W_out) + ', "bias": ' + _fmt_vector(b_out) + "}"
    )
    parts.append("}")
    return "\n".join(parts) + "\n"


def _require(obj: dict, key: str, path: str):
    if key not in obj:
        raise ParseError(f"{path}.{key}" if path else key, "missing field")
    return obj[key]


def _check_number(v, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParseError(path, f"expected a number, got {type(v).__name__}")
    return float(v)


def _check_vector(v, n: Optional[int], path: str) -> np.ndarray:
    if not isinstance(v, list):
        raise ParseError(path, "expected a list")
    if n is not None and len(v) != n:
        raise ParseError(path, f"expected length {n}, got {len(v)}")
    return np.array([_check_number(x, f"{path}[{i}]") for i, x in enumerate(v)])


def _check_matrix(v, rows: int, cols: int, path: str) -> np.ndarray:
    if not isinstance(v, list):
        raise ParseError(path, "expected a list of rows")
    if len(v) != rows:
        raise ParseError(path, f"expected {rows} rows, got {len(v)}")
    out = np.empty((rows, cols))
    for i, row in enumerate(v):
        if not isinstance(row, list) or len(row) != cols:
            got = len(row) if isinstance(row, list) else type(row).__name__
            raise ParseError(f"{path}[{i}]", f"expected a row of length {cols}, got {got}")
        out[i] = [_check_number(x, f"{path}[{i}][{j}]") for j, x in enumerate(row)]
    return out


def load_network(text: str) -> Network:
    """Parse a network from the documented JSON schema.

    Errors name the offending path, e.g. ``layers[0].weights[2]``.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError("<document>", f"malformed JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ParseError("<document>", "top level must be an object")

    dims_raw = _require(doc, "dims", "")
    if not isinstance(dims_raw, list) or len(dims_raw) < 3:
        raise ParseError("dims", "expected [n_0, ..., n_L, m] with at least one layer")
    dims = []
    for i, d in enumerate(dims_raw):
        if isinstance(d, bool) or not isinstance(d, int) or d < 1:
            raise ParseError(f"dims[{i}]", f"expected a positive integer, got {d!r}")
        dims.append(d)

    layers_raw = _require(doc, "layers", "")
    n_layers = len(dims) - 2
    if not isinstance(layers_raw, list) or len(layers_raw) != n_layers:
        raise ParseError("layers", f"expected {n_layers} layers per dims, got "
                                   f"{len(layers_raw) if isinstance(layers_raw, list) else 'non-list'}")
    layers = []
    for k, layer in enumerate(layers_raw):
        if not isinstance(layer, dict):
            raise ParseError(f"layers[{k}]", "expected an object")
        W = _check_matrix(_require(layer, "weights", f"layers[{k}]"),
                          dims[k + 1], dims[k], f"layers[{k}].weights")
        b = _check_vector(_require(layer, "bias", f"layers[{k}]"),
                          dims[k + 1], f"layers[{k}].bias")
        layers.append((W, b))

    out_raw = _require(doc, "output", "")
    if not isinstance(out_raw, dict):
        raise ParseError("output", "expected an object")
    W_out = _check_matrix(_require(out_raw, "weights", "output"),
                          dims[-1], dims[-2], "output.weights")
    b_out = _check_vector(_require(out_raw, "bias", "output"), dims[-1], "output.bias")
    return Network(layers=layers, output=(W_out, b_out))


def save_instance(instance: CertInstance) -> str:
    """Serialize a certification instance (without its network)."""
    goal = instance.goal
    if isinstance(goal, Ball):
        goal_blob = ('{"ball": {"z_hat": ' + _fmt_vector(goal.z_hat)
                     + ', "rho": ' + _fmt_float(goal.rho) + "}}")
    else:
        if goal.true_class is None or goal.target_class is None or goal.rho is None:
            raise ValueError("halfspace goal lacks class/radius provenance; cannot serialize")
        goal_blob = ('{"halfspace": {"true_class": ' + str(goal.true_class)
                     + ', "target_class": ' + str(goal.target_class)
                     + ', "rho": ' + _fmt_float(goal.rho) + "}}")
    return ('{\n  "x_hat": ' + _fmt_vector(instance.x_hat)
            + ',\n  "goal": ' + goal_blob + "\n}\n")


def load_instance(text: str, net: Network) -> CertInstance:
    """Parse an instance file against a network.

    The halfspace form stores class indices plus a conversion radius; the
    actual ``(w, b)`` pair is derived from the network's readout rows.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError("<document>", f"malformed JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ParseError("<document>", "top level must be an object")
    x_hat = _check_vector(_require(doc, "x_hat", ""), net.input_dim, "x_hat")
    goal_raw = _require(doc, "goal", "")
    if not isinstance(goal_raw, dict) or len(goal_raw) != 1:
        raise ParseError("goal", 'expected exactly one of {"ball": ...} or {"halfspace": ...}')
    if "ball" in goal_raw:
        ball = goal_raw["ball"]
        if not isinstance(ball, dict):
            raise ParseError("goal.ball", "expected an object")
        z_hat = _check_vector(_require(ball, "z_hat", "goal.ball"),
                              net.activation_dim, "goal.ball.z_hat")
        rho = _check_number(_require(ball, "rho", "goal.ball"), "goal.ball.rho")
        if rho <= 0:
            raise ParseError("goal.ball.rho", f"must be positive, got {rho}")
        return CertInstance(net=net, x_hat=x_hat, goal=Ball(z_hat=z_hat, rho=rho))
    if "halfspace" in goal_raw:
        hs = goal_raw["halfspace"]
        if not isinstance(hs, dict):
            raise ParseError("goal.halfspace", "expected an object")
        ti = _require(hs, "true_class", "goal.halfspace")
        tj = _require(hs, "target_class", "goal.halfspace")
        for name, v in (("true_class", ti), ("target_class", tj)):
            if isinstance(v, bool) or not isinstance(v, int):
                raise ParseError(f"goal.halfspace.{name}", "expected an integer class index")
        rho = _check_number(_require(hs, "rho", "goal.halfspace"), "goal.halfspace.rho")
        if rho <= 0:
            raise ParseError("goal.halfspace.rho", f"must be positive, got {rho}")
        try:
            base = attack_instance(net, x_hat, ti, tj)
        except ValueError as e:
            raise ParseError("goal.halfspace", str(e)) from e
        goal = Halfspace(w=base.goal.w, b=base.goal.b, rho=rho,
                         true_class=ti, target_class=tj)
        return CertInstance(net=net, x_hat=x_hat, goal=goal)
    raise ParseError("goal", f"unknown goal kind {next(iter(goal_raw))!r}")
