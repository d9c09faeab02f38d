"""LSTM encoder-decoder trajectory model, forward and backward passes in numpy.

Gate weights of one layer are stacked row-wise in the order input, forget,
output, candidate: ``W`` has shape (4H, H + D) and multiplies ``[h_prev, x]``.

The encoder reads the raw feature rows (x, y, speed, heading), standardized
with training-set statistics.  The decoder works in an anchor-relative output
space: displacement from the last observed position and heading change from
the last observed heading, each standardized.  Its first input is the anchor
itself (zero displacement) and every later input is the previous step's
projected output, or the ground truth when teacher forcing is on.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ..data import IN_STEPS, OUT_STEPS
from ..geometry import normalize_heading
from .loss import loss as loss_fn, loss_grad

OUT_DIM = 3
HEADING_ENCODINGS = ("scalar", "sincos")
_MAGIC = b"TRAJCONFLICT-LSTM\n"


def sigmoid(z):
    # split by sign to avoid overflow in exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class Normalization:
    in_mean: np.ndarray
    in_scale: np.ndarray
    out_mean: np.ndarray
    out_scale: np.ndarray
    heading_encoding: str = "scalar"

    def __post_init__(self):
        for k in ("in_mean", "in_scale", "out_mean", "out_scale"):
            setattr(self, k, np.asarray(getattr(self, k), dtype=float))
        if self.heading_encoding not in HEADING_ENCODINGS:
            raise ValueError(f"heading_encoding must be one of {HEADING_ENCODINGS}")
        if np.any(self.in_scale <= 0) or np.any(self.out_scale <= 0):
            raise ValueError("normalization scales must be positive")
        if self.in_mean.shape != (self.in_features,) or self.out_mean.shape != (OUT_DIM,):
            raise ValueError("normalization statistics have inconsistent sizes")

    @property
    def in_features(self) -> int:
        return 5 if self.heading_encoding == "sincos" else 4

    @classmethod
    def fit(cls, inputs: np.ndarray, targets: np.ndarray, heading_encoding: str = "scalar") -> "Normalization":
        """Statistics from training inputs (N, 10, 4) and targets (N, 6, 3)."""
        inputs = np.asarray(inputs, dtype=float)
        targets = np.asarray(targets, dtype=float)

        def _std(v):
            s = float(np.std(v))
            return s if s > 1e-9 else 1.0

        rows = inputs.reshape(-1, 4)
        mean = [rows[:, 0].mean(), rows[:, 1].mean(), rows[:, 2].mean()]
        scale = [_std(rows[:, 0]), _std(rows[:, 1]), _std(rows[:, 2])]
        if heading_encoding == "sincos":
            mean += [0.0, 0.0]
            scale += [1.0, 1.0]
        else:
            mean += [0.0]
            scale += [360.0]
        rel = _relative_targets(inputs, targets)
        disp = rel[..., :2]
        out_mean = [disp[..., 0].mean(), disp[..., 1].mean(), 0.0]
        pos_scale = _std(disp - disp.reshape(-1, 2).mean(axis=0))
        out_scale = [pos_scale, pos_scale, 180.0 / np.pi]
        return cls(np.array(mean), np.array(scale), np.array(out_mean), np.array(out_scale), heading_encoding)

    def to_dict(self) -> dict:
        return {
            "in_mean": self.in_mean.tolist(),
            "in_scale": self.in_scale.tolist(),
            "out_mean": self.out_mean.tolist(),
            "out_scale": self.out_scale.tolist(),
            "heading_encoding": self.heading_encoding,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Normalization":
        return cls(**d)


def _relative_targets(inputs, targets):
    """Targets as (dx, dy, cumulative heading change) from the last input row."""
    last = inputs[:, -1]
    rel = np.empty_like(targets)
    rel[..., 0] = targets[..., 0] - last[:, None, 0]
    rel[..., 1] = targets[..., 1] - last[:, None, 1]
    seq = np.concatenate([last[:, None, 3], targets[..., 2]], axis=1)
    unwrapped = np.degrees(np.unwrap(np.radians(seq), axis=1))
    rel[..., 2] = unwrapped[:, 1:] - unwrapped[:, :1]
    return rel


@dataclass
class LstmParams:
    """Weights, biases and normalization statistics of the encoder-decoder."""

    hidden_size: int
    num_layers: int
    norm: Normalization
    weights: dict[str, np.ndarray]
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        H, D = self.hidden_size, self.norm.in_features
        expected = param_shapes(H, D, self.num_layers)
        if list(self.weights) != list(expected):
            raise ValueError(f"parameter names {list(self.weights)} != {list(expected)}")
        for k, shape in expected.items():
            if self.weights[k].shape != shape:
                raise ValueError(f"{k}: shape {self.weights[k].shape} != {shape}")

    def gate(self, layer: str, name: str) -> tuple[np.ndarray, np.ndarray]:
        """(w, b) of one gate: name in 'i', 'f', 'o', 'c'; layer like 'enc0'."""
        k = "ifoc".index(name)
        H = self.hidden_size
        return self.weights[f"{layer}.W"][k * H : (k + 1) * H], self.weights[f"{layer}.b"][k * H : (k + 1) * H]

    def copy(self) -> "LstmParams":
        return LstmParams(
            self.hidden_size,
            self.num_layers,
            self.norm,
            {k: v.copy() for k, v in self.weights.items()},
            dict(self.config),
        )

    def n_parameters(self) -> int:
        return sum(v.size for v in self.weights.values())


def param_shapes(hidden_size: int, in_features: int, num_layers: int = 1) -> dict[str, tuple]:
    H = hidden_size
    shapes = {}
    for part, d0 in (("enc", in_features), ("dec", OUT_DIM)):
        for layer in range(num_layers):
            d = d0 if layer == 0 else H
            shapes[f"{part}{layer}.W"] = (4 * H, H + d)
            shapes[f"{part}{layer}.b"] = (4 * H,)
    shapes["proj.W"] = (OUT_DIM, H)
    shapes["proj.b"] = (OUT_DIM,)
    return shapes


def init_params(
    hidden_size: int,
    norm: Normalization,
    num_layers: int = 1,
    seed: int = 0,
    forget_bias: float = 1.0,
    config: dict | None = None,
) -> LstmParams:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) weights; forget-gate biases set to ``forget_bias``."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(hidden_size)
    weights = {}
    for k, shape in param_shapes(hidden_size, norm.in_features, num_layers).items():
        weights[k] = rng.uniform(-bound, bound, size=shape)
        if k.endswith(".b") and not k.startswith("proj"):
            weights[k][hidden_size : 2 * hidden_size] = forget_bias
    return LstmParams(hidden_size, num_layers, norm, weights, dict(config or {}))


def lstm_cell_step(W, b, x_t, h_prev, c_prev):
    """One LSTM step; returns (h_t, c_t).  Works on single vectors or batches."""
    h, c, _ = _cell_forward(W, b, x_t, h_prev, c_prev)
    return h, c


def _cell_forward(W, b, x, h_prev, c_prev):
    x = np.asarray(x, dtype=float)
    h_prev = np.asarray(h_prev, dtype=float)
    c_prev = np.asarray(c_prev, dtype=float)
    H = W.shape[0] // 4
    if W.shape[0] != 4 * H or b.shape != (4 * H,):
        raise ValueError(f"bad gate parameter shapes W{W.shape} b{b.shape}")
    if h_prev.shape[-1] != H or c_prev.shape != h_prev.shape or W.shape[1] != H + x.shape[-1]:
        raise ValueError(
            f"dimension mismatch: W{W.shape}, x{x.shape}, h{h_prev.shape}, c{c_prev.shape}"
        )
    v = np.concatenate([h_prev, x], axis=-1)
    z = v @ W.T + b
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H : 2 * H])
    o = sigmoid(z[..., 2 * H : 3 * H])
    g = np.tanh(z[..., 3 * H :])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (v, i, f, o, g, c_prev, tc)


def _cell_backward(W, cache, dh, dc):
    """Returns (dW, db, dh_prev, dc_prev, dx)."""
    v, i, f, o, g, c_prev, tc = cache
    H = i.shape[-1]
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    dz = np.concatenate(
        [dc * g * i * (1.0 - i), dc * c_prev * f * (1.0 - f), do * o * (1.0 - o), dc * i * (1.0 - g * g)],
        axis=-1,
    )
    dW = dz.T @ v
    db = dz.sum(axis=0)
    dv = dz @ W
    return dW, db, dv[:, :H], dc * f, dv[:, H:]


def encode_inputs(norm: Normalization, inputs: np.ndarray) -> np.ndarray:
    """Raw (N, 10, 4) rows to standardized encoder features (N, 10, D)."""
    x = inputs
    if norm.heading_encoding == "sincos":
        h = np.radians(x[..., 3])
        feats = np.stack([x[..., 0], x[..., 1], x[..., 2], np.sin(h), np.cos(h)], axis=-1)
    else:
        feats = x
    return (feats - norm.in_mean) / norm.in_scale


def _check_inputs(params: LstmParams, inputs):
    X = np.asarray(inputs, dtype=float)
    single = X.ndim == 2
    if single:
        X = X[None]
    if X.ndim != 3 or X.shape[1:] != (IN_STEPS, 4):
        raise ValueError(f"expected input of shape (N, {IN_STEPS}, 4) or ({IN_STEPS}, 4), got {np.shape(inputs)}")
    return X, single


def forward(params: LstmParams, X: np.ndarray, Y: np.ndarray | None = None, teacher_mask=None, keep_cache=False):
    """Batched forward pass.

    Returns raw predictions (N, 6, 3) with unwrapped headings, and a cache for
    :func:`backward` when ``keep_cache``.  ``teacher_mask`` (N, 6) bool marks
    decoder steps k >= 1 whose input is the ground truth of step k - 1.
    """
    norm, L = params.norm, params.num_layers
    w = params.weights
    N, H = X.shape[0], params.hidden_size
    feats = encode_inputs(norm, X)
    anchor = np.concatenate([X[:, -1, :2], X[:, -1, 3:4]], axis=1)

    h = [np.zeros((N, H)) for _ in range(L)]
    c = [np.zeros((N, H)) for _ in range(L)]
    enc_caches = []
    for t in range(IN_STEPS):
        inp = feats[:, t]
        step = []
        for layer in range(L):
            h[layer], c[layer], cache = _cell_forward(w[f"enc{layer}.W"], w[f"enc{layer}.b"], inp, h[layer], c[layer])
            inp = h[layer]
            step.append(cache)
        enc_caches.append(step)

    z_truth = None
    if teacher_mask is not None:
        if Y is None:
            raise ValueError("teacher forcing needs targets")
        teacher_mask = np.asarray(teacher_mask, dtype=bool)
        if teacher_mask.shape != (N, OUT_STEPS):
            raise ValueError(f"teacher_mask must have shape ({N}, {OUT_STEPS})")
        z_truth = (_relative_targets(X, Y) - norm.out_mean) / norm.out_scale

    u = np.broadcast_to(-norm.out_mean / norm.out_scale, (N, OUT_DIM)).copy()
    Pw, Pb = w["proj.W"], w["proj.b"]
    dec_caches, tops, zs = [], [], []
    for k in range(OUT_STEPS):
        if k > 0:
            u = zs[-1]
            if teacher_mask is not None:
                u = np.where(teacher_mask[:, k : k + 1], z_truth[:, k - 1], u)
        inp = u
        step = []
        for layer in range(L):
            h[layer], c[layer], cache = _cell_forward(w[f"dec{layer}.W"], w[f"dec{layer}.b"], inp, h[layer], c[layer])
            inp = h[layer]
            step.append(cache)
        dec_caches.append(step)
        tops.append(h[-1])
        zs.append(h[-1] @ Pw.T + Pb)
    Z = np.stack(zs, axis=1)
    pred = anchor[:, None, :] + norm.out_mean + Z * norm.out_scale
    cache = None
    if keep_cache:
        cache = {"enc": enc_caches, "dec": dec_caches, "tops": tops, "mask": teacher_mask}
    return pred, cache


def backward(params: LstmParams, cache: dict, dpred: np.ndarray) -> dict[str, np.ndarray]:
    """Backpropagate d loss / d pred (N, 6, 3) through decoder and encoder."""
    w = params.weights
    L = params.num_layers
    grads = {k: np.zeros_like(v) for k, v in w.items()}
    N = dpred.shape[0]
    H = params.hidden_size
    dZ = dpred * params.norm.out_scale
    mask = cache["mask"]
    Pw = w["proj.W"]

    dh = [np.zeros((N, H)) for _ in range(L)]
    dc = [np.zeros((N, H)) for _ in range(L)]
    du_next = np.zeros((N, OUT_DIM))
    for k in reversed(range(OUT_STEPS)):
        dz = dZ[:, k].copy()
        if k + 1 < OUT_STEPS:
            fed_back = du_next if mask is None else du_next * (~mask[:, k + 1 : k + 2])
            dz += fed_back
        grads["proj.W"] += dz.T @ cache["tops"][k]
        grads["proj.b"] += dz.sum(axis=0)
        dh[-1] = dh[-1] + dz @ Pw
        for layer in reversed(range(L)):
            dW, db, dh[layer], dc[layer], dx = _cell_backward(
                w[f"dec{layer}.W"], cache["dec"][k][layer], dh[layer], dc[layer]
            )
            grads[f"dec{layer}.W"] += dW
            grads[f"dec{layer}.b"] += db
            if layer > 0:
                dh[layer - 1] = dh[layer - 1] + dx
            else:
                du_next = dx
    for t in reversed(range(IN_STEPS)):
        for layer in reversed(range(L)):
            dW, db, dh[layer], dc[layer], dx = _cell_backward(
                w[f"enc{layer}.W"], cache["enc"][t][layer], dh[layer], dc[layer]
            )
            grads[f"enc{layer}.W"] += dW
            grads[f"enc{layer}.b"] += db
            if layer > 0:
                dh[layer - 1] = dh[layer - 1] + dx
    return grads


def seq2seq_forward(params: LstmParams, inputs) -> np.ndarray:
    """Predict (x_ft, y_ft, heading_deg) rows for one (10, 4) input or a batch.

    Headings are wrapped into [0, 360).
    """
    X, single = _check_inputs(params, inputs)
    pred, _ = forward(params, X)
    pred[..., 2] = normalize_heading(pred[..., 2])
    return pred[0] if single else pred


def loss_and_gradients(params: LstmParams, inputs, targets, teacher_mask=None):
    """Mean batch loss and its gradient for every weight array."""
    X, _ = _check_inputs(params, inputs)
    Y = np.asarray(targets, dtype=float)
    if Y.ndim == 2:
        Y = Y[None]
    if len(X) == 0:
        raise ValueError("empty batch")
    if Y.shape != (len(X), OUT_STEPS, OUT_DIM):
        raise ValueError(f"targets must have shape ({len(X)}, {OUT_STEPS}, {OUT_DIM}), got {Y.shape}")
    pred, cache = forward(params, X, Y, teacher_mask=teacher_mask, keep_cache=True)
    value = loss_fn(pred, Y)
    grads = backward(params, cache, loss_grad(pred, Y))
    return value, grads


def loss_gradients(params: LstmParams, inputs, targets, teacher_mask=None) -> dict[str, np.ndarray]:
    return loss_and_gradients(params, inputs, targets, teacher_mask)[1]


def batch_loss(params: LstmParams, inputs, targets) -> float:
    X, _ = _check_inputs(params, inputs)
    pred, _ = forward(params, X)
    return loss_fn(pred, targets)


# -- persistence --------------------------------------------------------------
#
# Layout: magic line, 8-byte little-endian header length, UTF-8 JSON header,
# then every weight array as little-endian float64 in C (row-major) order,
# concatenated in header["arrays"] order.


def save_params(params: LstmParams, path) -> None:
    arrays = [{"name": k, "shape": list(v.shape)} for k, v in params.weights.items()]
    header = {
        "format": 1,
        "hidden_size": params.hidden_size,
        "num_layers": params.num_layers,
        "in_features": params.norm.in_features,
        "out_features": OUT_DIM,
        "gate_order": "i,f,o,c",
        "weight_input_order": "h_prev,x",
        "normalization": params.norm.to_dict(),
        "config": params.config,
        "arrays": arrays,
    }
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<Q", len(raw)))
    buf.write(raw)
    for v in params.weights.values():
        buf.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_params(path) -> LstmParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(_MAGIC):
        raise ValueError(f"{path} is not a model file")
    pos = len(_MAGIC)
    (n,) = struct.unpack("<Q", blob[pos : pos + 8])
    pos += 8
    header = json.loads(blob[pos : pos + n].decode("utf-8"))
    pos += n
    weights = {}
    for a in header["arrays"]:
        count = int(np.prod(a["shape"]))
        weights[a["name"]] = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(a["shape"]).astype(float)
        pos += 8 * count
    if pos != len(blob):
        raise ValueError(f"{path}: trailing bytes after weight data")
    norm = Normalization.from_dict(header["normalization"])
    return LstmParams(header["hidden_size"], header["num_layers"], norm, weights, header["config"])
