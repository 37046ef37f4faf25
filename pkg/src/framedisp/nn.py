"""Compact convolutional regressor from flow fields to section offsets.

Layers are plain numpy with hand-written backward passes. Inputs are flow
fields ``(height, width, 2)`` divided by ``flow_scale``; the network output
is multiplied by ``label_scale`` to give ``H``.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, FormatError, InvalidInputError, ShapeError, StorageError


class Conv2d:
    """3x3 convolution, stride 2, zero padding 1."""

    kernel = 3
    stride = 2

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator | None = None):
        fan_in = c_in * self.kernel * self.kernel
        limit = np.sqrt(6.0 / fan_in)
        if rng is None:
            self.weight = np.zeros((c_out, c_in, 3, 3))
        else:
            self.weight = rng.uniform(-limit, limit, (c_out, c_in, 3, 3))
        self.bias = np.zeros(c_out)

    def out_shape(self, shape):
        c, h, w = shape
        return (self.weight.shape[0], (h - 1) // 2 + 1, (w - 1) // 2 + 1)

    def forward(self, x):
        b, c, h, w = x.shape
        _, ho, wo = self.out_shape((c, h, w))
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        out = np.zeros((b, self.weight.shape[0], ho, wo))
        for ky in range(3):
            for kx in range(3):
                patch = xp[:, :, ky:ky + 2 * ho:2, kx:kx + 2 * wo:2]
                out += np.einsum("bchw,oc->bohw", patch, self.weight[:, :, ky, kx], optimize=True)
        out += self.bias[None, :, None, None]
        self._cache = xp
        return out

    def backward(self, grad):
        xp = self._cache
        _, _, ho, wo = grad.shape
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(self.weight)
        for ky in range(3):
            for kx in range(3):
                patch = xp[:, :, ky:ky + 2 * ho:2, kx:kx + 2 * wo:2]
                dw[:, :, ky, kx] = np.einsum("bohw,bchw->oc", grad, patch, optimize=True)
                dxp[:, :, ky:ky + 2 * ho:2, kx:kx + 2 * wo:2] += np.einsum(
                    "bohw,oc->bchw", grad, self.weight[:, :, ky, kx], optimize=True)
        self.grads = {"weight": dw, "bias": grad.sum(axis=(0, 2, 3))}
        return dxp[:, :, 1:-1, 1:-1]


class ReLU:
    def out_shape(self, shape):
        return shape

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad):
        return np.where(self._mask, grad, 0.0)


class GlobalAvgPool:
    def out_shape(self, shape):
        return (shape[0],)

    def forward(self, x):
        self._shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, grad):
        b, c, h, w = self._shape
        return np.broadcast_to(grad[:, :, None, None] / (h * w), self._shape).copy()


class Flatten:
    def out_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class Dense:
    def __init__(self, n_in: int, n_out: int, bias: bool = True,
                 rng: np.random.Generator | None = None):
        limit = np.sqrt(3.0 / n_in)
        if rng is None:
            self.weight = np.zeros((n_in, n_out))
        else:
            self.weight = rng.uniform(-limit, limit, (n_in, n_out))
        self.bias = np.zeros(n_out) if bias else None

    def out_shape(self, shape):
        return (self.weight.shape[1],)

    def forward(self, x):
        self._x = x
        out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out

    def backward(self, grad):
        self.grads = {"weight": self._x.T @ grad}
        if self.bias is not None:
            self.grads["bias"] = grad.sum(axis=0)
        return grad @ self.weight.T


@dataclass(frozen=True)
class RegressorSpec:
    """Architecture descriptor.

    ``pooling`` is ``"flatten"`` (dense layer sees every spatial cell) or
    ``"gap"`` (global average pooling before the dense layer).
    """

    input_shape: tuple[int, int]  # (height, width) of the flow field
    n_out: int = 5
    channels: tuple[int, ...] = (8, 16, 16, 16)
    pooling: str = "flatten"
    bias: bool = True
    flow_scale: float = 1.0
    label_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "channels", tuple(int(v) for v in self.channels))
        if self.pooling not in ("flatten", "gap"):
            raise ConfigError(f"unknown pooling {self.pooling!r}", "pooling")
        if self.n_out < 1 or not self.channels:
            raise ConfigError("regressor needs outputs and at least one conv block", "channels")
        if not (self.flow_scale > 0 and self.label_scale > 0):
            raise ConfigError("scales must be positive", "flow_scale")


class Regressor:
    def __init__(self, spec: RegressorSpec, seed: int | None = 0):
        """Weights are drawn from ``seed``; ``seed=None`` gives all-zero weights."""
        self.spec = spec
        rng = None if seed is None else np.random.default_rng(seed)
        layers = []
        shape = (2,) + spec.input_shape
        for c_out in spec.channels:
            conv = Conv2d(shape[0], c_out, rng)
            layers += [conv, ReLU()]
            shape = conv.out_shape(shape)
        pool = Flatten() if spec.pooling == "flatten" else GlobalAvgPool()
        layers.append(pool)
        shape = pool.out_shape(shape)
        layers.append(Dense(shape[0], spec.n_out, spec.bias, rng))
        self.layers = layers

    def parameters(self) -> list[tuple[object, str]]:
        out = []
        for layer in self.layers:
            for name in ("weight", "bias"):
                if getattr(layer, name, None) is not None:
                    out.append((layer, name))
        return out

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{i}.{name}", getattr(layer, name))
                for i, layer in enumerate(self.layers)
                for name in ("weight", "bias") if getattr(layer, name, None) is not None]

    def weights(self) -> list[np.ndarray]:
        """Weight tensors subject to the L2 penalty (biases excluded)."""
        return [layer.weight for layer in self.layers if hasattr(layer, "weight")]

    def encode(self, K) -> np.ndarray:
        K = np.asarray(K, dtype=float)
        if K.ndim == 3:
            K = K[None]
        if K.shape[1:] != self.spec.input_shape + (2,):
            raise ShapeError(f"flow shape {K.shape[1:]} does not match regressor input "
                             f"{self.spec.input_shape + (2,)}")
        return np.ascontiguousarray(K.transpose(0, 3, 1, 2)) / self.spec.flow_scale

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad


def mse_loss(H_pred, H_true, weights=(), l2: float = 0.0) -> float:
    """Mean squared error over components plus ``l2`` times the squared weight norm."""
    H_pred = np.asarray(H_pred, dtype=float)
    H_true = np.asarray(H_true, dtype=float)
    if H_pred.shape != H_true.shape:
        raise ShapeError(f"prediction {H_pred.shape} and target {H_true.shape} differ")
    penalty = sum(float(np.sum(np.square(w))) for w in weights)
    return float(np.mean((H_pred - H_true) ** 2)) + l2 * penalty


def loss_and_grads(model: Regressor, x: np.ndarray, target: np.ndarray, l2: float):
    """Training objective on network units and its gradient for every parameter.

    ``target`` is already divided by ``label_scale``.
    """
    out = model.forward(x)
    diff = out - target
    loss = mse_loss(out, target, model.weights(), l2)
    model.backward(2.0 * diff / diff.size)
    grads = []
    for layer, name in model.parameters():
        g = layer.grads[name]
        if name == "weight":
            g = g + 2.0 * l2 * layer.weight
        grads.append(g)
    return loss, grads


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 20
    decay: float = 0.94
    epochs: int = 30
    l2: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning rate must be positive", "learning_rate")
        if self.batch_size < 1:
            raise ConfigError("batch size must be at least 1", "batch_size")
        if not 0 < self.decay <= 1:
            raise ConfigError("decay must lie in (0, 1]", "decay")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative", "epochs")
        if self.l2 < 0:
            raise ConfigError("l2 factor must be non-negative", "l2")


@dataclass
class TrainResult:
    model: Regressor
    history: list[tuple[int, float, float]] = field(default_factory=list)

    def curve_csv(self) -> str:
        lines = ["epoch,train_loss,test_loss"]
        lines += [f"{e},{tr:.10g},{te:.10g}" for e, tr, te in self.history]
        return "\n".join(lines) + "\n"


def evaluate_loss(model: Regressor, K, H, l2: float, batch: int = 100) -> float:
    """Objective on a whole set, in network units."""
    K = np.asarray(K)
    H = np.asarray(H, dtype=float) / model.spec.label_scale
    sq = 0.0
    for i in range(0, len(K), batch):
        out = model.forward(model.encode(K[i:i + batch]))
        sq += float(np.sum((out - H[i:i + batch]) ** 2))
    return sq / H.size + l2 * sum(float(np.sum(w**2)) for w in model.weights())


def train(train_set, cfg: TrainConfig, spec: RegressorSpec, test_set=None,
          model: Regressor | None = None) -> TrainResult:
    """Minibatch SGD with the learning rate multiplied by ``decay`` each epoch.

    ``train_set`` and ``test_set`` are ``(K, H)`` pairs of arrays shaped
    ``(n, height, width, 2)`` and ``(n, N)``. Training targets are ``H``
    divided by ``spec.label_scale``. The history holds the mean minibatch
    objective of each epoch and the objective on the test set after it.
    """
    K, H = train_set
    K = np.asarray(K)
    H = np.asarray(H, dtype=float)
    if len(K) == 0:
        raise InvalidInputError("training set is empty")
    if len(K) != len(H) or H.shape[1] != spec.n_out:
        raise ShapeError("flow and label counts or sizes disagree")
    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = Regressor(spec, seed=int(rng.integers(2**31)))
    params = model.parameters()
    targets = H / spec.label_scale
    result = TrainResult(model)
    lr = cfg.learning_rate
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(K))
        losses = []
        for start in range(0, len(K), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = loss_and_grads(model, model.encode(K[idx]), targets[idx], cfg.l2)
            for (layer, name), g in zip(params, grads):
                setattr(layer, name, getattr(layer, name) - lr * g)
            losses.append(loss)
        test_loss = float("nan")
        if test_set is not None and len(test_set[0]):
            test_loss = evaluate_loss(model, test_set[0], test_set[1], cfg.l2)
        result.history.append((epoch, float(np.mean(losses)), test_loss))
        lr *= cfg.decay
    return result


def predict(model: Regressor, K) -> np.ndarray:
    """Offsets ``H`` for one flow field ``(height, width, 2)`` or a batch."""
    K = np.asarray(K, dtype=float)
    single = K.ndim == 3
    out = model.forward(model.encode(K)) * model.spec.label_scale
    return out[0] if single else out


_MAGIC = b"FDREG\x00"
_VERSION = 1


def save_regressor(model: Regressor, path) -> None:
    """Binary record: magic, version, JSON architecture, named float32 tensors."""
    desc = json.dumps(asdict(model.spec), sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<HI", _VERSION, len(desc)))
    buf.write(desc)
    arrays = model.named_arrays()
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays:
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)) + nb)
        buf.write(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.asarray(arr, dtype="<f4").tobytes())
    try:
        with open(path, "wb") as fh:
            fh.write(buf.getvalue())
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def load_regressor(path) -> Regressor:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    if not data.startswith(_MAGIC):
        raise FormatError(f"{path}: not a regressor weight file")
    pos = len(_MAGIC)
    version, dlen = struct.unpack_from("<HI", data, pos)
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    pos += 6
    desc = json.loads(data[pos:pos + dlen])
    pos += dlen
    model = Regressor(RegressorSpec(**desc), seed=None)
    expected = dict(model.named_arrays())
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if count != len(expected):
        raise FormatError(f"{path}: tensor count {count} does not match architecture")
    layers = model.layers
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + nlen].decode()
        pos += nlen
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(shape)
        pos += 4 * size
        if name not in expected or expected[name].shape != arr.shape:
            raise FormatError(f"{path}: unexpected tensor {name} {shape}")
        idx, attr = name.split(".")
        setattr(layers[int(idx)], attr, arr.astype(float))
    return model
