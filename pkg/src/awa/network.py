"""Small 1D-CNN toolkit: typed layer specs compiled to torch modules.

The generator and discriminator stacks are declared as ``LayerSpec`` lists
so architectures can be written to a manifest and rebuilt exactly.
Padding follows the ``same`` convention of Keras: convolutions and pools
produce ``ceil(L / stride)`` outputs, transposed convolutions ``L * stride``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ArchiveError, NumericalError, ShapeError

LAYER_KINDS = ("conv1d", "transposed_conv1d", "batch_norm", "elu", "relu",
               "max_pool1d", "dense", "softmax", "sigmoid")
BN_EPSILON = 1e-3


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    filters: int | None = None
    kernel_size: int | None = None
    strides: int = 1
    padding: str = "same"
    momentum: float | None = None
    alpha: float | None = None
    units: int | None = None
    pool_size: int | None = None

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        for name in ("filters", "kernel_size", "units", "pool_size"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ValueError(f"{self.kind}: {name} must be positive")
        if self.strides <= 0:
            raise ValueError(f"{self.kind}: strides must be positive")
        if self.padding != "same":
            raise ValueError("only 'same' padding is supported")

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def conv(filters, kernel_size, strides=1):
    return LayerSpec("conv1d", filters=filters, kernel_size=kernel_size, strides=strides)


def tconv(filters, kernel_size, strides=1):
    return LayerSpec("transposed_conv1d", filters=filters, kernel_size=kernel_size,
                     strides=strides)


def batch_norm(momentum=0.8):
    return LayerSpec("batch_norm", momentum=momentum)


def elu(alpha=1.0):
    return LayerSpec("elu", alpha=alpha)


def relu():
    return LayerSpec("relu")


def max_pool(pool_size, strides):
    return LayerSpec("max_pool1d", pool_size=pool_size, strides=strides)


def dense(units):
    return LayerSpec("dense", units=units)


def generator_layers() -> list[LayerSpec]:
    block = lambda f, s: [conv(f, 3, s), batch_norm(0.8), elu(2.0)]
    layers = block(8, 1) + block(16, 2) + block(32, 2)
    for _ in range(8):
        layers += block(32, 1)
    layers += [tconv(16, 3, 2), batch_norm(0.8), elu(2.0)]
    layers += [tconv(8, 3, 2), batch_norm(0.8), elu(2.0)]
    layers += [conv(1, 3, 1), relu()]
    return layers


def discriminator_layers(num_outputs: int) -> list[LayerSpec]:
    layers = [conv(32, 8), elu(1.0), conv(32, 8), elu(1.0), max_pool(8, 4),
              conv(64, 8), elu(1.0), conv(64, 8), elu(1.0), max_pool(8, 4),
              dense(512), relu(), dense(512), relu(), dense(num_outputs)]
    # a single output is a probability, which softmax cannot express
    layers.append(LayerSpec("sigmoid") if num_outputs == 1 else LayerSpec("softmax"))
    return layers


# -- torch modules -----------------------------------------------------------

def _same_pad(length: int, kernel: int, stride: int) -> tuple[int, int]:
    out = -(-length // stride)
    total = max((out - 1) * stride + kernel - length, 0)
    return total // 2, total - total // 2


class _Conv(nn.Module):
    def __init__(self, in_ch, spec: LayerSpec):
        super().__init__()
        self.stride = spec.strides
        self.kernel = spec.kernel_size
        self.weight = nn.Parameter(torch.empty(spec.filters, in_ch, spec.kernel_size))
        self.bias = nn.Parameter(torch.empty(spec.filters))

    def forward(self, x):
        x = F.pad(x, _same_pad(x.shape[-1], self.kernel, self.stride))
        return F.conv1d(x, self.weight, self.bias, stride=self.stride)


class _TransposedConv(nn.Module):
    def __init__(self, in_ch, spec: LayerSpec):
        super().__init__()
        self.stride = spec.strides
        self.kernel = spec.kernel_size
        self.weight = nn.Parameter(torch.empty(in_ch, spec.filters, spec.kernel_size))
        self.bias = nn.Parameter(torch.empty(spec.filters))

    def forward(self, x):
        target = x.shape[-1] * self.stride
        y = F.conv_transpose1d(x, self.weight, self.bias, stride=self.stride)
        extra = y.shape[-1] - target
        if extra >= 0:
            left = extra // 2
            return y[..., left:left + target]
        return F.pad(y, (0, -extra), value=0.0)


class _MaxPool(nn.Module):
    def __init__(self, spec: LayerSpec):
        super().__init__()
        self.pool = spec.pool_size
        self.stride = spec.strides

    def forward(self, x):
        x = F.pad(x, _same_pad(x.shape[-1], self.pool, self.stride), value=-math.inf)
        return F.max_pool1d(x, self.pool, self.stride)


class _Dense(nn.Module):
    def __init__(self, in_features, spec: LayerSpec):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(spec.units, in_features))
        self.bias = nn.Parameter(torch.empty(spec.units))

    def forward(self, x):
        return F.linear(x.flatten(1), self.weight, self.bias)


class _Activation(nn.Module):
    def __init__(self, spec: LayerSpec):
        super().__init__()
        self.kind = spec.kind
        self.alpha = spec.alpha

    def forward(self, x):
        if self.kind == "elu":
            return F.elu(x, alpha=self.alpha)
        if self.kind == "relu":
            return F.relu(x)
        if self.kind == "softmax":
            return F.softmax(x, dim=-1)
        return torch.sigmoid(x)


def _compile(layers: Sequence[LayerSpec], input_length: int):
    """Build modules and infer the (channels, length) flowing through each."""
    modules = []
    channels, length, flat = 1, input_length, None
    for spec in layers:
        if spec.kind == "conv1d":
            if flat is not None:
                raise ShapeError("conv1d after dense")
            modules.append(_Conv(channels, spec))
            channels, length = spec.filters, -(-length // spec.strides)
        elif spec.kind == "transposed_conv1d":
            if flat is not None:
                raise ShapeError("transposed_conv1d after dense")
            modules.append(_TransposedConv(channels, spec))
            channels, length = spec.filters, length * spec.strides
        elif spec.kind == "max_pool1d":
            modules.append(_MaxPool(spec))
            length = -(-length // spec.strides)
        elif spec.kind == "batch_norm":
            width = flat if flat is not None else channels
            momentum = 0.99 if spec.momentum is None else spec.momentum
            modules.append(nn.BatchNorm1d(width, eps=BN_EPSILON, momentum=1.0 - momentum))
        elif spec.kind == "dense":
            modules.append(_Dense(flat if flat is not None else channels * length, spec))
            flat = spec.units
        else:
            modules.append(_Activation(spec))
        if length < 1:
            raise ShapeError(f"{spec.kind} reduces the sequence to nothing")
    if flat is not None:
        out_shape = (flat,)
    else:
        out_shape = (length,) if channels == 1 else (channels, length)
    return modules, out_shape


def _glorot_fans(param: torch.Tensor) -> tuple[int, int]:
    if param.dim() == 2:
        return param.shape[1], param.shape[0]
    receptive = param.shape[2]
    return param.shape[1] * receptive, param.shape[0] * receptive


class NetworkModel(nn.Module):
    """Sequential network over ``(batch, L)`` inputs.

    ``forward`` returns the network output; ``logits`` the pre-activation
    values of the final softmax/sigmoid head (or the output when there is
    no such head).
    """

    def __init__(self, layers: Sequence[LayerSpec], input_length: int, seed: int = 0,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        if input_length < 1:
            raise ShapeError("input length must be positive")
        self.layers = list(layers)
        self.input_length = int(input_length)
        self.seed = int(seed)
        modules, self.output_shape = _compile(self.layers, self.input_length)
        self.body = nn.ModuleList(modules)
        self._dtype = dtype
        self.to(dtype)
        self.reset_parameters(seed)
        self.eval()

    @property
    def dtype(self) -> torch.dtype:
        return self._dtype

    def reset_parameters(self, seed: int) -> None:
        """Glorot-uniform weights, zero biases, unit BN scale, from ``seed``."""
        gen = torch.Generator().manual_seed(int(seed) % (2 ** 63))
        with torch.no_grad():
            for module in self.body:
                if isinstance(module, nn.BatchNorm1d):
                    module.reset_parameters()
                elif hasattr(module, "weight"):
                    fan_in, fan_out = _glorot_fans(module.weight)
                    limit = math.sqrt(6.0 / (fan_in + fan_out))
                    noise = torch.rand(module.weight.shape, generator=gen, dtype=torch.float64)
                    module.weight.copy_((noise * 2 - 1) * limit)
                    module.bias.zero_()

    def _run(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if x.dim() != 2 or x.shape[1] != self.input_length:
            raise ShapeError(f"expected (batch, {self.input_length}) input, got {tuple(x.shape)}")
        h = x.unsqueeze(1)
        logits = None
        for spec, module in zip(self.layers, self.body):
            if spec.kind in ("softmax", "sigmoid"):
                logits = h
            h = module(h)
        if h.dim() == 3 and h.shape[1] == 1:
            h = h.squeeze(1)
        return h, (h if logits is None else logits)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self._run(x)[0]

    def forward_with_logits(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self._run(x)

    def as_tensor(self, batch) -> torch.Tensor:
        return torch.as_tensor(np.array(batch, dtype=np.float64), dtype=self.dtype)

    # -- flat parameter views ------------------------------------------------

    def parameter_vector(self) -> np.ndarray:
        return nn.utils.parameters_to_vector(self.parameters()).detach().cpu().numpy().copy()

    def set_parameter_vector(self, vector) -> None:
        vec = torch.as_tensor(np.asarray(vector), dtype=self.dtype)
        if vec.numel() != self.num_parameters:
            raise ShapeError(f"expected {self.num_parameters} parameters, got {vec.numel()}")
        nn.utils.vector_to_parameters(vec, self.parameters())

    @property
    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        """Parameters then BN running statistics, in a fixed order."""
        out = [(n, p.detach().cpu().numpy()) for n, p in self.named_parameters()]
        out += [(n, b.detach().cpu().numpy()) for n, b in self.named_buffers()
                if not n.endswith("num_batches_tracked")]
        return out

    def clone(self) -> "NetworkModel":
        other = NetworkModel(self.layers, self.input_length, self.seed, self.dtype)
        other.load_state_dict(self.state_dict())
        other.train(self.training)
        return other


def build_generator(input_length: int, seed: int, dtype=torch.float32) -> NetworkModel:
    if input_length % 4:
        raise ShapeError(f"generator input length {input_length} is not divisible by 4")
    return NetworkModel(generator_layers(), input_length, seed, dtype)


def build_discriminator(input_length: int, num_outputs: int, seed: int,
                        dtype=torch.float32) -> NetworkModel:
    if num_outputs < 1:
        raise ShapeError("discriminator needs at least one output")
    return NetworkModel(discriminator_layers(num_outputs), input_length, seed, dtype)


def forward(model: NetworkModel, batch, mode: str = "inference",
            with_logits: bool = False):
    """Run ``model`` on a numpy batch and return numpy output(s)."""
    if mode not in ("train", "inference"):
        raise ValueError(f"unknown mode {mode!r}")
    was_training = model.training
    model.train(mode == "train")
    try:
        with torch.no_grad():
            out, logits = model.forward_with_logits(model.as_tensor(batch))
    finally:
        model.train(was_training)
    if with_logits:
        return out.numpy(), logits.numpy()
    return out.numpy()


def predict(model: NetworkModel, values: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Inference-mode outputs for a large matrix, evaluated in chunks."""
    if len(values) == 0:
        return np.zeros((0,) + tuple(model.output_shape))
    chunks = [forward(model, values[i:i + batch_size])
              for i in range(0, len(values), batch_size)]
    return np.concatenate(chunks)


class OptimizerState:
    """Adam moments for one model (Keras defaults apart from the rate)."""

    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999,
                 epsilon: float = 1e-7):
        if learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.epsilon = beta1, beta2, epsilon
        self.step = 0
        self.first: list[torch.Tensor] | None = None
        self.second: list[torch.Tensor] | None = None

    def apply(self, params: Sequence[torch.Tensor]) -> None:
        if self.first is None:
            self.first = [torch.zeros_like(p) for p in params]
            self.second = [torch.zeros_like(p) for p in params]
        self.step += 1
        b1, b2 = self.beta1, self.beta2
        lr_t = self.learning_rate * math.sqrt(1 - b2 ** self.step) / (1 - b1 ** self.step)
        with torch.no_grad():
            for p, m, v in zip(params, self.first, self.second):
                g = p.grad if p.grad is not None else torch.zeros_like(p)
                m.mul_(b1).add_(g, alpha=1 - b1)
                v.mul_(b2).addcmul_(g, g, value=1 - b2)
                p.sub_(lr_t * m / (v.sqrt() + self.epsilon))


def grad_step(model: NetworkModel, optimizer: OptimizerState,
              loss_fn: Callable[[NetworkModel, object], torch.Tensor], batch) -> float:
    """One Adam update of ``model`` (in place) on ``loss_fn(model, batch)``.

    The model is put in training mode; the loss value is returned.
    """
    model.train()
    model.zero_grad(set_to_none=True)
    loss = loss_fn(model, batch)
    if not torch.isfinite(loss):
        raise NumericalError(f"non-finite loss {loss.item()}")
    loss.backward()
    optimizer.apply(list(model.parameters()))
    return float(loss.item())


# -- serialization -------------------------------------------------------------

MODEL_FORMAT = "awa-model/1"


def save_model(model: NetworkModel, path: str | Path) -> None:
    """Write ``<path>.json`` (architecture manifest) and ``<path>.bin``.

    The binary holds every array of ``state_arrays`` as little-endian
    float32, concatenated in manifest order.
    """
    path = Path(path)
    arrays = model.state_arrays()
    blob = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for _, a in arrays)
    manifest = {
        "format": MODEL_FORMAT,
        "input_length": model.input_length,
        "seed": model.seed,
        "layers": [spec.to_dict() for spec in model.layers],
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    path.with_suffix(".bin").write_bytes(blob)
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_model(path: str | Path, dtype=torch.float32) -> NetworkModel:
    path = Path(path)
    try:
        manifest = json.loads(path.with_suffix(".json").read_text())
        blob = path.with_suffix(".bin").read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"cannot read model {path}: {exc}") from exc
    if manifest.get("format") != MODEL_FORMAT:
        raise ArchiveError(f"{path}: unsupported model format {manifest.get('format')!r}")
    if hashlib.sha256(blob).hexdigest() != manifest["sha256"]:
        raise ArchiveError(f"{path}: parameter checksum mismatch")
    layers = [LayerSpec(**spec) for spec in manifest["layers"]]
    model = NetworkModel(layers, manifest["input_length"], manifest["seed"], dtype)
    flat = np.frombuffer(blob, dtype="<f4")
    state = model.state_dict()
    offset = 0
    for entry in manifest["arrays"]:
        size = int(np.prod(entry["shape"], dtype=np.int64))
        chunk = flat[offset:offset + size].reshape(entry["shape"])
        state[entry["name"]] = torch.as_tensor(chunk.copy(), dtype=dtype)
        offset += size
    if offset != flat.size:
        raise ArchiveError(f"{path}: parameter blob has {flat.size - offset} trailing values")
    model.load_state_dict(state)
    model.eval()
    return model
