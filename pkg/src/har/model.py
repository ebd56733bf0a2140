"""The 1-D residual activity classifier and its checkpoint format.

Layout: a stem convolution (3 -> widths[0], kernel 3, pad 1) with batch
norm and ReLU, then three BasicBlocks (conv-BN-ReLU-conv-BN with an
additive skip, a 1x1 projection on the skip when the width changes, and a
final ReLU), each followed by average pooling (2, 2). A global average
pool and an affine head map the last feature width to class logits.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import BnState, Mode, Tensor
from .errors import CorruptCheckpoint, InvalidConfig, ShapeMismatch


@dataclass(frozen=True)
class HarModelConfig:
    in_channels: int = 3
    num_classes: int = 6
    window_seconds: float = 6.0
    target_hz: float = 20.0
    kernel: int = 3
    block_widths: tuple[int, int, int] = (32, 64, 128)
    block_dilations: tuple[int, int, int] = (1, 2, 4)
    seed: int = 0

    def validate(self) -> None:
        if len(self.block_widths) != 3 or len(self.block_dilations) != 3:
            raise InvalidConfig("exactly three blocks (widths and dilations)")
        if self.kernel % 2 != 1 or self.kernel < 1:
            raise InvalidConfig(f"kernel must be odd and positive, got {self.kernel}")
        if self.in_channels < 1 or self.num_classes < 2:
            raise InvalidConfig("need >=1 input channel and >=2 classes")
        if any(w < 1 for w in self.block_widths):
            raise InvalidConfig("block widths must be positive")
        if any(d < 1 for d in self.block_dilations):
            raise InvalidConfig("dilations must be >= 1")
        n = self.window_seconds * self.target_hz
        if abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise InvalidConfig(
                f"window_seconds * target_hz must be a positive integer, "
                f"got {self.window_seconds} * {self.target_hz}")

    @property
    def window_len(self) -> int:
        return int(round(self.window_seconds * self.target_hz))


@dataclass
class ModelParams:
    """Named learnable tensors plus batch-norm running statistics."""

    config: HarModelConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)
    bn_state: dict[str, BnState] = field(default_factory=dict)

    def clone(self) -> "ModelParams":
        out = ModelParams(config=self.config)
        for name, t in self.tensors.items():
            out.tensors[name] = Tensor(t.data.copy(), requires_grad=t.requires_grad)
        for name, s in self.bn_state.items():
            out.bn_state[name] = s.copy()
        return out

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def gradients(self) -> dict[str, np.ndarray]:
        out = {}
        for name, t in self.tensors.items():
            if t.grad is None:
                raise ShapeMismatch(f"no gradient recorded for {name!r}")
            out[name] = t.grad
        return out

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None


def _kaiming_normal(rng, shape: tuple[int, ...], fan_out: int) -> np.ndarray:
    # fan-out Kaiming with ReLU gain sqrt(2)
    std = np.sqrt(2.0 / fan_out)
    return rng.normal(0.0, std, size=shape)


def _add_conv(params: ModelParams, rng, name: str, c_in: int, c_out: int,
              k: int) -> None:
    w = _kaiming_normal(rng, (c_out, c_in, k), fan_out=c_out * k)
    params.tensors[f"{name}.w"] = Tensor(w, requires_grad=True)
    params.tensors[f"{name}.b"] = Tensor(np.zeros(c_out), requires_grad=True)


def _add_bn(params: ModelParams, name: str, c: int) -> None:
    params.tensors[f"{name}.gamma"] = Tensor(np.ones(c), requires_grad=True)
    params.tensors[f"{name}.beta"] = Tensor(np.zeros(c), requires_grad=True)
    params.bn_state[name] = BnState(mean=np.zeros(c), var=np.ones(c))


def build_model(config: HarModelConfig) -> ModelParams:
    """Initialize all parameters deterministically from config.seed.

    Conv weights are Kaiming-normal (fan-out, ReLU gain) with zero biases;
    batch norms start at gamma=1, beta=0, running mean 0 and variance 1.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    params = ModelParams(config=config)
    k = config.kernel
    _add_conv(params, rng, "stem.conv", config.in_channels, config.block_widths[0], k)
    _add_bn(params, "stem.bn", config.block_widths[0])
    c_prev = config.block_widths[0]
    for i, (width, _dil) in enumerate(
            zip(config.block_widths, config.block_dilations), start=1):
        _add_conv(params, rng, f"block{i}.conv1", c_prev, width, k)
        _add_bn(params, f"block{i}.bn1", width)
        _add_conv(params, rng, f"block{i}.conv2", width, width, k)
        _add_bn(params, f"block{i}.bn2", width)
        if width != c_prev:
            _add_conv(params, rng, f"block{i}.proj.conv", c_prev, width, 1)
            _add_bn(params, f"block{i}.proj.bn", width)
        c_prev = width
    # classifier head: plain 1/sqrt(fan_in) scaling keeps initial logits O(1)
    head_w = rng.normal(0.0, 1.0 / np.sqrt(c_prev),
                        size=(config.num_classes, c_prev))
    params.tensors["head.w"] = Tensor(head_w, requires_grad=True)
    params.tensors["head.b"] = Tensor(np.zeros(config.num_classes),
                                      requires_grad=True)
    return params


def _conv_bn(params: ModelParams, name_conv: str, name_bn: str, x: Tensor,
             mode: Mode, dilation: int, padding: int) -> Tensor:
    y = ad.conv1d(
        x,
        params.tensors[f"{name_conv}.w"],
        params.tensors[f"{name_conv}.b"],
        stride=1,
        padding=padding,
        dilation=dilation,
    )
    return ad.batch_norm1d(
        y,
        params.tensors[f"{name_bn}.gamma"],
        params.tensors[f"{name_bn}.beta"],
        params.bn_state[name_bn],
        mode,
    )


def block_forward(params: ModelParams, index: int, x: Tensor, mode: Mode) -> Tensor:
    """One BasicBlock: conv-BN-ReLU-conv-BN plus skip, then ReLU."""
    dil = params.config.block_dilations[index - 1]
    prefix = f"block{index}"
    h = ad.relu(_conv_bn(params, f"{prefix}.conv1", f"{prefix}.bn1", x, mode,
                         dilation=dil, padding=dil))
    h = _conv_bn(params, f"{prefix}.conv2", f"{prefix}.bn2", h, mode,
                 dilation=dil, padding=dil)
    if f"{prefix}.proj.conv.w" in params.tensors:
        skip = _conv_bn(params, f"{prefix}.proj.conv", f"{prefix}.proj.bn",
                        x, mode, dilation=1, padding=0)
    else:
        skip = x
    return ad.relu(ad.add(h, skip))


def forward_logits(params: ModelParams, batch, mode: Mode) -> Tensor:
    """Class logits for a (N, C_in, L) batch; records onto any active tape."""
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    cfg = params.config
    if x.data.ndim != 3 or x.data.shape[1] != cfg.in_channels:
        raise ShapeMismatch(
            f"batch must be (N, {cfg.in_channels}, {cfg.window_len}), "
            f"got {x.shape}")
    if x.data.shape[2] != cfg.window_len:
        raise ShapeMismatch(
            f"window length {x.data.shape[2]} != "
            f"{cfg.window_len} = window_seconds * target_hz")
    h = ad.relu(_conv_bn(params, "stem.conv", "stem.bn", x, mode,
                         dilation=1, padding=(cfg.kernel - 1) // 2))
    for i in range(1, 4):
        h = block_forward(params, i, h, mode)
        h = ad.avg_pool1d(h, kernel=2, stride=2)
    h = ad.avg_pool1d(h, kernel=h.data.shape[2], stride=h.data.shape[2])
    h = ad.reshape(h, (h.data.shape[0], h.data.shape[1]))
    return ad.affine(h, params.tensors["head.w"], params.tensors["head.b"])


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    return expz / expz.sum(axis=1, keepdims=True)


def forward(params: ModelParams, batch, mode: Mode = Mode.EVAL) -> Tensor:
    """Per-window class probabilities; each row sums to 1."""
    logits = forward_logits(params, batch, mode)
    return Tensor(softmax(logits.data))


def predict_probs(params: ModelParams, windows: np.ndarray,
                  batch_size: int = 256) -> np.ndarray:
    """Eval-mode probabilities for (n, C, L) stacked windows, batched."""
    chunks = []
    for i in range(0, windows.shape[0], batch_size):
        chunks.append(forward(params, windows[i:i + batch_size], Mode.EVAL).data)
    if not chunks:
        return np.zeros((0, params.config.num_classes))
    return np.concatenate(chunks, axis=0)


# --- checkpoint container -------------------------------------------------
#
# Layout (all integers little-endian):
#   magic   8 bytes  b"HARCKPT\n"
#   version u32      currently 1
#   config  u32 length + that many bytes of JSON (sorted keys)
#   count   u32      number of array records
#   record  u16 name length + name utf-8
#           u8 ndim, then ndim * u32 dims
#           prod(dims) * f32 payload
#   digest  32 bytes sha256 of everything above

_MAGIC = b"HARCKPT\n"
_VERSION = 1


def save_checkpoint(params: ModelParams, config: HarModelConfig,
                    path: str | Path) -> None:
    """Write a self-describing binary checkpoint (float32 payloads)."""
    buf = bytearray()
    buf += _MAGIC
    buf += struct.pack("<I", _VERSION)
    cfg = {
        "in_channels": config.in_channels,
        "num_classes": config.num_classes,
        "window_seconds": config.window_seconds,
        "target_hz": config.target_hz,
        "kernel": config.kernel,
        "block_widths": list(config.block_widths),
        "block_dilations": list(config.block_dilations),
        "seed": config.seed,
    }
    cfg_bytes = json.dumps(cfg, sort_keys=True).encode("utf-8")
    buf += struct.pack("<I", len(cfg_bytes))
    buf += cfg_bytes

    records: list[tuple[str, np.ndarray]] = []
    for name in sorted(params.tensors):
        records.append((name, params.tensors[name].data))
    for name in sorted(params.bn_state):
        records.append((f"{name}.running_mean", params.bn_state[name].mean))
        records.append((f"{name}.running_var", params.bn_state[name].var))

    buf += struct.pack("<I", len(records))
    for name, arr in records:
        encoded = name.encode("utf-8")
        buf += struct.pack("<H", len(encoded))
        buf += encoded
        buf += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            buf += struct.pack("<I", dim)
        buf += arr.astype("<f4").tobytes()
    buf += hashlib.sha256(bytes(buf)).digest()
    Path(path).write_bytes(bytes(buf))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CorruptCheckpoint("checkpoint truncated")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path: str | Path) -> tuple[ModelParams, HarModelConfig]:
    """Load and verify a checkpoint written by save_checkpoint."""
    blob = Path(path).read_bytes()
    if len(blob) < len(_MAGIC) + 4 + 32:
        raise CorruptCheckpoint(f"{path}: file too short")
    digest = blob[-32:]
    body = blob[:-32]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpoint(f"{path}: digest mismatch")
    r = _Reader(body)
    if r.take(len(_MAGIC)) != _MAGIC:
        raise CorruptCheckpoint(f"{path}: bad magic")
    version = r.u32()
    if version != _VERSION:
        raise CorruptCheckpoint(f"{path}: unsupported version {version}")
    try:
        cfg_raw = json.loads(r.take(r.u32()).decode("utf-8"))
        config = HarModelConfig(
            in_channels=int(cfg_raw["in_channels"]),
            num_classes=int(cfg_raw["num_classes"]),
            window_seconds=float(cfg_raw["window_seconds"]),
            target_hz=float(cfg_raw["target_hz"]),
            kernel=int(cfg_raw["kernel"]),
            block_widths=tuple(cfg_raw["block_widths"]),
            block_dilations=tuple(cfg_raw["block_dilations"]),
            seed=int(cfg_raw["seed"]),
        )
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"{path}: bad config block ({exc})") from None

    arrays: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.take(r.u16()).decode("utf-8")
        ndim = r.u8()
        shape = tuple(r.u32() for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        payload = r.take(4 * count)
        arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float64)
    if r.pos != len(body):
        raise CorruptCheckpoint(f"{path}: trailing bytes")

    params = build_model(config)
    expected = {name: t.data.shape for name, t in params.tensors.items()}
    for bn, st in params.bn_state.items():
        expected[f"{bn}.running_mean"] = st.mean.shape
        expected[f"{bn}.running_var"] = st.var.shape
    if set(arrays) != set(expected):
        raise CorruptCheckpoint(f"{path}: parameter names do not match config")
    for name, arr in arrays.items():
        if arr.shape != expected[name]:
            raise CorruptCheckpoint(
                f"{path}: shape mismatch for {name}: {arr.shape} vs "
                f"{expected[name]}")
    for name, t in params.tensors.items():
        t.data = arrays[name]
    for bn, st in params.bn_state.items():
        st.mean = arrays[f"{bn}.running_mean"]
        st.var = arrays[f"{bn}.running_var"]
    return params, config


def parameter_count(config: HarModelConfig) -> int:
    """Closed-form learnable parameter count for a config.

    stem: w0*Cin*k + w0 conv params plus 2*w0 batch-norm scales/shifts;
    each block: two convs with batch norms, plus a 1x1 projection conv and
    batch norm when the width changes; head: classes*(w3 + 1).
    """
    k = config.kernel
    w = config.block_widths
    total = w[0] * config.in_channels * k + w[0] + 2 * w[0]
    c_prev = w[0]
    for width in w:
        total += width * c_prev * k + width + 2 * width      # conv1 + bn1
        total += width * width * k + width + 2 * width       # conv2 + bn2
        if width != c_prev:
            total += width * c_prev + width + 2 * width      # projection
        c_prev = width
    total += config.num_classes * (c_prev + 1)
    return total
