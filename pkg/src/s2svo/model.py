"""Two-stream matching network.

``V-Net`` encodes the visual input (RGB image or semantic blob), ``Q-Net``
encodes the verb-object query, and ``C-Net`` maps the concatenated features
to a closeness score in (0, 1).
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigurationError, DimensionError, FormatError, NumericError
from .wordvec import EmbeddingTable, embed_label

INPUT_MODES = ("rgb", "s2s", "orthovec2s")
COMBINERS = ("sum", "catV", "catH", "hadamard")
BACKBONES = ("paper18", "paper34", "paper50", "tiny")
PAPER_DIMS = {"paper18": 512, "paper34": 512, "paper50": 2048}
HADAMARD_EPS = 1e-12

CKPT_MAGIC = b"S2SM"
CKPT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    input_mode: str = "s2s"
    in_channels: int = 300
    word_dim: int = 300
    d_v: int = 128
    q_hidden: int | None = None  # defaults to d_v
    c_hidden: int | None = None  # defaults to 2 * d_v (1024 / 4096 for the ResNets)
    combiner: str = "sum"
    separate_qnets: bool = False
    backbone: str = "tiny"
    tiny_width: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.input_mode not in INPUT_MODES:
            raise ConfigurationError(f"input_mode must be one of {INPUT_MODES}")
        if self.combiner not in COMBINERS:
            raise ConfigurationError(f"combiner must be one of {COMBINERS}")
        if self.backbone not in BACKBONES:
            raise ConfigurationError(f"backbone must be one of {BACKBONES}")
        if self.input_mode == "rgb" and self.in_channels != 3:
            raise ConfigurationError("rgb input requires in_channels=3")
        if self.backbone in PAPER_DIMS and self.d_v != PAPER_DIMS[self.backbone]:
            raise ConfigurationError(
                f"{self.backbone} produces d_v={PAPER_DIMS[self.backbone]}, got {self.d_v}"
            )
        if min(self.in_channels, self.word_dim, self.d_v, self.tiny_width) <= 0:
            raise ConfigurationError("dimensions must be positive")
        if self.separate_qnets and self.d_v % 2:
            raise ConfigurationError("separate Q-Nets need an even d_v")
        if self.q_hidden is None:
            object.__setattr__(self, "q_hidden", self.d_v)
        if self.c_hidden is None:
            object.__setattr__(self, "c_hidden", 2 * self.d_v)

    @property
    def query_dim(self) -> int:
        """Q-Net input width for the single-network path."""
        return 2 * self.word_dim if self.combiner in ("catV", "catH") else self.word_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        return cls(**d)


def combine_query(v_verb, v_obj, mode: str = "sum") -> np.ndarray:
    """Merge verb and object vectors into one query (batched over leading axes)."""
    a = np.asarray(v_verb, dtype=np.float64)
    b = np.asarray(v_obj, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"verb vector {a.shape} and object vector {b.shape} differ")
    if mode == "sum":
        return a + b
    if mode == "catV":
        return np.concatenate([a, b], axis=-1)
    if mode == "catH":
        return np.stack([a, b], axis=-1).reshape(*a.shape[:-1], 2 * a.shape[-1])
    if mode == "hadamard":
        p = a * b
        norm = np.linalg.norm(p, axis=-1, keepdims=True)
        return p / np.maximum(norm, HADAMARD_EPS)
    raise ConfigurationError(f"unknown combiner {mode!r}")


def _conv_block(cin: int, cout: int) -> nn.Sequential:
    # the 2x downsample is folded into the convolution stride
    return nn.Sequential(nn.Conv2d(cin, cout, 3, stride=2, padding=1), nn.ReLU())


class TinyBackbone(nn.Module):
    """Four conv3x3/ReLU/stride-2 blocks then global average pooling."""

    def __init__(self, in_channels: int, d_v: int, width: int = 16):
        super().__init__()
        chans = [in_channels, width, 2 * width, 4 * width, d_v]
        self.features = nn.Sequential(*(_conv_block(a, b) for a, b in zip(chans, chans[1:])))
        self.pool = nn.AdaptiveAvgPool2d(1)
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")
                nn.init.zeros_(m.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.pool(self.features(x)).flatten(1)


def _resnet(name: str, in_channels: int) -> nn.Module:
    import torchvision

    net = getattr(torchvision.models, {"paper18": "resnet18", "paper34": "resnet34", "paper50": "resnet50"}[name])(
        weights=None
    )
    net.conv1 = nn.Conv2d(in_channels, 64, kernel_size=7, stride=2, padding=3, bias=False)
    nn.init.kaiming_normal_(net.conv1.weight, mode="fan_in", nonlinearity="relu")
    net.fc = nn.Identity()
    return net


def mlp(d_in: int, hidden: int, d_out: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(d_in, hidden), nn.ReLU(), nn.Linear(hidden, d_out))


class TwoStreamModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            if config.backbone == "tiny":
                self.vnet = TinyBackbone(config.in_channels, config.d_v, config.tiny_width)
            else:
                self.vnet = _resnet(config.backbone, config.in_channels)
            if config.separate_qnets:
                half = config.d_v // 2
                self.qnet_verb = mlp(config.word_dim, config.q_hidden, half)
                self.qnet_obj = mlp(config.word_dim, config.q_hidden, half)
            else:
                self.qnet = mlp(config.query_dim, config.q_hidden, config.d_v)
            self.cnet = mlp(2 * config.d_v, config.c_hidden, 1)

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def _tensor(self, x) -> torch.Tensor:
        return torch.as_tensor(x, dtype=self.dtype)

    def qnet_parameters(self) -> list[nn.Parameter]:
        """Affine (weight and bias) parameters of the query encoder(s)."""
        nets = [self.qnet_verb, self.qnet_obj] if self.config.separate_qnets else [self.qnet]
        return [p for net in nets for m in net if isinstance(m, nn.Linear) for p in m.parameters()]

    def forward_vnet(self, x) -> torch.Tensor:
        """Visual features from channels-last input ``(H, W, C)`` or ``(B, H, W, C)``."""
        x = self._tensor(x)
        single = x.ndim == 3
        if single:
            x = x.unsqueeze(0)
        if x.ndim != 4 or x.shape[-1] != self.config.in_channels:
            raise DimensionError(
                f"V-Net expects (..., H, W, {self.config.in_channels}) input, got {tuple(x.shape)}"
            )
        out = self.vnet(x.permute(0, 3, 1, 2))
        return out[0] if single else out

    def forward_qnet(self, q) -> torch.Tensor:
        if self.config.separate_qnets:
            raise ConfigurationError("model uses separate Q-Nets; call forward_qnet_separate")
        q = self._tensor(q)
        if q.shape[-1] != self.config.query_dim:
            raise DimensionError(f"Q-Net expects {self.config.query_dim} inputs, got {q.shape[-1]}")
        return self.qnet(q)

    def forward_qnet_separate(self, v_verb, v_obj) -> torch.Tensor:
        if not self.config.separate_qnets:
            raise ConfigurationError("model has a single Q-Net; call forward_qnet")
        a, b = self._tensor(v_verb), self._tensor(v_obj)
        if a.shape[-1] != self.config.word_dim or b.shape[-1] != self.config.word_dim:
            raise DimensionError(f"separate Q-Nets expect {self.config.word_dim}-dim vectors")
        return torch.cat([self.qnet_verb(a), self.qnet_obj(b)], dim=-1)

    def encode_query(self, v_verb, v_obj) -> torch.Tensor:
        if self.config.separate_qnets:
            return self.forward_qnet_separate(v_verb, v_obj)
        return self.forward_qnet(combine_query(v_verb, v_obj, self.config.combiner))

    def closeness(self, f_v, f_q) -> torch.Tensor:
        f_v, f_q = self._tensor(f_v), self._tensor(f_q)
        if f_v.shape[-1] != self.config.d_v or f_q.shape[-1] != self.config.d_v:
            raise DimensionError(f"closeness expects {self.config.d_v}-dim features")
        if not (torch.isfinite(f_v).all() and torch.isfinite(f_q).all()):
            raise NumericError("non-finite feature passed to closeness")
        tau = torch.sigmoid(self.cnet(torch.cat([f_v, f_q], dim=-1))).squeeze(-1)
        # keep the score strictly inside (0, 1) even when the sigmoid saturates
        eps = torch.finfo(tau.dtype).eps
        return tau.clamp(eps, 1 - eps)

    def forward(self, visual, v_verb, v_obj) -> torch.Tensor:
        return self.closeness(self.forward_vnet(visual), self.encode_query(v_verb, v_obj))


def build_model(config: ModelConfig) -> TwoStreamModel:
    return TwoStreamModel(config)


@torch.no_grad()
def score(model: TwoStreamModel, visual, verb: str, obj: str, table: EmbeddingTable) -> float:
    """Closeness of one prepared visual input to the query ``verb obj``."""
    model.eval()
    f_v = model.forward_vnet(visual)
    f_q = model.encode_query(embed_label(table, verb), embed_label(table, obj))
    return float(model.closeness(f_v, f_q))


# --- checkpoints -------------------------------------------------------------

def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def write_checkpoint(
    path: str | Path,
    model: TwoStreamModel,
    meta: Mapping | None = None,
    extra: Mapping[str, torch.Tensor] | None = None,
) -> None:
    """Serialize config, ``meta`` and every tensor as little-endian float32.

    ``extra`` holds auxiliary tensors (optimizer state); they share the record
    stream and must not collide with model state names.
    """
    records = {k: v for k, v in model.state_dict().items()}
    for k, v in (extra or {}).items():
        if k in records:
            raise ValueError(f"extra tensor {k!r} collides with model state")
        records[k] = v
    header = json.dumps({"model": model.config.to_dict(), "meta": dict(meta or {})}, sort_keys=True)
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<I", CKPT_VERSION))
    buf.write(_pack_str(header))
    buf.write(struct.pack("<I", len(records)))
    for name in sorted(records):
        t = records[name].detach().cpu()
        buf.write(_pack_str(name))
        buf.write(struct.pack("<I", t.ndim))
        buf.write(struct.pack(f"<{t.ndim}I", *t.shape))
        buf.write(np.ascontiguousarray(t.numpy(), dtype="<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


def read_checkpoint(path: str | Path) -> tuple[TwoStreamModel, dict, dict[str, torch.Tensor]]:
    """Inverse of :func:`write_checkpoint`: ``(model, meta, extra tensors)``."""
    data = Path(path).read_bytes()
    view = memoryview(data)
    if data[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: not an S2SM checkpoint")
    pos = 4

    def take(fmt: str):
        nonlocal pos
        vals = struct.unpack_from(fmt, data, pos)
        pos += struct.calcsize(fmt)
        return vals

    def take_str() -> str:
        nonlocal pos
        (n,) = take("<I")
        s = bytes(view[pos : pos + n]).decode("utf-8")
        pos += n
        return s

    try:
        (version,) = take("<I")
        if version != CKPT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(take_str())
        (count,) = take("<I")
        tensors: dict[str, torch.Tensor] = {}
        for _ in range(count):
            name = take_str()
            (ndim,) = take("<I")
            dims = take(f"<{ndim}I") if ndim else ()
            n = int(np.prod(dims, dtype=np.int64))
            arr = np.frombuffer(data, dtype="<f4", count=n, offset=pos).reshape(dims)
            pos += 4 * n
            tensors[name] = torch.from_numpy(arr.astype(np.float32))
    except (struct.error, ValueError) as exc:
        raise FormatError(f"{path}: truncated or corrupt checkpoint ({exc})") from None
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes")

    model = build_model(ModelConfig.from_dict(header["model"]))
    state = model.state_dict()
    loaded = {}
    for k, ref in state.items():
        if k not in tensors:
            raise FormatError(f"{path}: missing tensor {k!r}")
        loaded[k] = tensors.pop(k).to(ref.dtype)
    model.load_state_dict(loaded)
    return model, header.get("meta", {}), tensors
