"""Desk-scale model zoo, frozen snapshots and the checkpoint format.

All models consume channels-last images ``(batch, h, w, c)`` and return
logits ``(batch, K)``.
"""

from __future__ import annotations

import copy
import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from sdbox.errors import FrozenModelError, IntegrityError, ParameterError, VersionError

CKPT_MAGIC = b"SDBCKPT\x00"
CKPT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    name: str
    input_shape: tuple[int, int, int] = (8, 8, 3)
    num_classes: int = 10
    init_seed: int = 0
    width: int = 32
    hidden: int = 96

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        d["input_shape"] = tuple(d["input_shape"])
        return cls(**d)


class _ChannelsLast(nn.Module):
    def forward(self, x):
        return x.permute(0, 3, 1, 2)


class BasicBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(c_out)
        self.shortcut = nn.Identity()
        if stride != 1 or c_in != c_out:
            self.shortcut = nn.Sequential(nn.Conv2d(c_in, c_out, 1, stride, bias=False), nn.BatchNorm2d(c_out))

    def forward(self, x):
        out = torch.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return torch.relu(out + self.shortcut(x))


class ResNetTeacher(nn.Module):
    """Two-stage residual CNN (about 78K parameters at width 32)."""

    def __init__(self, input_shape, num_classes: int, width: int = 32):
        super().__init__()
        c = input_shape[2]
        self.to_nchw = _ChannelsLast()
        self.stem = nn.Sequential(nn.Conv2d(c, width, 3, 1, 1, bias=False), nn.BatchNorm2d(width), nn.ReLU())
        self.layer1 = BasicBlock(width, width)
        self.layer2 = BasicBlock(width, 2 * width, stride=2)
        self.head = nn.Linear(2 * width, num_classes)

    def forward(self, x):
        h = self.layer2(self.layer1(self.stem(self.to_nchw(x))))
        return self.head(h.mean(dim=(2, 3)))


class SmallCNN(nn.Module):
    def __init__(self, input_shape, num_classes: int, width: int = 16):
        super().__init__()
        hgt, wid, c = input_shape
        self.to_nchw = _ChannelsLast()
        self.features = nn.Sequential(
            nn.Conv2d(c, width, 3, 1, 1), nn.ReLU(),
            nn.Conv2d(width, 2 * width, 3, 1, 1), nn.ReLU(),
            nn.Conv2d(2 * width, 2 * width, 3, 2, 1), nn.ReLU(),
        )
        flat = 2 * width * ((hgt + 1) // 2) * ((wid + 1) // 2)
        self.head = nn.Linear(flat, num_classes)

    def forward(self, x):
        return self.head(self.features(self.to_nchw(x)).flatten(1))


class MLP(nn.Module):
    def __init__(self, input_shape, num_classes: int, hidden: int = 96):
        super().__init__()
        self.fc1 = nn.Linear(int(np.prod(input_shape)), hidden)
        self.fc2 = nn.Linear(hidden, num_classes)

    def forward(self, x):
        return self.fc2(torch.relu(self.fc1(x.flatten(1))))


def _resnet(spec):
    return ResNetTeacher(spec.input_shape, spec.num_classes, spec.width)


def _cnn(spec):
    return SmallCNN(spec.input_shape, spec.num_classes, min(spec.width, 16))


def _mlp(spec):
    return MLP(spec.input_shape, spec.num_classes, spec.hidden)


REGISTRY = {
    "resnet_teacher": _resnet,
    "cnn_student": _cnn,
    "mlp_student": _mlp,
}

# (8, 8, 3) input, 10 classes, default widths
EXPECTED_PARAM_COUNTS = {
    "resnet_teacher": 77_866,
    "cnn_student": 19_466,
    "mlp_student": 19_498,
}


def build_model(spec: ModelSpec) -> nn.Module:
    if spec.name not in REGISTRY:
        raise ParameterError(f"unknown model {spec.name!r}; known: {sorted(REGISTRY)}")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(spec.init_seed)
        model = REGISTRY[spec.name](spec)
    model.spec = spec
    return model.eval()


def count_params(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def state_checksum(model_or_state) -> str:
    state = model_or_state.state_dict() if hasattr(model_or_state, "state_dict") else model_or_state
    h = hashlib.sha256()
    for name, t in state.items():
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


class FrozenModel:
    """Read-only copy of a model: forward only, always in eval mode, no grad."""

    def __init__(self, model: nn.Module):
        m = copy.deepcopy(model).eval()
        for p in m.parameters():
            p.requires_grad_(False)
        object.__setattr__(self, "_module", m)
        object.__setattr__(self, "spec", getattr(model, "spec", None))

    def __call__(self, x):
        with torch.no_grad():
            return self._module(x)

    forward = __call__

    def parameters(self):
        raise FrozenModelError("frozen model parameters cannot be optimized")

    def train(self, mode: bool = True):
        raise FrozenModelError("frozen model cannot enter training mode")

    def load_state_dict(self, *a, **k):
        raise FrozenModelError("frozen model cannot be overwritten")

    def __setattr__(self, name, value):
        raise FrozenModelError("frozen model is immutable")

    def state_dict(self):
        return {k: v.clone() for k, v in self._module.state_dict().items()}

    def checksum(self) -> str:
        return state_checksum(self._module)


def snapshot_frozen(model) -> FrozenModel:
    if isinstance(model, FrozenModel):
        return model
    return FrozenModel(model)


# Checkpoint layout: magic | u16 version | u32 header length | JSON header |
# raw little-endian tensor blob (order and shapes listed in the header) |
# sha256 of everything before it.
_PRE = struct.Struct("<8sHI")


def save_checkpoint(model, path, *, step: int = 0, extra: dict | None = None) -> Path:
    spec = model.spec
    state = model.state_dict()
    tensors, blob = [], bytearray()
    for name, t in state.items():
        arr = t.detach().cpu().contiguous().numpy()
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        tensors.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)})
        blob += arr.tobytes()
    header = {"spec": spec.to_dict(), "seed": spec.init_seed, "step": step,
              "tensors": tensors, "extra": extra or {}}
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = _PRE.pack(CKPT_MAGIC, CKPT_VERSION, len(hbytes)) + hbytes + bytes(blob)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(body + hashlib.sha256(body).digest())
    return path


def read_checkpoint(path) -> tuple[dict, dict]:
    blob = Path(path).read_bytes()
    if len(blob) < _PRE.size + 32:
        raise IntegrityError(f"{path}: truncated checkpoint")
    body, digest = blob[:-32], blob[-32:]
    magic, version, hlen = _PRE.unpack_from(body)
    if magic != CKPT_MAGIC:
        raise IntegrityError(f"{path}: not a checkpoint")
    if version != CKPT_VERSION:
        raise VersionError(f"{path}: unsupported checkpoint version {version}")
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError(f"{path}: checksum mismatch")
    header = json.loads(body[_PRE.size:_PRE.size + hlen])
    offset = _PRE.size + hlen
    state = {}
    for t in header["tensors"]:
        dt = np.dtype(t["dtype"])
        n = int(np.prod(t["shape"])) * dt.itemsize
        arr = np.frombuffer(body[offset:offset + n], dtype=dt).reshape(t["shape"])
        state[t["name"]] = torch.from_numpy(arr.copy())
        offset += n
    return header, state


def load_checkpoint(path) -> tuple[nn.Module, dict]:
    header, state = read_checkpoint(path)
    model = build_model(ModelSpec.from_dict(header["spec"]))
    model.load_state_dict(state)
    return model.eval(), header
