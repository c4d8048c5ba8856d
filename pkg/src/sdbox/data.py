"""Datasets and the dual-stream batch pipeline.

Images are stored channels-last in raw pixel space [0, 1]. Normalization is
applied to batches after the key has been embedded, so the clean and proxy
streams share one set of statistics.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from sdbox.errors import IntegrityError, ParameterError, ShapeError, VersionError
from sdbox.keying import Key, embed_key
from sdbox.sdb_losses import StreamBatch

DATA_FORMAT = "sdb-images"
DATA_VERSION = 1


@dataclass(frozen=True, eq=False)
class DatasetHandle:
    name: str
    split: str
    num_classes: int
    shape: tuple[int, int, int]
    images: np.ndarray  # (N, h, w, c) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64
    mean: tuple[float, ...]
    std: tuple[float, ...]

    def __post_init__(self):
        if self.images.shape[1:] != tuple(self.shape):
            raise ShapeError(f"images {self.images.shape[1:]} do not match shape {self.shape}")
        if len(self.images) != len(self.labels):
            raise ShapeError("images and labels differ in length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ParameterError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)

    def normalizer(self) -> "Normalizer":
        return Normalizer(self.mean, self.std)

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.images, dtype="<f4").tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype="<i8").tobytes())
        return h.hexdigest()

    def sample_digests(self) -> set[str]:
        return {hashlib.sha256(np.ascontiguousarray(im, dtype="<f4").tobytes()).hexdigest()
                for im in self.images}


class Normalizer:
    """Per-channel standardization of channels-last tensors."""

    def __init__(self, mean, std):
        self.mean = torch.tensor(mean, dtype=torch.float32)
        self.std = torch.tensor(std, dtype=torch.float32)

    def __call__(self, x: torch.Tensor) -> torch.Tensor:
        return (x - self.mean.to(x.dtype)) / self.std.to(x.dtype)


def _smooth_field(rng, shape, n_waves, max_freq):
    """Sum of random low-frequency 2-D cosines per channel, scaled to [-1, 1]."""
    h, w, c = shape
    yy, xx = np.meshgrid(np.arange(h) / h, np.arange(w) / w, indexing="ij")
    out = np.zeros(shape)
    for ch in range(c):
        for _ in range(n_waves):
            fy, fx = rng.integers(0, max_freq + 1, size=2)
            if fy == 0 and fx == 0:
                fx = 1
            phase = rng.uniform(0, 2 * np.pi)
            out[..., ch] += rng.normal() * np.cos(2 * np.pi * (fy * yy + fx * xx) + phase)
    return out / (np.abs(out).max() + 1e-12)


def make_synthetic(
    seed: int = 0,
    num_classes: int = 10,
    per_class: int = 500,
    shape=(8, 8, 3),
    *,
    test_per_class: int = 100,
    noise: float = 0.2,
    nuisance: float = 0.1,
    max_shift: int = 2,
    name: str = "synthetic",
) -> tuple[DatasetHandle, DatasetHandle]:
    """Class-conditional smooth patterns under random shifts, clutter and noise.

    Returns ``(train, test)``. Each class owns a low-frequency prototype; a
    sample is the prototype, circularly shifted by up to ``max_shift``
    pixels, with a random contrast, an unrelated smooth clutter field and
    Gaussian pixel noise, clipped to [0, 1].
    """
    shape = tuple(int(s) for s in shape)
    if num_classes < 2 or per_class < 1 or test_per_class < 1 or len(shape) != 3 or min(shape) < 1:
        raise ParameterError("need num_classes >= 2, positive per-class counts and a (h, w, c) shape")
    rng = np.random.default_rng(seed)
    protos = [_smooth_field(rng, shape, 3, 2) for _ in range(num_classes)]
    n_each = per_class + test_per_class
    images = np.empty((num_classes * n_each, *shape), dtype=np.float32)
    labels = np.repeat(np.arange(num_classes), n_each)
    for i, c in enumerate(labels):
        dy, dx = rng.integers(-max_shift, max_shift + 1, size=2)
        signal = np.roll(protos[c], (dy, dx), axis=(0, 1)) * rng.uniform(0.6, 1.0)
        clutter = _smooth_field(rng, shape, 2, 3) * nuisance
        img = 0.5 + 0.3 * signal + clutter + rng.normal(0.0, noise, size=shape)
        images[i] = np.clip(img, 0.0, 1.0)
    is_test = np.tile(np.arange(n_each) >= per_class, num_classes)
    train_x, train_y = images[~is_test], labels[~is_test].astype(np.int64)
    test_x, test_y = images[is_test], labels[is_test].astype(np.int64)
    mean = tuple(float(m) for m in train_x.mean(axis=(0, 1, 2)))
    std = tuple(float(s) for s in train_x.std(axis=(0, 1, 2)))
    common = dict(name=name, num_classes=num_classes, shape=shape, mean=mean, std=std)
    return (DatasetHandle(split="train", images=train_x, labels=train_y, **common),
            DatasetHandle(split="test", images=test_x, labels=test_y, **common))


def export_dataset(handles, root) -> Path:
    """Write splits as ``<root>/<split>/{index.json, images.bin}`` plus ``stats.json``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    handles = list(handles)
    for h in handles:
        d = root / h.split
        d.mkdir(exist_ok=True)
        samples, blob, offset = [], bytearray(), 0
        for im, y in zip(h.images, h.labels):
            raw = np.ascontiguousarray(im, dtype="<f4").tobytes()
            samples.append({"offset": offset, "label": int(y), "sha256": hashlib.sha256(raw).hexdigest()})
            blob += raw
            offset += len(raw)
        (d / "images.bin").write_bytes(bytes(blob))
        index = {"format": DATA_FORMAT, "version": DATA_VERSION, "name": h.name, "split": h.split,
                 "num_classes": h.num_classes, "shape": list(h.shape), "dtype": "<f4", "samples": samples}
        (d / "index.json").write_text(json.dumps(index))
    ref = handles[0]
    (root / "stats.json").write_text(json.dumps({"mean": list(ref.mean), "std": list(ref.std)}))
    return root


def load_image_dataset(path, format: str = DATA_FORMAT, split: str = "train") -> DatasetHandle:
    """Load and validate one split written by :func:`export_dataset`."""
    root = Path(path)
    if format != DATA_FORMAT:
        raise ParameterError(f"unsupported dataset format {format!r}")
    d = root / split
    for f in (d / "index.json", d / "images.bin", root / "stats.json"):
        if not f.exists():
            raise IntegrityError(f"missing file {f}")
    index = json.loads((d / "index.json").read_text())
    if index.get("format") != DATA_FORMAT:
        raise IntegrityError(f"{d}: not an {DATA_FORMAT} index")
    if index.get("version") != DATA_VERSION:
        raise VersionError(f"{d}: unsupported dataset version {index.get('version')}")
    stats = json.loads((root / "stats.json").read_text())
    shape = tuple(index["shape"])
    K = index["num_classes"]
    nbytes = 4 * math.prod(shape)
    blob = (d / "images.bin").read_bytes()
    images = np.empty((len(index["samples"]), *shape), dtype=np.float32)
    labels = np.empty(len(index["samples"]), dtype=np.int64)
    for i, rec in enumerate(index["samples"]):
        raw = blob[rec["offset"]:rec["offset"] + nbytes]
        if len(raw) != nbytes:
            raise IntegrityError(f"sample {i}: truncated blob ({len(raw)} of {nbytes} bytes)")
        if hashlib.sha256(raw).hexdigest() != rec["sha256"]:
            raise IntegrityError(f"sample {i}: checksum mismatch")
        if not 0 <= rec["label"] < K:
            raise ParameterError(f"sample {i}: label {rec['label']} out of range for {K} classes")
        images[i] = np.frombuffer(raw, dtype="<f4").reshape(shape)
        labels[i] = rec["label"]
    return DatasetHandle(name=index["name"], split=split, num_classes=K, shape=shape, images=images,
                         labels=labels, mean=tuple(stats["mean"]), std=tuple(stats["std"]))


def _augment(x: torch.Tensor, gen: torch.Generator) -> torch.Tensor:
    """Random horizontal flip and 1-pixel-padded random crop."""
    n, h, w, _ = x.shape
    flip = torch.rand(n, generator=gen) < 0.5
    x = torch.where(flip.view(-1, 1, 1, 1), x.flip(2), x)
    padded = torch.nn.functional.pad(x.permute(0, 3, 1, 2), (1, 1, 1, 1), mode="replicate").permute(0, 2, 3, 1)
    offs = torch.randint(0, 3, (n, 2), generator=gen)
    return torch.stack([padded[i, oy:oy + h, ox:ox + w] for i, (oy, ox) in enumerate(offs.tolist())])


def dual_stream_batches(
    handle: DatasetHandle,
    key: Key | None = None,
    batch_size: int = 64,
    seed: int = 0,
    deterministic: bool = True,
    *,
    shuffle: bool = True,
    augment: bool = False,
    normalize: bool = True,
):
    """Yield :class:`StreamBatch` objects ``(x, x_tilde, y)``.

    ``x_tilde`` is ``None`` without a key. Augmentation, when on, happens
    before embedding so the key reaches the network undistorted.
    """
    if key is not None and tuple(key.shape) != tuple(handle.shape):
        raise ShapeError(f"key shape {key.shape} does not match dataset shape {handle.shape}")
    if batch_size < 1:
        raise ParameterError("batch_size must be >= 1")
    gen = torch.Generator()
    if deterministic:
        gen.manual_seed(seed)
    else:
        gen.seed()
    n = len(handle)
    order = torch.randperm(n, generator=gen) if shuffle else torch.arange(n)
    images = torch.from_numpy(handle.images)
    labels = torch.from_numpy(handle.labels)
    norm = handle.normalizer() if normalize else (lambda t: t)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        x = images[idx]
        if augment:
            x = _augment(x, gen)
        xt = norm(embed_key(x, key)) if key is not None else None
        yield StreamBatch(x=norm(x), x_tilde=xt, y=labels[idx])


def num_batches(handle: DatasetHandle, batch_size: int) -> int:
    return math.ceil(len(handle) / batch_size)


def subset(handle: DatasetHandle, n: int) -> DatasetHandle:
    return replace(handle, images=handle.images[:n], labels=handle.labels[:n])
