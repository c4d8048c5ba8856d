"""Secret key generation, persistence and embedding.

A key is a random image-sized pattern ``pattern`` plus a blending weight
``lam``. Proxy images are ``lam * x + (1 - lam) * pattern``, computed in raw
pixel space (values in [0, 1], channels last) before any normalization.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from sdbox.errors import IntegrityError, ParameterError, ShapeError, VersionError

KEY_MAGIC = b"SDBKEY\x00\x00"
KEY_VERSION = 1
# magic, version, seed, lambda, h, w, c
_HEADER = struct.Struct("<8sHQdIII")
_DIGEST_SIZE = 32


@dataclass(frozen=True, eq=False)
class Key:
    seed: int
    lam: float
    shape: tuple[int, int, int]
    pattern: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.pattern.shape != tuple(self.shape):
            raise ShapeError(f"pattern shape {self.pattern.shape} != {self.shape}")
        if self.pattern.size and (self.pattern.min() < 0.0 or self.pattern.max() > 1.0):
            raise ParameterError("key pattern must lie in [0, 1]")
        self.pattern.setflags(write=False)

    def __eq__(self, other):
        if not isinstance(other, Key):
            return NotImplemented
        return (
            self.seed == other.seed
            and self.lam == other.lam
            and tuple(self.shape) == tuple(other.shape)
            and self.pattern.dtype == other.pattern.dtype
            and np.array_equal(self.pattern, other.pattern)
        )

    def __hash__(self):
        return hash(key_fingerprint(self))

    @property
    def fingerprint(self) -> str:
        return key_fingerprint(self)


def _check_shape(shape) -> tuple[int, int, int]:
    shape = tuple(int(s) for s in shape)
    if len(shape) != 3 or any(s < 1 for s in shape):
        raise ParameterError(f"key shape must be three positive ints, got {shape}")
    return shape


def _pattern_for(seed: int, shape: tuple[int, int, int]) -> np.ndarray:
    rng = np.random.default_rng(np.uint64(seed))
    return rng.random(shape, dtype=np.float32)


def generate_key(seed: int, shape, lam: float = 0.5, *, allow_degenerate: bool = False) -> Key:
    """Draw an i.i.d. uniform [0, 1) pattern from a seeded PCG64 stream.

    ``allow_degenerate`` admits ``lam`` in {0, 1}; tests use ``lam=1`` to
    make the proxy stream equal to the clean one.
    """
    if not 0 <= seed < 2**64:
        raise ParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")
    shape = _check_shape(shape)
    lam = float(lam)
    lo_ok = lam >= 0.0 if allow_degenerate else lam > 0.0
    hi_ok = lam <= 1.0 if allow_degenerate else lam < 1.0
    if not (lo_ok and hi_ok):
        raise ParameterError(f"lambda must lie in (0, 1), got {lam}")
    return Key(seed=int(seed), lam=lam, shape=shape, pattern=_pattern_for(seed, shape))


def embed_key(x, key: Key):
    """Blend ``key`` into a batch (or single image) of raw pixels.

    Works on numpy arrays and torch tensors; the output keeps the input's
    type and dtype.
    """
    if tuple(x.shape[-3:]) != tuple(key.shape):
        raise ShapeError(f"image trailing dims {tuple(x.shape[-3:])} != key shape {key.shape}")
    lam = key.lam
    if isinstance(x, torch.Tensor):
        pattern = torch.from_numpy(np.array(key.pattern)).to(dtype=x.dtype, device=x.device)
        return lam * x + (1.0 - lam) * pattern
    x = np.asarray(x)
    return lam * x + (1.0 - lam) * key.pattern.astype(x.dtype, copy=False)


def _header_bytes(key: Key) -> bytes:
    return _HEADER.pack(KEY_MAGIC, KEY_VERSION, key.seed, key.lam, *key.shape)


def _payload_bytes(key: Key) -> bytes:
    return np.ascontiguousarray(key.pattern, dtype="<f4").tobytes()


def key_fingerprint(key: Key) -> str:
    h = hashlib.sha256()
    h.update(_header_bytes(key))
    h.update(_payload_bytes(key))
    return h.hexdigest()[:16]


def save_key(key: Key, path) -> Path:
    path = Path(path)
    body = _header_bytes(key) + _payload_bytes(key)
    path.write_bytes(body + hashlib.sha256(body).digest())
    return path


def load_key(path) -> Key:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size + _DIGEST_SIZE:
        raise IntegrityError(f"{path}: truncated key file")
    body, digest = blob[:-_DIGEST_SIZE], blob[-_DIGEST_SIZE:]
    magic, version, seed, lam, h, w, c = _HEADER.unpack_from(body)
    if magic != KEY_MAGIC:
        raise IntegrityError(f"{path}: not a key file")
    if version != KEY_VERSION:
        raise VersionError(f"{path}: unsupported key format version {version}")
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError(f"{path}: checksum mismatch")
    payload = body[_HEADER.size:]
    if len(payload) != 4 * h * w * c:
        raise IntegrityError(f"{path}: payload size does not match header shape")
    pattern = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(h, w, c)
    return Key(seed=seed, lam=lam, shape=(h, w, c), pattern=pattern)
