"""Safe Distillation Box: key-gated knowledge distillation at desk scale."""

from sdbox.errors import (
    FrozenModelError,
    IntegrityError,
    ParameterError,
    SdbError,
    ShapeError,
    VersionError,
)
from sdbox.keying import Key, embed_key, generate_key, key_fingerprint, load_key, save_key

__all__ = [
    "FrozenModelError",
    "IntegrityError",
    "Key",
    "ParameterError",
    "SdbError",
    "ShapeError",
    "VersionError",
    "embed_key",
    "generate_key",
    "key_fingerprint",
    "load_key",
    "save_key",
]
