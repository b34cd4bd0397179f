"""Versioned binary checkpoint for the decoder.

Layout, little-endian:

    magic            4 bytes  b"GALM"
    version          u16      currently 1
    dtype            u8       1 = float32, 2 = float64
    reserved         u8       0
    vocab_size, d_model, n_layer, n_head, context_length   5 x u32
    tensor count     u32
    per tensor, sorted by name:
        name length  u16, name (utf-8)
        ndim         u8, shape ndim x u32
        data         row-major values of the header dtype
"""

import struct
from pathlib import Path
from typing import BinaryIO, Dict

import numpy as np
import torch

from guided_augmentation.errors import GuidedAugmentationError
from guided_augmentation.lm.decoder import DecoderConfig, TinyDecoder
from guided_augmentation.logging_config import get_logger

logger = get_logger(__name__)

MAGIC = b"GALM"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_TORCH_DTYPES = {1: torch.float32, 2: torch.float64}


class CheckpointFormatError(GuidedAugmentationError):
    """Raised when a checkpoint file cannot be decoded."""

    code = "checkpoint_format"


def _read_exact(handle: BinaryIO, size: int) -> bytes:
    chunk = handle.read(size)
    if len(chunk) != size:
        raise CheckpointFormatError(f"Truncated checkpoint: wanted {size} bytes, got {len(chunk)}")
    return chunk


def save_checkpoint(model: TinyDecoder, path: Path) -> None:
    dtype_code = 2 if model.wte.weight.dtype == torch.float64 else 1
    c = model.config
    state = model.state_dict()
    with open(path, "wb") as handle:
        handle.write(MAGIC)
        handle.write(struct.pack("<HBB", VERSION, dtype_code, 0))
        handle.write(
            struct.pack("<5I", c.vocab_size, c.d_model, c.n_layer, c.n_head, c.context_length)
        )
        handle.write(struct.pack("<I", len(state)))
        for name in sorted(state):
            array = state[name].detach().cpu().numpy().astype(_DTYPES[dtype_code], copy=False)
            encoded = name.encode("utf-8")
            handle.write(struct.pack("<H", len(encoded)))
            handle.write(encoded)
            handle.write(struct.pack("<B", array.ndim))
            handle.write(struct.pack(f"<{array.ndim}I", *array.shape))
            handle.write(np.ascontiguousarray(array).tobytes(order="C"))
    logger.info(f"Saved checkpoint to {path} ({len(state)} tensors)")


def load_checkpoint(path: Path) -> TinyDecoder:
    """Load a decoder in eval mode with frozen parameters."""
    with open(path, "rb") as handle:
        if _read_exact(handle, 4) != MAGIC:
            raise CheckpointFormatError(f"{path} is not a checkpoint (bad magic)")
        version, dtype_code, _ = struct.unpack("<HBB", _read_exact(handle, 4))
        if version != VERSION:
            raise CheckpointFormatError(f"Unsupported checkpoint version {version}")
        if dtype_code not in _DTYPES:
            raise CheckpointFormatError(f"Unknown dtype code {dtype_code}")
        vocab_size, d_model, n_layer, n_head, context_length = struct.unpack(
            "<5I", _read_exact(handle, 20)
        )
        (count,) = struct.unpack("<I", _read_exact(handle, 4))
        dtype = _DTYPES[dtype_code]
        state: Dict[str, torch.Tensor] = {}
        for _ in range(count):
            (name_length,) = struct.unpack("<H", _read_exact(handle, 2))
            name = _read_exact(handle, name_length).decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(handle, 1))
            shape = struct.unpack(f"<{ndim}I", _read_exact(handle, 4 * ndim))
            size = int(np.prod(shape)) if shape else 1
            raw = _read_exact(handle, size * dtype.itemsize)
            state[name] = torch.from_numpy(np.frombuffer(raw, dtype=dtype).reshape(shape).copy())
        if handle.read(1):
            raise CheckpointFormatError(f"Trailing bytes after {count} tensors in {path}")

    model = TinyDecoder(
        DecoderConfig(
            vocab_size=vocab_size,
            d_model=d_model,
            n_layer=n_layer,
            n_head=n_head,
            context_length=context_length,
        )
    ).to(_TORCH_DTYPES[dtype_code])
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointFormatError(f"Checkpoint tensors do not fit the header: {exc}") from exc
    model.eval()
    model.requires_grad_(False)
    return model
