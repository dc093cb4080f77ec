"""FBBSCKPT binary checkpoint container.

Layout (little-endian): magic "FBBSCKPT", version u32, model config
(embed_dim u32, n_blocks u32, n_heads u32, ffn_multiplier f64,
n_channels u32, seq_len u32, cond_dim u32), prompt normalization mean/std
f64, amp_scale f64, tensor count u32, then per tensor: name length u16 +
UTF-8 name, rank u8, dims u32 each, f32 row-major data. Raw parameters
first, the EMA shadow second under names suffixed ".ema".

Discriminative baseline models reuse the same container; their tensors are
stored under names prefixed "disc." so the two model kinds cannot be
confused at load time.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import torch

from .errors import FormatError
from .model import ModelConfig, VelocityModel

_MAGIC = b"FBBSCKPT"
_VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    prompt_mean: float
    prompt_std: float
    amp_scale: float
    tensors: dict[str, np.ndarray]  # raw parameters/buffers
    ema_tensors: dict[str, np.ndarray]


def _write_tensor(f, name: str, array: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    f.write(struct.pack("<H", len(encoded)))
    f.write(encoded)
    f.write(struct.pack("<B", array.ndim))
    for dim in array.shape:
        f.write(struct.pack("<I", dim))
    f.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def save_checkpoint(path: str, config: ModelConfig, prompt_mean: float, prompt_std: float,
                    amp_scale: float, tensors: dict[str, np.ndarray],
                    ema_tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", _VERSION))
        f.write(struct.pack("<III", config.embed_dim, config.n_blocks, config.n_heads))
        f.write(struct.pack("<d", config.ffn_multiplier))
        f.write(struct.pack("<III", config.n_channels, config.seq_len, config.cond_dim))
        f.write(struct.pack("<ddd", prompt_mean, prompt_std, amp_scale))
        f.write(struct.pack("<I", len(tensors) + len(ema_tensors)))
        for name, arr in tensors.items():
            _write_tensor(f, name, arr)
        for name, arr in ema_tensors.items():
            _write_tensor(f, name + ".ema", arr)


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 8 or data[:8] != _MAGIC:
        raise FormatError("bad checkpoint magic")
    off = 8
    try:
        (version,) = struct.unpack_from("<I", data, off)
        off += 4
        if version != _VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        embed_dim, n_blocks, n_heads = struct.unpack_from("<III", data, off)
        off += 12
        (ffn_multiplier,) = struct.unpack_from("<d", data, off)
        off += 8
        n_channels, seq_len, cond_dim = struct.unpack_from("<III", data, off)
        off += 12
        prompt_mean, prompt_std, amp_scale = struct.unpack_from("<ddd", data, off)
        off += 24
        (count,) = struct.unpack_from("<I", data, off)
        off += 4
        tensors: dict[str, np.ndarray] = {}
        ema: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + name_len].decode("utf-8")
            off += name_len
            (rank,) = struct.unpack_from("<B", data, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", data, off) if rank else ()
            off += 4 * rank
            n_elem = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(data, dtype="<f4", count=n_elem, offset=off).reshape(dims).copy()
            off += 4 * n_elem
            if name.endswith(".ema"):
                ema[name[:-4]] = arr
            else:
                tensors[name] = arr
    except struct.error as e:
        raise FormatError(f"truncated checkpoint: {e}") from e
    config = ModelConfig(embed_dim=embed_dim, n_blocks=n_blocks, n_heads=n_heads,
                         ffn_multiplier=ffn_multiplier, n_channels=n_channels,
                         seq_len=seq_len, cond_dim=cond_dim)
    return Checkpoint(config=config, prompt_mean=prompt_mean, prompt_std=prompt_std,
                      amp_scale=amp_scale, tensors=tensors, ema_tensors=ema)


def state_dict_to_arrays(model: VelocityModel) -> dict[str, np.ndarray]:
    return {name: value.detach().cpu().numpy().astype(np.float32)
            for name, value in model.state_dict().items()}


def build_model(ckpt: Checkpoint, use_ema: bool = True,
                dtype: torch.dtype = torch.float32) -> VelocityModel:
    """Instantiate a VelocityModel from checkpoint tensors (EMA by default)."""
    model = VelocityModel(ckpt.config)
    source = ckpt.ema_tensors if use_ema and ckpt.ema_tensors else ckpt.tensors
    unexpected = [name for name in source if name.startswith("disc.")]
    if unexpected:
        raise FormatError("checkpoint holds a discriminative model, not a velocity model")
    state = {name: torch.from_numpy(arr) for name, arr in source.items()}
    # buffers that are not EMA-tracked come from the raw section
    for name, arr in ckpt.tensors.items():
        if name not in state:
            state[name] = torch.from_numpy(arr)
    model.load_state_dict(state)
    model.set_prompt_normalization(ckpt.prompt_mean, ckpt.prompt_std)
    return model.to(dtype).eval()
