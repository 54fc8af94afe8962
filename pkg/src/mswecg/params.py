"""Named learnable parameters, their initialization, and checkpoint I/O.

Checkpoints are a JSON manifest (name -> shape/dtype/byte offset, plus the
resolved run config) next to a single little-endian float64 blob.  The
round trip is bitwise exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import MswConfig
from .errors import DataError, DimensionError
from .tensor import Tensor

_DTYPE = "<f8"


class ParamStore:
    """Ordered name -> parameter tensor map; names are stable across save/load."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return self._params.values()

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def n_scalars(self) -> int:
        return sum(t.size for t in self._params.values())

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name, t in self._params.items():
            out.add(name, t.data.copy())
        return out

    def load_values(self, other: "ParamStore") -> None:
        """Overwrite this store's buffers with another store's values."""
        if other.names() != self.names():
            raise DimensionError("parameter stores have different name sets")
        for name, t in self._params.items():
            src = other[name]
            if src.shape != t.shape:
                raise DimensionError(f"parameter {name}: shape {src.shape} != {t.shape}")
            t.data = src.data.copy()
            t.grad = None


def truncated_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal draws with |x| > 2*std resampled until in range."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out


def init_params(cfg: MswConfig, seed: int = 0) -> ParamStore:
    """Fresh parameters: truncated-normal(0.02) projections, zero biases.

    The relative-position tables start at zero, so attention begins unbiased.
    """
    rng = np.random.default_rng(seed)
    store = ParamStore()
    C, T, K = cfg.C, cfg.tokens, cfg.K
    hidden = cfg.mlp_ratio * C

    store.add("embed.W", truncated_normal(rng, (cfg.patch_width, C)))
    store.add("embed.b", np.zeros(C))
    for i, M in enumerate(cfg.windows):
        b = f"branch{i}"
        store.add(f"{b}.ln1.gamma", np.ones(C))
        store.add(f"{b}.ln1.beta", np.zeros(C))
        for w in ("Wq", "Wk", "Wv", "Wz"):
            store.add(f"{b}.attn.{w}", truncated_normal(rng, (C, C)))
        store.add(f"{b}.attn.bias", np.zeros((cfg.heads, 2 * M - 1)))
        store.add(f"{b}.ln2.gamma", np.ones(C))
        store.add(f"{b}.ln2.beta", np.zeros(C))
        store.add(f"{b}.mlp.W1", truncated_normal(rng, (C, hidden)))
        store.add(f"{b}.mlp.b1", np.zeros(hidden))
        store.add(f"{b}.mlp.W2", truncated_normal(rng, (hidden, C)))
        store.add(f"{b}.mlp.b2", np.zeros(C))
        store.add(f"{b}.head.W", truncated_normal(rng, ((T // M) * C, K)))
        store.add(f"{b}.head.b", np.zeros(K))
    # Fusion mixer is bias-free: all-zero weights give exactly uniform mixing.
    store.add("fusion.W", truncated_normal(rng, (cfg.n_branches * K, cfg.n_branches)))
    return store


def checkpoint_paths(base) -> tuple[Path, Path]:
    base = Path(base)
    return base.with_name(base.name + ".json"), base.with_name(base.name + ".bin")


def save_checkpoint(store: ParamStore, base, config: dict | None = None) -> tuple[Path, Path]:
    """Write ``<base>.json`` (manifest) and ``<base>.bin`` (float64 blob)."""
    manifest_path, blob_path = checkpoint_paths(base)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    entries = {}
    chunks = []
    offset = 0
    for name, t in store.items():
        raw = np.ascontiguousarray(t.data, dtype=_DTYPE).tobytes()
        entries[name] = {
            "shape": list(t.shape),
            "dtype": _DTYPE,
            "offset": offset,
            "nbytes": len(raw),
        }
        chunks.append(raw)
        offset += len(raw)
    # Insertion order is the store order; keep it so load reproduces the store.
    manifest = {"config": config or {}, "params": entries}
    manifest_path.write_text(json.dumps(manifest, indent=1))
    blob_path.write_bytes(b"".join(chunks))
    return manifest_path, blob_path


def load_checkpoint(base) -> tuple[ParamStore, dict]:
    manifest_path, blob_path = checkpoint_paths(base)
    if not manifest_path.exists() or not blob_path.exists():
        raise DataError(f"checkpoint not found at {manifest_path} / {blob_path}")
    manifest = json.loads(manifest_path.read_text())
    blob = blob_path.read_bytes()
    store = ParamStore()
    for name, meta in manifest["params"].items():
        shape = tuple(meta["shape"])
        start, nbytes = meta["offset"], meta["nbytes"]
        if start + nbytes > len(blob):
            raise DataError(f"checkpoint blob truncated while reading {name}")
        arr = np.frombuffer(blob[start : start + nbytes], dtype=meta["dtype"]).reshape(shape)
        store.add(name, arr.copy())
    return store, manifest.get("config", {})
