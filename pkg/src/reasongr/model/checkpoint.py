"""Versioned ``.npz`` checkpoints: quantized base, adapters, optimizer and rng state."""

from __future__ import annotations

import io
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .lora import LoraAdapter
from .optim import OptimizerState
from .quant import QuantizedMatrix
from .transformer import MATRICES, ModelDims, SeqModel

FORMAT_VERSION = 1
MAGIC = "reasongr-checkpoint"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: SeqModel
    adapters: dict[str, LoraAdapter]
    optimizer: OptimizerState | None = None
    rng_state: dict | None = None
    meta: dict = field(default_factory=dict)


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    model = ckpt.model
    arrays: dict[str, np.ndarray] = {}
    if model.quantized is not None:
        for name, q in model.quantized.items():
            arrays[f"q/{name}/packed"] = q.packed
            arrays[f"q/{name}/scales"] = q.scales
    else:
        for name in MATRICES:
            arrays[f"w/{name}"] = np.asarray(model.weights[name])
    for name, (g, b) in model.norms.items():
        arrays[f"norm/{name}/gain"] = g
        arrays[f"norm/{name}/bias"] = b
    for name, ad in ckpt.adapters.items():
        arrays[f"lora/{name}/A"] = ad.A
        arrays[f"lora/{name}/B"] = ad.B

    opt_meta = None
    if ckpt.optimizer is not None:
        opt = ckpt.optimizer
        opt_meta = {k: getattr(opt, k) for k in ("lr_a", "ratio", "beta1", "beta2", "eps", "step")}
        for key, m in opt.m.items():
            arrays[f"opt/m/{key}"] = m
            arrays[f"opt/v/{key}"] = opt.v[key]

    header = {
        "magic": MAGIC,
        "version": FORMAT_VERSION,
        "dims": asdict(model.dims),
        "block_size": model.block_size,
        "pe_scale": model.pe_scale,
        "quantized": model.quantized is not None,
        "adapters": {name: {"alpha": ad.alpha} for name, ad in ckpt.adapters.items()},
        "optimizer": opt_meta,
        "rng_state": ckpt.rng_state,
        "meta": ckpt.meta,
    }
    arrays["header"] = np.frombuffer(json.dumps(header).encode("utf-8"), dtype=np.uint8)

    buf = io.BytesIO()
    np.savez(buf, **arrays)
    atomic_write_bytes(path, buf.getvalue())


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    with data:
        if "header" not in data.files:
            raise CheckpointError(f"{path}: not a checkpoint (no header)")
        header = json.loads(bytes(data["header"]).decode("utf-8"))
        if header.get("magic") != MAGIC:
            raise CheckpointError(f"{path}: bad magic")
        if header.get("version") != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {header.get('version')}")
        dims = ModelDims(**header["dims"])
        block = header["block_size"]
        norms = {}
        for key in data.files:
            if key.startswith("norm/") and key.endswith("/gain"):
                name = key[len("norm/"):-len("/gain")]
                norms[name] = (data[key].copy(), data[f"norm/{name}/bias"].copy())
        if header["quantized"]:
            quantized = {
                name: QuantizedMatrix(dims.matrix_shape(name), block,
                                      data[f"q/{name}/packed"].copy(), data[f"q/{name}/scales"].copy())
                for name in MATRICES
            }
            model = SeqModel.from_quantized(dims, quantized, norms, block, header["pe_scale"])
        else:
            weights = {name: data[f"w/{name}"].copy() for name in MATRICES}
            model = SeqModel(dims, weights, norms, None, block, header["pe_scale"])
        adapters = {
            name: LoraAdapter(name, data[f"lora/{name}/A"].copy(), data[f"lora/{name}/B"].copy(), info["alpha"])
            for name, info in header["adapters"].items()
        }
        optimizer = None
        if header["optimizer"] is not None:
            optimizer = OptimizerState(**header["optimizer"])
            for key in data.files:
                if key.startswith("opt/m/"):
                    k = key[len("opt/m/"):]
                    optimizer.m[k] = data[key].copy()
                    optimizer.v[k] = data[f"opt/v/{k}"].copy()
    return Checkpoint(model, adapters, optimizer, header["rng_state"], header["meta"])
