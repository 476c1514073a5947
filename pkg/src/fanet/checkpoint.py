"""Checkpoint directories: ``meta.json`` plus one FTNS file per tensor.

    <dir>/meta.json           format version, model config, epoch, optimizer
                              scalars, data RNG state, history
    <dir>/params/<name>.ftns  parameter values
    <dir>/adam_m/<name>.ftns  Adam first moments
    <dir>/adam_v/<name>.ftns  Adam second moments
"""
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import FanetIOError, ValidationError
from .model import FANet, ModelConfig
from .optim import Adam
from .tensorio import load_tensor, save_tensor

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    model: FANet
    optimizer: Adam
    epoch: int
    rng_state: dict
    history: list = field(default_factory=list)
    best_iou: float = -1.0


def save_checkpoint(path, model, optimizer, epoch, rng_state, history=(), best_iou=-1.0):
    path = Path(path)
    names = [name for name, _ in model.named_parameters()]
    meta = {
        "format_version": FORMAT_VERSION,
        "model_config": model.config.to_dict(),
        "epoch": int(epoch),
        "optimizer": optimizer.state(),
        "rng_state": rng_state,
        "parameters": names,
        "history": list(history),
        "best_iou": best_iou,
    }
    for name, p, m, v in zip(names, model.parameters(), optimizer.m, optimizer.v):
        save_tensor(path / "params" / f"{name}.ftns", p.data)
        save_tensor(path / "adam_m" / f"{name}.ftns", m)
        save_tensor(path / "adam_v" / f"{name}.ftns", v)
    try:
        (path / "meta.json").write_text(json.dumps(meta, indent=1))
    except OSError as exc:
        raise FanetIOError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def read_meta(path):
    try:
        meta = json.loads((Path(path) / "meta.json").read_text())
    except OSError as exc:
        raise FanetIOError(f"cannot read checkpoint {path}: {exc}") from exc
    if meta.get("format_version") != FORMAT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {meta.get('format_version')}")
    return meta


def load_checkpoint(path):
    path = Path(path)
    meta = read_meta(path)
    model = FANet(ModelConfig.from_dict(meta["model_config"]))
    names = [name for name, _ in model.named_parameters()]
    if names != meta["parameters"]:
        raise ValidationError("checkpoint parameter list does not match the model layout")
    model.load_state_dict({n: load_tensor(path / "params" / f"{n}.ftns") for n in names})
    opt = Adam(model.parameters(), lr=meta["optimizer"]["lr"])
    opt.load_state(meta["optimizer"],
                   [load_tensor(path / "adam_m" / f"{n}.ftns") for n in names],
                   [load_tensor(path / "adam_v" / f"{n}.ftns") for n in names])
    return Checkpoint(model, opt, meta["epoch"], meta["rng_state"], meta.get("history", []),
                      meta.get("best_iou", -1.0))
