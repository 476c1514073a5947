"""Training loop, evaluation and tiled prediction."""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .config import TrainConfig
from .data import epoch_batches, fixed_batches
from .decoder import bce_loss
from .errors import NumericalError
from .metrics import ConfusionCounts, accumulate, binarize, report
from .optim import Adam, step_lr
from .tensorio import save_tensor

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    history: list = field(default_factory=list)
    best_iou: float = -1.0
    epoch: int = 0

    @property
    def losses(self):
        return [x for h in self.history for x in h["batch_losses"]]


def evaluate(model, samples, threshold=0.5, batch_size=8):
    counts = ConfusionCounts()
    for batch in fixed_batches(samples, batch_size):
        probs = model.predict_proba(batch.images)
        counts = accumulate(binarize(probs, threshold), batch.masks, counts)
    return report(counts)


def train(model, train_samples, cfg=None, val_samples=None, optimizer=None, start_epoch=1,
          out_dir=None, history=None, best_iou=-1.0, workers=1):
    """Adam on mean BCE with the step schedule; returns a TrainResult.

    With ``out_dir`` the ``last`` checkpoint is rewritten each epoch and
    ``best`` whenever validation IoU improves.  A non-finite loss aborts with
    the offending batch dumped under ``out_dir/nan_batch``.
    """
    cfg = cfg or TrainConfig()
    optimizer = optimizer or Adam(model.parameters(), lr=cfg.lr)
    result = TrainResult(list(history or []), best_iou, start_epoch - 1)
    out_dir = Path(out_dir) if out_dir is not None else None

    if out_dir is not None and cfg.epochs == 0:
        save_checkpoint(out_dir / "last", model, optimizer, 0, _rng_state(cfg, 1))

    for epoch in range(start_epoch, cfg.epochs + 1):
        lr = step_lr(epoch, cfg.lr, cfg.decay_every, cfg.decay_factor)
        optimizer.set_lr(lr)
        batch_losses = []
        for batch in epoch_batches(train_samples, cfg.batch_size, cfg.seed, epoch,
                                   augmented=cfg.augment, workers=workers):
            seg = model(T.Tensor(batch.images))
            loss = bce_loss(seg, batch.masks)
            value = loss.item()
            if not math.isfinite(value):
                _dump_batch(out_dir, batch, epoch)
                raise NumericalError(f"non-finite loss {value} at epoch {epoch}")
            optimizer.zero_grad()
            T.backward(loss)
            optimizer.step()
            batch_losses.append(value)

        entry = {"epoch": epoch, "lr": lr, "loss": float(np.mean(batch_losses)) if batch_losses else 0.0,
                 "batch_losses": batch_losses}
        is_best = False
        if val_samples and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
            rep = evaluate(model, val_samples, model.config.threshold)
            entry["val"] = rep.to_dict()
            if rep.iou > result.best_iou:
                result.best_iou = rep.iou
                is_best = True
        result.history.append(entry)
        result.epoch = epoch
        log.info("epoch %d lr %.2e loss %.5f%s", epoch, lr, entry["loss"],
                 f" val_iou {entry['val']['iou']:.4f}" if "val" in entry else "")

        if out_dir is not None:
            state = _rng_state(cfg, epoch + 1)
            save_checkpoint(out_dir / "last", model, optimizer, epoch, state,
                            result.history, result.best_iou)
            if is_best:
                save_checkpoint(out_dir / "best", model, optimizer, epoch, state,
                                result.history, result.best_iou)
    return result


def _rng_state(cfg, next_epoch):
    # batch order and augmentation are pure functions of (seed, epoch, index)
    return {"seed": cfg.seed, "next_epoch": next_epoch}


def _dump_batch(out_dir, batch, epoch):
    if out_dir is None:
        return
    dump = Path(out_dir) / "nan_batch"
    save_tensor(dump / "images.ftns", batch.images)
    save_tensor(dump / "masks.ftns", batch.masks)
    (dump / "epoch.txt").write_text(f"{epoch}\n")


# ---------------------------------------------------------------------------
# prediction on arbitrary-size images
# ---------------------------------------------------------------------------

def _pad_to(image, height, width):
    ph, pw = height - image.shape[1], width - image.shape[2]
    if ph == 0 and pw == 0:
        return image
    mode = "reflect" if ph < image.shape[1] and pw < image.shape[2] else "symmetric"
    return np.pad(image, ((0, 0), (0, ph), (0, pw)), mode=mode)


def predict_image(model, image, tile_size=None, batch_size=4):
    """Probability map (H, W) for a (3, H, W) image.

    Images no larger than one tile are reflect-padded to a multiple of 32;
    larger ones are padded to a multiple of the tile size, predicted tile by
    tile and stitched.  Padding is cropped from the result.
    """
    tile_size = tile_size or model.config.tile_size
    _, H, W = image.shape
    if H <= tile_size and W <= tile_size:
        ph, pw = -(-H // 32) * 32, -(-W // 32) * 32
        padded = _pad_to(image, ph, pw)
        return model.predict_proba(padded[None])[0, 0, :H, :W]
    ph, pw = -(-H // tile_size) * tile_size, -(-W // tile_size) * tile_size
    padded = _pad_to(image, ph, pw)
    rows, cols = ph // tile_size, pw // tile_size
    tiles = [padded[:, r * tile_size:(r + 1) * tile_size, c * tile_size:(c + 1) * tile_size]
             for r in range(rows) for c in range(cols)]
    out = np.empty((ph, pw), dtype=np.float32)
    for start in range(0, len(tiles), batch_size):
        probs = model.predict_proba(np.stack(tiles[start:start + batch_size]))
        for k, p in enumerate(probs, start=start):
            r, c = divmod(k, cols)
            out[r * tile_size:(r + 1) * tile_size, c * tile_size:(c + 1) * tile_size] = p[0]
    return out[:H, :W]
