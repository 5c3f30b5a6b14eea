"""Training loop with early stopping, checkpoints and history files."""

from __future__ import annotations

import csv
import logging
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .data import InteractionLog, NegativeSampler, TemporalSplit, train_view
from .evaluation import evaluate
from .gating import compute_contexts
from .model import Model, NumericError
from .operators import build_bank
from .optim import Adam

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"TMMC1"
HISTORY_HEADER = ("epoch", "loss_rec", "loss_div", "recall20_valid")


class TrainingDiverged(NumericError):
    def __init__(self, message, model, history):
        super().__init__(message)
        self.model = model
        self.history = history


@dataclass
class TrainResult:
    model: Model
    history: list = field(default_factory=list)  # (epoch, loss_rec, loss_div, recall20_valid)
    best_epoch: int = 0
    epoch_seconds: list = field(default_factory=list)


def build_model(cfg: RunConfig, log_: InteractionLog, split: TemporalSplit, features: dict) -> Model:
    view = train_view(log_, split)
    bank = build_bank(view, cfg.tau, cfg.time_unit, uniform=cfg.kernel == "uniform")
    ctx = compute_contexts(view, cfg.window_fraction, cfg.time_unit)
    missing = [m for m in cfg.modalities if m != "id" and m not in features]
    if missing:
        raise ValueError(f"no features for modalities {missing}")
    return Model.create(bank, ctx, features, cfg.modalities, cfg.dim, cfg.layers, cfg.temperature,
                        cfg.hidden, cfg.seed, np.dtype(cfg.dtype).type)


def batch_bounds(n: int, size: int) -> list:
    """Contiguous batch boundaries; a trailing batch of one triple joins its neighbour."""
    starts = list(range(0, n, size))
    bounds = [(s, min(s + size, n)) for s in starts]
    if len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] < 2:
        bounds[-2] = (bounds[-2][0], n)
        bounds.pop()
    return bounds


def train(cfg: RunConfig, log_: InteractionLog, split: TemporalSplit, features: dict,
          model: Model | None = None) -> TrainResult:
    """Epochs of shuffled train positives with fresh negatives, early-stopped on
    validation Recall@20. The best-scoring parameters are restored at the end.

    Training stops once ``patience + 1`` consecutive epochs fail to improve.
    """
    model = build_model(cfg, log_, split, features) if model is None else model
    view = train_view(log_, split)
    sampler = NegativeSampler(view)
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(lr=cfg.lr)
    result = TrainResult(model)
    best, bad = -np.inf, 0
    best_params = {k: v.copy() for k, v in model.params.items()}
    n = len(view)
    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        perm = rng.permutation(n)
        rec_sum = div_sum = 0.0
        bounds = batch_bounds(n, cfg.batch_size)
        for lo, hi in bounds:
            idx = perm[lo:hi]
            users, pos = view.users[idx], view.items[idx]
            neg = sampler.sample_batch(np.repeat(users, cfg.negatives), rng).reshape(len(idx), cfg.negatives)
            try:
                br, grads = model.loss_and_grads(users, pos, neg, lam=cfg.lam, gamma=cfg.gamma,
                                                 sigma_min=cfg.sigma_min, lambda_var=cfg.lambda_var,
                                                 eps=cfg.eps)
            except NumericError as exc:
                model.params = best_params
                raise TrainingDiverged(f"epoch {epoch}: {exc}", model, result.history) from exc
            opt.step(model.params, grads)
            rec_sum += br.rec
            div_sum += br.div
        recall = evaluate(model, log_, split, ks=(20,), target="valid").metrics["recall@20"]
        result.epoch_seconds.append(time.perf_counter() - start)
        row = (epoch, rec_sum / len(bounds), div_sum / len(bounds), recall)
        result.history.append(row)
        log.info("epoch %d  rec %.4f  div %.4f  valid R@20 %.4f", *row)
        if recall > best:
            best, bad = recall, 0
            best_params = {k: v.copy() for k, v in model.params.items()}
            result.best_epoch = epoch
        else:
            bad += 1
            if bad > cfg.patience:
                break
    model.params = best_params
    return result


# ---------------------------------------------------------------- files

def write_history(history, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_HEADER)
        for epoch, rec, div, r20 in history:
            w.writerow([epoch, repr(float(rec)), repr(float(div)), repr(float(r20))])


def read_history(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [(int(r["epoch"]), float(r["loss_rec"]), float(r["loss_div"]), float(r["recall20_valid"]))
            for r in rows]


def write_checkpoint(path, config_text: str, params: dict) -> None:
    """``TMMC1`` | u32 config length | config | u32 tensor count | tensors.

    Each tensor: u16 name length, name, u8 ndim, u32 dims, float32 payload;
    all integers and floats little-endian.
    """
    cfg = config_text.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            arr = np.asarray(params[name])
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f4").tobytes())


class CheckpointError(ValueError):
    pass


def read_checkpoint(path):
    """Return (config_text, params) with float32 arrays."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(CHECKPOINT_MAGIC):
        if data[:4] == CHECKPOINT_MAGIC[:4]:
            raise CheckpointError(f"{path}: unsupported checkpoint version {data[4:5]!r}")
        raise CheckpointError(f"{path}: not a checkpoint file")
    try:
        pos = len(CHECKPOINT_MAGIC)
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        config_text = data[pos:pos + n].decode("utf-8")
        pos += n
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        params = {}
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + ln].decode("utf-8")
            pos += ln
            (ndim,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) * 4
            if pos + size > len(data):
                raise CheckpointError(f"{path}: truncated tensor {name!r}")
            params[name] = np.frombuffer(data, dtype="<f4", count=size // 4, offset=pos).reshape(shape).astype(np.float32)
            pos += size
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint ({exc})") from None
    return config_text, params
