"""Leave-one-event-out splits, end-to-end training, checkpoints and prediction."""

from __future__ import annotations

import contextlib
import copy
import csv
import io
import json
import logging
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from vstgnn.errors import NonFiniteLossError, ShapeError, ValidationError
from vstgnn.ingest import EventArchive, GraphSignalWindow, build_windows
from vstgnn.model import VSTGNN, ModelConfig

log = logging.getLogger(__name__)

CASE_NAMES = ("Michael", "Ian", "Idalia")
HISTORY_FIELDS = ("epoch", "train_mse", "val_mse", "lr")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    learning_rate: float = 1e-3
    epochs: int = 100
    min_lr: float = 0.0
    seed: int = 42
    grad_clip: float | None = 5.0
    mask_zeros: bool = False
    deterministic: bool = True
    normalization_quantile: float = 99.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.learning_rate < 0 or self.epochs < 0:
            raise ValidationError("learning_rate and epochs must be non-negative")


def cosine_lr(epoch: int, base_lr: float, t_max: int, min_lr: float = 0.0) -> float:
    """Closed-form cosine annealing (no restarts)."""
    if t_max <= 0:
        return base_lr
    return min_lr + (base_lr - min_lr) * (1 + math.cos(math.pi * min(epoch, t_max) / t_max)) / 2


# --------------------------------------------------------------------------- splits

@dataclass
class CaseSplit:
    case_name: str
    train_windows: list[GraphSignalWindow]
    val_windows: list[GraphSignalWindow]
    test_windows: list[GraphSignalWindow]

    @property
    def sizes(self) -> tuple[int, int, int]:
        return len(self.train_windows), len(self.val_windows), len(self.test_windows)


def make_case_split(archives: Sequence[EventArchive], held_out: str, S: int = 8, T: int = 1,
                    val_fraction: float = 0.3) -> CaseSplit:
    """Test on every window of ``held_out``; train/val on the other events.

    Within each training event the last ``round(val_fraction * n)`` windows go
    to validation, so overlapping windows never straddle train and val.
    """
    if len(archives) != 3:
        raise ValidationError(f"leave-one-event-out needs exactly 3 events, got {len(archives)}")
    ids = [a.event_id for a in archives]
    if held_out not in ids:
        raise ValidationError(f"held-out case {held_out!r} not among events {ids}")
    if not 0.0 <= val_fraction < 1.0:
        raise ValidationError("val_fraction must lie in [0, 1)")
    orders = {a.county_ids for a in archives}
    if len(orders) != 1:
        raise ValidationError("events disagree on county set / node order")
    train, val, test = [], [], []
    for archive in archives:
        windows = build_windows(archive, S, T)
        if archive.event_id == held_out:
            test.extend(windows)
            continue
        n_val = int(round(val_fraction * len(windows)))
        cut = len(windows) - n_val
        train.extend(windows[:cut])
        val.extend(windows[cut:])
    return CaseSplit(held_out, train, val, test)


# --------------------------------------------------------------------------- normalization

def unique_frames(windows: Iterable[GraphSignalWindow]) -> np.ndarray:
    """Every distinct (event, date) frame in ``windows``, stacked (N, V, 1, H, W)."""
    frames = {}
    for w in windows:
        for k, d in enumerate(w.input_dates):
            frames.setdefault((w.event_id, d), w.inputs[:, k])
        for k, d in enumerate(w.target_dates):
            frames.setdefault((w.event_id, d), w.targets[:, k])
    if not frames:
        raise ValidationError("no frames to fit normalization on")
    return np.stack([frames[k] for k in sorted(frames)])


def fit_scale(windows: Sequence[GraphSignalWindow], quantile: float = 99.0) -> float:
    """Radiance quantile over the distinct frames of ``windows`` (1.0 if all dark)."""
    scale = float(np.percentile(unique_frames(windows), quantile))
    return scale if scale > 0 else 1.0


def normalize(x: np.ndarray, scale: float) -> np.ndarray:
    return np.clip(np.asarray(x, dtype=np.float32) / np.float32(scale), 0.0, 1.0)


def stack_windows(windows: Sequence[GraphSignalWindow], scale: float):
    """Normalized model tensors: x (B, V, S, 1, H, W), t (B, S), y (B, V, T, 1, H, W)."""
    x = torch.from_numpy(np.stack([normalize(w.inputs, scale) for w in windows]))
    y = torch.from_numpy(np.stack([normalize(w.targets, scale) for w in windows]))
    t = torch.tensor([w.input_steps for w in windows], dtype=torch.float32)
    return x, t, y


# --------------------------------------------------------------------------- checkpoints

@dataclass
class Checkpoint:
    model_config: ModelConfig
    state: dict[str, np.ndarray]
    scale: float
    node_order: tuple[str, ...]
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1

    def build_model(self) -> VSTGNN:
        model = VSTGNN(self.model_config,
                       [self.state[f"stgnn.support_{i}"]
                        for i in range(self.model_config.stgnn.num_static_supports)])
        model.load_state_dict({k: torch.from_numpy(np.array(v)) for k, v in self.state.items()})
        return model.eval()

    def save(self, path: Path) -> None:
        """Single ``.npz`` archive: named arrays plus a JSON ``__config__`` entry."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = {
            "model": self.model_config.to_dict(),
            "scale": self.scale,
            "node_order": list(self.node_order),
            "history": self.history,
            "best_epoch": self.best_epoch,
        }
        arrays = {f"param/{k}": v for k, v in self.state.items()}
        arrays["__config__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
        fd, tmp = tempfile.mkstemp(suffix=".npz", dir=path.parent)
        os.close(fd)
        try:
            with open(tmp, "wb") as fh:
                np.savez(fh, **arrays)
            os.replace(tmp, path)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise

    @classmethod
    def load(cls, path: Path) -> "Checkpoint":
        with np.load(Path(path)) as data:
            meta = json.loads(bytes(data["__config__"]).decode())
            state = {k[len("param/"):]: data[k] for k in data.files if k.startswith("param/")}
        return cls(ModelConfig.from_dict(meta["model"]), state, float(meta["scale"]),
                   tuple(meta["node_order"]), meta.get("history", []), meta.get("best_epoch", -1))


def init_model(model_config: ModelConfig, static_supports: Sequence[np.ndarray], seed: int) -> VSTGNN:
    """Seed the global torch RNG, then build the model so initialization is reproducible."""
    torch.manual_seed(seed)
    return VSTGNN(model_config, static_supports)


def write_history(history: Sequence[dict], path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=HISTORY_FIELDS, lineterminator="\n")
    w.writeheader()
    for row in history:
        w.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k] for k in HISTORY_FIELDS})
    fd, tmp = tempfile.mkstemp(dir=path.parent)
    with os.fdopen(fd, "w") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def read_history(path: Path) -> list[dict]:
    with Path(path).open() as fh:
        return [{"epoch": int(r["epoch"]), "train_mse": float(r["train_mse"]),
                 "val_mse": float(r["val_mse"]), "lr": float(r["lr"])} for r in csv.DictReader(fh)]


# --------------------------------------------------------------------------- training

@contextlib.contextmanager
def _determinism(enabled: bool):
    if not enabled:
        yield
        return
    prev = torch.are_deterministic_algorithms_enabled()
    torch.use_deterministic_algorithms(True)
    try:
        yield
    finally:
        torch.use_deterministic_algorithms(prev)


def pixel_mse(pred: torch.Tensor, target: torch.Tensor, mask_zeros: bool = False) -> torch.Tensor:
    if not mask_zeros:
        return F.mse_loss(pred, target)
    mask = (target > 0).to(pred.dtype)
    return ((pred - target) ** 2 * mask).sum() / mask.sum().clamp_min(1.0)


def _batches(n: int, batch_size: int, order: torch.Tensor | None = None):
    idx = order if order is not None else torch.arange(n)
    for i in range(0, n, batch_size):
        yield idx[i:i + batch_size]


def _evaluate_mse(model: VSTGNN, x, t, y, batch_size: int, mask_zeros: bool) -> float:
    if x.shape[0] == 0:
        return float("nan")
    total, count = 0.0, 0
    model.eval()
    with torch.no_grad():
        for idx in _batches(x.shape[0], batch_size):
            total += pixel_mse(model(x[idx], t[idx]), y[idx], mask_zeros).item() * len(idx)
            count += len(idx)
    return total / count


def _param_norms(model: torch.nn.Module) -> dict[str, float]:
    return {n: float(p.detach().norm()) for n, p in model.named_parameters()}


def train(split: CaseSplit, model: VSTGNN, config: TrainConfig,
          history_path: Path | None = None) -> Checkpoint:
    """Adam + cosine annealing on pixel MSE; keeps the epoch with lowest val MSE.

    Falls back to train MSE for model selection when the split has no val windows.
    """
    if not split.train_windows:
        raise ValidationError("training split is empty")
    _check_windows(model.config, split.train_windows + split.val_windows + split.test_windows)
    scale = fit_scale(split.train_windows, config.normalization_quantile)
    x_tr, t_tr, y_tr = stack_windows(split.train_windows, scale)
    if split.val_windows:
        x_va, t_va, y_va = stack_windows(split.val_windows, scale)
    else:
        x_va = t_va = y_va = torch.empty(0)

    gen = torch.Generator().manual_seed(config.seed)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(config.epochs, 1),
                                                       eta_min=config.min_lr)
    history: list[dict] = []
    best = (math.inf, -1, copy.deepcopy(model.state_dict()))
    n = x_tr.shape[0]
    with _determinism(config.deterministic):
        for epoch in range(config.epochs):
            lr = opt.param_groups[0]["lr"]
            model.train()
            total = 0.0
            for b, idx in enumerate(_batches(n, config.batch_size, torch.randperm(n, generator=gen))):
                opt.zero_grad(set_to_none=True)
                loss = pixel_mse(model(x_tr[idx], t_tr[idx]), y_tr[idx], config.mask_zeros)
                if not torch.isfinite(loss):
                    raise NonFiniteLossError(
                        f"non-finite loss {loss.item()} at epoch {epoch}, batch {b}",
                        epoch=epoch, batch=b, param_norms=_param_norms(model))
                loss.backward()
                if config.grad_clip:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
                opt.step()
                total += loss.item() * len(idx)
            sched.step()
            train_mse = total / n
            val_mse = _evaluate_mse(model, x_va, t_va, y_va, config.batch_size, config.mask_zeros)
            history.append({"epoch": epoch, "train_mse": train_mse, "val_mse": val_mse, "lr": lr})
            score = val_mse if split.val_windows else train_mse
            if score < best[0]:
                best = (score, epoch, copy.deepcopy(model.state_dict()))
            log.debug("epoch %d train %.6g val %.6g lr %.3g", epoch, train_mse, val_mse, lr)
    if config.epochs == 0:
        best = (math.nan, -1, best[2])
    model.load_state_dict(best[2])
    model.eval()
    ckpt = Checkpoint(model.config, {k: v.detach().cpu().numpy().copy() for k, v in best[2].items()},
                      scale, split.train_windows[0].node_order, history, best[1])
    if history_path is not None:
        write_history(history, history_path)
    return ckpt


def fit_autoencoder(codec, images: torch.Tensor, epochs: int = 500, lr: float = 1e-3,
                    seed: int = 42) -> list[float]:
    """Codec-only reconstruction training (optional pretraining mode)."""
    torch.manual_seed(seed)
    opt = torch.optim.Adam(codec.parameters(), lr=lr)
    losses = []
    codec.train()
    for _ in range(epochs):
        opt.zero_grad(set_to_none=True)
        loss = F.mse_loss(codec(images), images)
        loss.backward()
        opt.step()
        losses.append(loss.item())
    codec.eval()
    with torch.no_grad():
        losses.append(F.mse_loss(codec(images), images).item())
    return losses


# --------------------------------------------------------------------------- inference

def _check_windows(config: ModelConfig, windows: Sequence[GraphSignalWindow],
                   node_order: Sequence[str] | None = None) -> None:
    res = config.codec.input_resolution
    for w in windows:
        V, _, C, H, W = w.inputs.shape
        if V != config.stgnn.num_nodes or C != config.codec.channels or (H, W) != res:
            raise ShapeError(f"window {w.event_id}@{w.input_dates[0]} has shape {w.inputs.shape}; "
                             f"model expects V={config.stgnn.num_nodes}, C={config.codec.channels}, "
                             f"HxW={res}")
        if node_order is not None and tuple(w.node_order) != tuple(node_order):
            raise ValidationError("window node order differs from checkpoint node order")


def predict_normalized(model: VSTGNN, windows: Sequence[GraphSignalWindow], scale: float,
                       batch_size: int = 16) -> list[np.ndarray]:
    """Forecasts in normalized [0, 1] units, one (V, T, C, H, W) array per window."""
    if not windows:
        return []
    out = []
    model.eval()
    with torch.no_grad():
        for i in range(0, len(windows), batch_size):
            x, t, _ = stack_windows(windows[i:i + batch_size], scale)
            out.extend(p.numpy() for p in model(x, t))
    return out


def predict(checkpoint: Checkpoint, windows: Sequence[GraphSignalWindow],
            batch_size: int = 16) -> list[np.ndarray]:
    """Forecast radiance (nW/cm^2/sr) for each window: list of (V, T, C, H, W)."""
    if not windows:
        return []
    _check_windows(checkpoint.model_config, windows, checkpoint.node_order)
    model = checkpoint.build_model()
    scale = np.float32(checkpoint.scale)
    return [p * scale for p in predict_normalized(model, windows, checkpoint.scale, batch_size)]
