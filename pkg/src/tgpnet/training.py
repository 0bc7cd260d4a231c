"""Joint multi-task training: L1 objective, AdamW, warm-hold + cosine-restart
schedule, EMA shadows and flip/rotate augmentation over a mixed task pool."""
from __future__ import annotations

import contextlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .degradations import PairedSample
from .tensor import NonFiniteError, ShapeError, Tensor

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr_init: float = 2e-4
    lr_min: float = 1e-6
    warm_epochs: int = 90
    cycle_epochs: int = 180
    cycles: int = 2
    epochs: int = 450
    steps_per_epoch: int = 1
    batch_size: int = 4
    crop: int = 32
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-4
    ema_decay: float = 0.999
    grad_clip: float | None = 1.0
    seed: int = 0
    task_mix: dict[str, float] = field(default_factory=dict)
    homogeneous_batches: bool = False
    # step-size multiplier for task prompts and LTSE parameters
    embed_lr_scale: float = 1.0
    checkpoint_every: int = 0

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if not self.lr_min < self.lr_init:
            raise ValueError("lr_min must be below lr_init")
        if self.crop % 8:
            raise ValueError(f"crop {self.crop} must be divisible by 8")

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch

    @classmethod
    def full_protocol(cls, **overrides) -> "TrainConfig":
        """The full-scale protocol: 450 epochs, batch 14, 128 crops."""
        base = dict(batch_size=14, crop=128)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


# ---------------------------------------------------------------- objective

def l1_loss(out: Tensor, gt) -> Tensor:
    """Mean absolute error over every element (batch, channel, space)."""
    gt = gt if isinstance(gt, Tensor) else Tensor(np.asarray(gt, dtype=out.dtype))
    if out.shape != gt.shape:
        raise ShapeError(f"l1_loss: {out.shape} vs {gt.shape}")
    return T.mean(T.abs(out - gt))


# ---------------------------------------------------------------- schedule

def lr_at(step: int, cfg: TrainConfig) -> float:
    """Constant ``lr_init`` for the warm phase, then ``cycles`` cosine cycles.

    Each cycle starts at ``lr_init`` and reaches ``lr_min`` exactly on its last
    step; steps past the schedule stay at ``lr_min``.
    """
    warm = cfg.warm_epochs * cfg.steps_per_epoch
    cycle = cfg.cycle_epochs * cfg.steps_per_epoch
    if step < warm:
        return cfg.lr_init
    t = step - warm
    if cycle <= 0 or t >= cycle * cfg.cycles:
        return cfg.lr_min
    tt = t % cycle
    span = max(cycle - 1, 1)
    return cfg.lr_min + 0.5 * (cfg.lr_init - cfg.lr_min) * (1.0 + math.cos(math.pi * tt / span))


# ---------------------------------------------------------------- optimizer

@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def is_embedding_param(name: str) -> bool:
    return name.startswith("tgp.") and (".ltse." in name or name.endswith(".prompt"))


def adamw_step(params: dict, state: OptimizerState, lr: float, cfg: TrainConfig) -> None:
    """One decoupled-weight-decay Adam update, in place.

    Parameters whose ``grad`` is None are skipped; weight decay applies only
    to parameters flagged ``decay``. Task prompts and LTSE parameters use
    ``lr * cfg.embed_lr_scale``.
    """
    state.step += 1
    b1, b2 = cfg.betas
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        step_lr = lr * cfg.embed_lr_scale if is_embedding_param(name) else lr
        if m.shape != p.shape or g.shape != p.shape:
            raise ShapeError(f"adamw: {name} param {p.shape}, grad {g.shape}, moment {m.shape}")
        if cfg.weight_decay and getattr(p, "decay", True):
            p.data = p.data - (step_lr * cfg.weight_decay) * p.data
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data = p.data - step_lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


def clip_grad_norm(params, max_norm: float | None) -> float:
    """Scale gradients so their global L2 norm is at most ``max_norm``; return the pre-clip norm."""
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float(np.vdot(g, g)) for g in grads))
    if max_norm is not None and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g *= scale
    return total


def ema_update(shadow: np.ndarray, param: np.ndarray, alpha: float) -> None:
    """In place: shadow <- alpha * shadow + (1 - alpha) * param."""
    shadow *= alpha
    shadow += (1.0 - alpha) * param


@contextlib.contextmanager
def swapped_weights(model, state: dict[str, np.ndarray]):
    """Temporarily load ``state`` (e.g. EMA shadows) into ``model``."""
    saved = {n: p.data for n, p in model.named_parameters()}
    model.load_state_dict(state)
    try:
        yield model
    finally:
        for n, p in model.named_parameters():
            p.data = saved[n]


# ---------------------------------------------------------------- batching

@dataclass
class Batch:
    degraded: np.ndarray
    clean: np.ndarray
    tasks: list[str]


def _augment(arrs, rng):
    k = int(rng.integers(4))
    flip = bool(rng.integers(2))
    out = []
    for a in arrs:
        if flip:
            a = a[:, :, ::-1]
        out.append(np.rot90(a, k, axes=(1, 2)))
    return out


def sample_batch(pool: Sequence[PairedSample], cfg: TrainConfig, rng: np.random.Generator) -> Batch:
    """Draw ``batch_size`` samples: task by ``task_mix`` weight, then a uniform
    sample of that task, a random crop and a random flip/rotation."""
    if not pool:
        raise ValueError("cannot sample from an empty pool")
    by_task: dict[str, list[PairedSample]] = {}
    for s in pool:
        by_task.setdefault(s.task_id, []).append(s)
    tasks = list(by_task)
    weights = np.array([cfg.task_mix.get(t, 1.0) for t in tasks], dtype=np.float64)
    weights = weights / weights.sum()
    if cfg.homogeneous_batches:
        picks = [tasks[rng.choice(len(tasks), p=weights)]] * cfg.batch_size
    else:
        picks = [tasks[i] for i in rng.choice(len(tasks), size=cfg.batch_size, p=weights)]
    deg, cln = [], []
    cs = cfg.crop
    for t in picks:
        s = by_task[t][int(rng.integers(len(by_task[t])))]
        _, _, h, w = s.clean.shape
        if h < cs or w < cs:
            raise ValueError(f"sample {h}x{w} smaller than crop {cs}")
        y0, x0 = int(rng.integers(h - cs + 1)), int(rng.integers(w - cs + 1))
        d, c = _augment([s.degraded[0, :, y0:y0 + cs, x0:x0 + cs],
                         s.clean[0, :, y0:y0 + cs, x0:x0 + cs]], rng)
        deg.append(d)
        cln.append(c)
    return Batch(np.stack(deg), np.stack(cln), picks)


# ---------------------------------------------------------------- loop

class TrainingAborted(RuntimeError):
    pass


@dataclass
class TrainReport:
    records: list[dict]
    state: dict[str, np.ndarray]
    ema: dict[str, np.ndarray]
    checkpoints: list[str] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [r["loss"] for r in self.records]


def train(model, pool: Sequence[PairedSample], cfg: TrainConfig, out_dir=None,
          on_step: Callable[[dict], None] | None = None) -> TrainReport:
    """Optimize ``model`` in place on ``pool``.

    With ``out_dir`` set, writes ``train_log.jsonl`` plus ``last.ckpt`` /
    ``ema.ckpt`` (and ``step_<n>.ckpt`` every ``checkpoint_every`` steps).
    A non-finite loss or parameter aborts the run and leaves the last good
    checkpoint in place.
    """
    from .io import save_checkpoint  # local: io imports this module's config

    rng = np.random.default_rng([cfg.seed, 0x7A1])
    params = dict(model.named_parameters())
    ema = {n: p.data.copy() for n, p in params.items()}
    opt = OptimizerState()
    dtype = next(iter(params.values())).dtype
    out = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_fh = open(out / "train_log.jsonl", "w")
    records, ckpts = [], []
    last_good = {n: p.data.copy() for n, p in params.items()}

    def dump(path, state, ema_state):
        save_checkpoint(path, model.cfg, state, ema_state)
        ckpts.append(str(path))

    try:
        for step in range(cfg.total_steps):
            batch = sample_batch(pool, cfg, rng)
            lr = lr_at(step, cfg)
            model.zero_grad()
            with T.Tape():
                pred = model(Tensor(batch.degraded.astype(dtype)), batch.tasks)
                loss = l1_loss(pred, batch.clean)
                loss_val = loss.item()
                if not math.isfinite(loss_val):
                    raise NonFiniteError(f"loss is {loss_val} at step {step}")
                T.backward(loss)
            gnorm = clip_grad_norm(params.values(), cfg.grad_clip)
            adamw_step(params, opt, lr, cfg)
            T.validate_finite(params, "parameter")
            for n, p in params.items():
                ema_update(ema[n], p.data, cfg.ema_decay)
            last_good = {n: p.data.copy() for n, p in params.items()}
            rec = {"step": step, "task": ",".join(batch.tasks), "loss": loss_val, "lr": lr,
                   "grad_norm": gnorm}
            records.append(rec)
            if log_fh is not None:
                log_fh.write(json.dumps(rec) + "\n")
            if on_step is not None:
                on_step(rec)
            if out is not None and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                dump(out / f"step_{step + 1}.ckpt", last_good, ema)
    except NonFiniteError as exc:
        if out is not None:
            dump(out / "last.ckpt", last_good, ema)
        raise TrainingAborted(f"{exc}; last good state kept") from exc
    finally:
        if log_fh is not None:
            log_fh.close()
    state = {n: p.data.copy() for n, p in params.items()}
    if out is not None:
        dump(out / "last.ckpt", state, ema)
        save_checkpoint(out / "ema.ckpt", model.cfg, ema, None)
        ckpts.append(str(out / "ema.ckpt"))
    return TrainReport(records, state, ema, ckpts)
