"""Single-task restoration and the two composite strategies: chaining
task-specific passes, or one pass with averaged task embeddings."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .metrics import PSNR_CAP, MetricsReport, evaluate
from .tgp import Blend

MODES = ("single", "sequential", "direct_average")
_SHORT = {"single": "single", "seq": "sequential", "sequential": "sequential",
          "avg": "direct_average", "direct_average": "direct_average"}


@dataclass(frozen=True)
class TaskPlan:
    mode: str
    tasks: tuple[str, ...]
    # averaging space for direct_average: LTSE embeddings or raw prompt maps
    space: str = "embedding"

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if self.mode not in MODES:
            raise ValueError(f"plan mode {self.mode!r} not in {MODES}")
        if not self.tasks:
            raise ValueError("plan needs at least one task")
        if self.mode == "single" and len(self.tasks) != 1:
            raise ValueError("a single plan takes exactly one task")
        if self.mode == "direct_average" and len(self.tasks) < 2:
            raise ValueError("direct_average needs at least two tasks")
        if self.space not in ("embedding", "prompt"):
            raise ValueError(f"averaging space must be 'embedding' or 'prompt', got {self.space!r}")

    @classmethod
    def parse(cls, text: str) -> "TaskPlan":
        """``single:denoise``, ``seq:denoise,decloud`` or ``avg:denoise,decloud``."""
        head, sep, rest = text.partition(":")
        if not sep or head not in _SHORT:
            raise ValueError(f"bad plan {text!r}; expected single:T, seq:T1,T2 or avg:T1,T2")
        return cls(_SHORT[head], tuple(t for t in rest.split(",") if t))

    def __len__(self):
        return len(self.tasks) if self.mode == "sequential" else 1


def _as_tensor(model, x) -> T.Tensor:
    dtype = next(iter(model.parameters())).dtype
    return T.Tensor(np.asarray(getattr(x, "data", x), dtype=dtype))


def restore_steps(model, x, plan: TaskPlan) -> list[np.ndarray]:
    """Every pass output in order; the last entry is the final restoration.

    Sequential intermediates are clipped to [0, 1] before feeding the next pass.
    """
    xt = _as_tensor(model, x)
    outs: list[np.ndarray] = []
    with T.no_grad():
        if plan.mode == "direct_average":
            outs.append(model(xt, Blend(plan.tasks, plan.space)).data)
        else:
            cur = xt
            for i, task in enumerate(plan.tasks):
                y = model(cur, task).data
                outs.append(y)
                if i + 1 < len(plan.tasks):
                    cur = T.Tensor(np.clip(y, 0.0, 1.0))
    return outs


def restore(model, x, plan: TaskPlan) -> np.ndarray:
    return restore_steps(model, x, plan)[-1]


@dataclass
class RestoreReport:
    metrics: MetricsReport
    output: np.ndarray
    intermediates: list[np.ndarray] = field(default_factory=list)


def restore_report(model, x, gt, plan: TaskPlan, cap: float = PSNR_CAP) -> RestoreReport:
    """Restore ``x`` and score it against ``gt``.

    ``intermediates`` holds one output per pass, so its length equals the
    number of tasks in a sequential plan.
    """
    xa = np.asarray(getattr(x, "data", x))
    ga = np.asarray(getattr(gt, "data", gt))
    if xa.shape != ga.shape:
        raise ValueError(f"input {xa.shape} and reference {ga.shape} differ")
    steps = restore_steps(model, xa, plan)
    # scored on the displayable [0, 1] range
    return RestoreReport(evaluate(np.clip(steps[-1], 0.0, 1.0), ga, cap), steps[-1], steps)
