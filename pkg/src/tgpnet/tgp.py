"""Task-guided prompting: learnable task prompts, their embedding network
(LTSE) and the per-channel affine modulation they drive (HFM).

Every TGP site owns one LTSE and one HFM; every (task, site) pair owns one
prompt map (or one prompt per task when ``shared_prompt`` is set). Parameter
names follow ``tgp.<task>.<site>.prompt`` and ``tgp.sites.<site>.{ltse,hfm}.*``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from . import tensor as T
from .nn import Conv2d, Linear, Module, global_avg_pool, relu
from .tensor import Parameter, ShapeError, Tensor

TASKS = ("denoise", "decloud", "deshadow", "despeckle", "deblur")
SITES = ("d4", "d3", "d2", "d1", "refine", "residual")
SHARED_SITE = "all"
RESIDUAL_SITE = "residual"


class UnknownTaskError(ValueError):
    pass


@dataclass(frozen=True)
class Blend:
    """Average several tasks into one conditioning signal.

    ``space="embedding"`` averages LTSE outputs before HFM; ``space="prompt"``
    averages the raw prompt maps before LTSE.
    """

    tasks: tuple[str, ...]
    space: str = "embedding"

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if self.space not in ("embedding", "prompt"):
            raise ValueError(f"blend space must be 'embedding' or 'prompt', got {self.space!r}")
        if not self.tasks:
            raise ValueError("blend needs at least one task")


TaskSpec = Union[str, Sequence[str], Blend]


@dataclass
class AffinePair:
    gamma: Tensor  # (m, c), m = 1 or batch size
    beta: Tensor


class LTSE(Module):
    """Prompt map (t, 1, H, W) -> embedding (t, C_E): three stride-2 convs + ReLU, then GAP."""

    def __init__(self, channels: tuple[int, int, int] = (16, 32, 64)):
        super().__init__()
        c1, c2, ce = channels
        self.embed_dim = ce
        self.w1 = Conv2d(1, c1, 7, stride=2, padding=3)
        self.w2 = Conv2d(c1, c2, 3, stride=2, padding=1)
        self.w3 = Conv2d(c2, ce, 3, stride=2, padding=1)

    def __call__(self, prompts: Tensor) -> Tensor:
        h = relu(self.w3(relu(self.w2(relu(self.w1(prompts))))))
        return T.reshape(global_avg_pool(h), (prompts.shape[0], self.embed_dim))


class HFM(Module):
    """Two independent linear maps embedding -> (gamma, beta).

    Initialized to gamma = 1, beta = 0 so that modulation starts as identity.
    """

    def __init__(self, embed_dim: int, channels: int):
        super().__init__()
        self.channels = channels
        self.gamma = Linear(embed_dim, channels)
        self.beta = Linear(embed_dim, channels)
        self.gamma.weight.init = "zeros"
        self.gamma.bias.init = "ones"
        self.beta.weight.init = "zeros"
        self.beta.bias.init = "zeros"

    def __call__(self, embedding: Tensor) -> AffinePair:
        if embedding.shape[-1] != self.gamma.weight.shape[1]:
            raise ShapeError(f"HFM: embedding length {embedding.shape[-1]} != "
                             f"{self.gamma.weight.shape[1]}")
        return AffinePair(self.gamma(embedding), self.beta(embedding))


def modulate(features: Tensor, affine: AffinePair, relu_after: bool = False) -> Tensor:
    """``gamma * features + beta`` per channel, optionally followed by ReLU."""
    m, c = affine.gamma.shape
    if features.shape[1] != c or affine.beta.shape[1] != c:
        raise ShapeError(f"modulate: features have {features.shape[1]} channels, "
                         f"affine pair has {c}")
    gamma = T.reshape(affine.gamma, (m, c, 1, 1))
    beta = T.reshape(affine.beta, (m, c, 1, 1))
    out = features * gamma + beta
    return relu(out) if relu_after else out


class TaskPrompt(Module):
    def __init__(self, task_id: str, site_id: str, size: tuple[int, int]):
        super().__init__()
        h, w = size
        if h % 8 or w % 8:
            raise ShapeError(f"prompt size {size} must be divisible by 8")
        self.task_id, self.site_id = task_id, site_id
        self.prompt = Parameter((1, 1, h, w), init="prompt", decay=False)


class TGPSite(Module):
    def __init__(self, site_id: str, channels: int, ltse_channels=(16, 32, 64)):
        super().__init__()
        self.site_id = site_id
        self.ltse = LTSE(ltse_channels)
        self.hfm = HFM(ltse_channels[-1], channels)


class _Sites(Module):
    pass


class _TaskPrompts(Module):
    pass


class TaskGuidedPrompting(Module):
    def __init__(self, tasks: Sequence[str], site_channels: dict[str, int],
                 prompt_size: tuple[int, int] = (64, 64),
                 ltse_channels: tuple[int, int, int] = (16, 32, 64),
                 shared_prompt: bool = False, relu_modulation: bool = False):
        super().__init__()
        self.prompt_size = tuple(prompt_size)
        self.shared_prompt = shared_prompt
        self.relu_modulation = relu_modulation
        self.tasks: list[str] = []
        self.sites = _Sites()
        for site, c in site_channels.items():
            setattr(self.sites, site, TGPSite(site, c, ltse_channels))
        for task in tasks:
            self.register_task(task)

    def register_task(self, task: str) -> None:
        if task in self.tasks:
            raise ValueError(f"task {task!r} already registered")
        if not task.isidentifier() or hasattr(self, task):
            raise ValueError(f"invalid or reserved task name {task!r}")
        bank = _TaskPrompts()
        names = [SHARED_SITE] if self.shared_prompt else list(self.sites._children)
        for site in names:
            setattr(bank, site, TaskPrompt(task, site, self.prompt_size))
        setattr(self, task, bank)
        self.tasks.append(task)

    def _check(self, tasks) -> None:
        for t in tasks:
            if t not in self.tasks:
                raise UnknownTaskError(f"unknown task {t!r}; registered tasks: {self.tasks}")

    def prompt(self, task: str, site: str) -> Parameter:
        self._check([task])
        bank = getattr(self, task)
        return getattr(bank, SHARED_SITE if self.shared_prompt else site).prompt

    def _stack_prompts(self, tasks: Sequence[str], site: str) -> Tensor:
        maps = [self.prompt(t, site) for t in tasks]
        return maps[0] if len(maps) == 1 else T.concat(maps, axis=0)

    def embedding(self, site: str, tasks: Sequence[str]) -> Tensor:
        """LTSE embeddings, one row per task in ``tasks``."""
        self._check(tasks)
        return getattr(self.sites, site).ltse(self._stack_prompts(tasks, site))

    def affine(self, site: str, spec: TaskSpec, batch: int) -> AffinePair:
        s = getattr(self.sites, site)
        if isinstance(spec, Blend):
            self._check(spec.tasks)
            if spec.space == "embedding":
                emb = T.mean(self.embedding(site, spec.tasks), axis=0, keepdims=True)
            else:
                maps = self._stack_prompts(spec.tasks, site)
                emb = s.ltse(T.mean(maps, axis=0, keepdims=True))
            return s.hfm(emb)
        per_sample = [spec] if isinstance(spec, str) else list(spec)
        if len(per_sample) not in (1, batch):
            raise ShapeError(f"{len(per_sample)} task ids for a batch of {batch}")
        self._check(per_sample)
        unique = [t for t in self.tasks if t in per_sample]
        pair = s.hfm(self.embedding(site, unique))
        if len(unique) == 1:
            return pair
        idx = np.array([unique.index(t) for t in per_sample])
        return AffinePair(T.take(pair.gamma, idx), T.take(pair.beta, idx))

    def apply(self, x: Tensor, site: str, spec: TaskSpec) -> Tensor:
        # the residual site carries a signed image correction, so it stays affine
        relu_after = self.relu_modulation and site != RESIDUAL_SITE
        return modulate(x, self.affine(site, spec, x.shape[0]), relu_after)
