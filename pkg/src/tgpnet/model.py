"""TGPNet: a U-shaped channel-attention restoration network with task-guided
modulation at six decoder sites.

Stage layout for base width C (spatial size relative to the input)::

    stem 3x3            C     H
    E1 -> down          C  -> 2C   H/2
    E2 -> down          2C -> 4C   H/4
    E3 -> down          4C -> 8C   H/8
    E4, D4, TGP(d4)     8C         H/8
    up, cat E3, reduce  4C         H/4   D3, TGP(d3)
    up, cat E2, reduce  2C         H/2   D2, TGP(d2)
    up, cat E1          2C         H     D1, TGP(d1)
    refinement          2C         H     TGP(refine)
    residual conv 3x3   c_in       H     TGP(residual)
    output = input + residual
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

from . import tensor as T
from .nn import Conv2d, Module, Sequential, pixel_shuffle, pixel_unshuffle
from .tensor import ShapeError, Tensor
from .tgp import SITES, TASKS, TaskGuidedPrompting, TaskSpec
from .transformer import DEFAULT_EXPANSION, TransformerBlock


@dataclass
class ModelConfig:
    c_in: int = 3
    base_c: int = 48
    enc_blocks: list[int] = field(default_factory=lambda: [1, 2, 2, 4])
    dec_blocks: list[int] = field(default_factory=lambda: [4, 2, 2, 1])
    refine_blocks: int = 2
    heads: list[int] = field(default_factory=lambda: [2, 4, 8, 8])
    expansion: float = DEFAULT_EXPANSION
    tasks: list[str] = field(default_factory=lambda: list(TASKS))
    tgp_enabled: bool = True
    relu_modulation: bool = False
    shared_prompt: bool = False
    prompt_size: int = 64
    ltse_channels: list[int] = field(default_factory=lambda: [16, 32, 64])
    seed: int = 0

    def __post_init__(self):
        for name in ("enc_blocks", "dec_blocks", "heads"):
            if len(getattr(self, name)) != 4:
                raise ValueError(f"{name} must have 4 entries, got {getattr(self, name)}")
        if self.base_c % max(self.heads):
            raise ValueError(f"base_c={self.base_c} not divisible by max(heads)={max(self.heads)}")
        if self.base_c % 2:
            raise ValueError("base_c must be even (the first downsample halves it)")
        if len(self.ltse_channels) != 3:
            raise ValueError("ltse_channels needs 3 entries")

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        """Small configuration used for gradient checks and desk-scale training."""
        base = dict(base_c=8, enc_blocks=[1, 1, 1, 1], dec_blocks=[1, 1, 1, 1], refine_blocks=1)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def site_channels(self) -> dict[str, int]:
        c = self.base_c
        return {"d4": 8 * c, "d3": 4 * c, "d2": 2 * c, "d1": 2 * c, "refine": 2 * c,
                "residual": self.c_in}


def _stage(c: int, n: int, heads: int, e: float) -> Sequential:
    return Sequential(*(TransformerBlock(c, heads, e) for _ in range(n)))


class Downsample(Module):
    """1x1 conv c -> c/2, then pixel-unshuffle(2): net (2c, h/2, w/2)."""

    def __init__(self, c: int):
        super().__init__()
        self.conv = Conv2d(c, c // 2, 1, bias=False)

    def __call__(self, x):
        return pixel_unshuffle(self.conv(x), 2)


class Upsample(Module):
    """1x1 conv c -> 2c, then pixel-shuffle(2): net (c/2, 2h, 2w)."""

    def __init__(self, c: int):
        super().__init__()
        self.conv = Conv2d(c, 2 * c, 1, bias=False)

    def __call__(self, x):
        return pixel_shuffle(self.conv(x), 2)


STAGE_TAPS = ("stem", "e1", "down1", "e2", "down2", "e3", "down3", "e4",
              "d4", "up3", "cat3", "reduce3", "d3", "up2", "cat2", "reduce2", "d2",
              "up1", "cat1", "d1", "refine", "residual", "output")
TAP_NAMES = STAGE_TAPS + tuple(f"{s}.{p}" for s in SITES for p in ("pre", "post"))


class TGPNet(Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        c, e, hd = cfg.base_c, cfg.expansion, cfg.heads
        eb, db = cfg.enc_blocks, cfg.dec_blocks
        self.stem = Conv2d(cfg.c_in, c, 3, bias=False)
        self.e1 = _stage(c, eb[0], hd[0], e)
        self.down1 = Downsample(c)
        self.e2 = _stage(2 * c, eb[1], hd[1], e)
        self.down2 = Downsample(2 * c)
        self.e3 = _stage(4 * c, eb[2], hd[2], e)
        self.down3 = Downsample(4 * c)
        self.e4 = _stage(8 * c, eb[3], hd[3], e)
        self.d4 = _stage(8 * c, db[0], hd[3], e)
        self.up3 = Upsample(8 * c)
        self.reduce3 = Conv2d(8 * c, 4 * c, 1, bias=False)
        self.d3 = _stage(4 * c, db[1], hd[2], e)
        self.up2 = Upsample(4 * c)
        self.reduce2 = Conv2d(4 * c, 2 * c, 1, bias=False)
        self.d2 = _stage(2 * c, db[2], hd[1], e)
        self.up1 = Upsample(2 * c)
        self.d1 = _stage(2 * c, db[3], hd[0], e)
        self.refinement = _stage(2 * c, cfg.refine_blocks, hd[0], e)
        self.residual = Conv2d(2 * c, cfg.c_in, 3, bias=False)
        if cfg.tgp_enabled:
            self.tgp = TaskGuidedPrompting(
                cfg.tasks, cfg.site_channels(), (cfg.prompt_size, cfg.prompt_size),
                tuple(cfg.ltse_channels), cfg.shared_prompt, cfg.relu_modulation)
        else:
            self.tgp = None
        self.reset_parameters(cfg.seed)

    @property
    def tasks(self) -> list[str]:
        return list(self.cfg.tasks)

    def _check_task(self, task: TaskSpec) -> None:
        if self.tgp is not None:
            # resolves and validates without building anything
            names = task.tasks if hasattr(task, "tasks") else ([task] if isinstance(task, str)
                                                                else list(task))
            self.tgp._check(names)
        elif not isinstance(task, (str, list, tuple)) and not hasattr(task, "tasks"):
            raise TypeError(f"bad task spec {task!r}")

    def __call__(self, x: Tensor, task: TaskSpec) -> Tensor:
        return self.forward_with_taps(x, task, ())[0]

    def forward(self, x: Tensor, task: TaskSpec) -> Tensor:
        return self(x, task)

    def forward_with_taps(self, x: Tensor, task: TaskSpec, taps=()) -> tuple[Tensor, dict]:
        """Run the network and copy out the requested intermediate features."""
        taps = tuple(taps)
        bad = [t for t in taps if t not in TAP_NAMES]
        if bad:
            raise KeyError(f"unknown tap(s) {bad}; valid taps: {list(TAP_NAMES)}")
        if x.ndim != 4 or x.shape[1] != self.cfg.c_in:
            raise ShapeError(f"expected input (n, {self.cfg.c_in}, h, w), got {x.shape}")
        if x.shape[2] % 8 or x.shape[3] % 8:
            raise ShapeError(f"spatial dims {x.shape[2:]} must be divisible by 8; "
                             "pad the input (e.g. reflect) to a multiple of 8")
        self._check_task(task)
        out: dict[str, Tensor] = {}

        def tap(name, value):
            if name in taps:
                out[name] = value
            return value

        def site(name, value):
            tap(f"{name}.pre", value)
            if self.tgp is not None:
                value = self.tgp.apply(value, name, task)
            return tap(f"{name}.post", value)

        f = tap("stem", self.stem(x))
        e1 = tap("e1", self.e1(f))
        e2 = tap("e2", self.e2(tap("down1", self.down1(e1))))
        e3 = tap("e3", self.e3(tap("down2", self.down2(e2))))
        e4 = tap("e4", self.e4(tap("down3", self.down3(e3))))
        d = site("d4", tap("d4", self.d4(e4)))
        d = tap("cat3", T.concat([tap("up3", self.up3(d)), e3], axis=1))
        d = site("d3", tap("d3", self.d3(tap("reduce3", self.reduce3(d)))))
        d = tap("cat2", T.concat([tap("up2", self.up2(d)), e2], axis=1))
        d = site("d2", tap("d2", self.d2(tap("reduce2", self.reduce2(d)))))
        d = tap("cat1", T.concat([tap("up1", self.up1(d)), e1], axis=1))
        d = site("d1", tap("d1", self.d1(d)))
        d = site("refine", tap("refine", self.refinement(d)))
        r = site("residual", tap("residual", self.residual(d)))
        y = tap("output", x + r)
        return y, {k: T.Tensor(v.data.copy()) for k, v in out.items()}


def build_model(cfg: ModelConfig | None = None, **overrides) -> TGPNet:
    if cfg is None:
        cfg = ModelConfig(**overrides)
    return TGPNet(cfg)
