"""Closed-form parameter and operation counts for a :class:`ModelConfig`.

The ledger mirrors :class:`tgpnet.model.TGPNet` layer by layer without
allocating anything, so full-size configurations are counted instantly.
Multiply-accumulates cover convolutions, linear maps and the two attention
products (Q K^T and A V); normalization, softmax, activations and
element-wise arithmetic are not counted.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

from .model import ModelConfig
from .transformer import hidden_width


@dataclass
class LedgerRow:
    group: str
    name: str
    params: int
    macs: int


def _conv(group, name, c_in, c_out, k, pixels_out, groups=1, bias=False):
    p = c_out * (c_in // groups) * k * k + (c_out if bias else 0)
    return LedgerRow(group, name, p, c_out * (c_in // groups) * k * k * pixels_out)


def _block(group, name, c, heads, e, pixels):
    hd = hidden_width(c, e)
    rows = [
        LedgerRow(group, f"{name}.norms", 2 * c, 0),
        LedgerRow(group, f"{name}.attn.temperature", heads, 0),
        _conv(group, f"{name}.attn.qkv", c, 3 * c, 1, pixels),
        _conv(group, f"{name}.attn.qkv_dw", 3 * c, 3 * c, 3, pixels, groups=3 * c),
        LedgerRow(group, f"{name}.attn.products", 0, 2 * c * c * pixels // heads),
        _conv(group, f"{name}.attn.project_out", c, c, 1, pixels),
        _conv(group, f"{name}.ffn.project_in", c, 2 * hd, 1, pixels),
        _conv(group, f"{name}.ffn.dwconv", 2 * hd, 2 * hd, 3, pixels, groups=2 * hd),
        _conv(group, f"{name}.ffn.project_out", hd, c, 1, pixels),
    ]
    return rows


def ledger(cfg: ModelConfig, h: int = 256, w: int = 256) -> list[LedgerRow]:
    if h % 8 or w % 8:
        raise ValueError(f"({h}, {w}) must be divisible by 8")
    c, e, hd = cfg.base_c, cfg.expansion, cfg.heads
    px = [h * w, h * w // 4, h * w // 16, h * w // 64]
    rows: list[LedgerRow] = [_conv("stem", "stem", cfg.c_in, c, 3, px[0])]

    def stage(group, n, ch, heads, pixels):
        for i in range(n):
            rows.extend(_block(group, f"{group}.{i}", ch, heads, e, pixels))

    stage("e1", cfg.enc_blocks[0], c, hd[0], px[0])
    rows.append(_conv("down", "down1", c, c // 2, 1, px[0]))
    stage("e2", cfg.enc_blocks[1], 2 * c, hd[1], px[1])
    rows.append(_conv("down", "down2", 2 * c, c, 1, px[1]))
    stage("e3", cfg.enc_blocks[2], 4 * c, hd[2], px[2])
    rows.append(_conv("down", "down3", 4 * c, 2 * c, 1, px[2]))
    stage("e4", cfg.enc_blocks[3], 8 * c, hd[3], px[3])
    stage("d4", cfg.dec_blocks[0], 8 * c, hd[3], px[3])
    rows.append(_conv("up", "up3", 8 * c, 16 * c, 1, px[3]))
    rows.append(_conv("reduce", "reduce3", 8 * c, 4 * c, 1, px[2]))
    stage("d3", cfg.dec_blocks[1], 4 * c, hd[2], px[2])
    rows.append(_conv("up", "up2", 4 * c, 8 * c, 1, px[2]))
    rows.append(_conv("reduce", "reduce2", 4 * c, 2 * c, 1, px[1]))
    stage("d2", cfg.dec_blocks[2], 2 * c, hd[1], px[1])
    rows.append(_conv("up", "up1", 2 * c, 4 * c, 1, px[1]))
    stage("d1", cfg.dec_blocks[3], 2 * c, hd[0], px[0])
    stage("refinement", cfg.refine_blocks, 2 * c, hd[0], px[0])
    rows.append(_conv("head", "residual", 2 * c, cfg.c_in, 3, px[0]))
    if cfg.tgp_enabled:
        rows.extend(_tgp_rows(cfg, px))
    return rows


def _tgp_rows(cfg: ModelConfig, px) -> list[LedgerRow]:
    c1, c2, ce = cfg.ltse_channels
    s = cfg.prompt_size
    site_px = {"d4": px[3], "d3": px[2], "d2": px[1], "d1": px[0], "refine": px[0],
               "residual": px[0]}
    rows = []
    for site, ch in cfg.site_channels().items():
        g = f"tgp.{site}"
        # one prompt is embedded per forward pass at inference
        rows.append(_conv(g, f"{g}.ltse.w1", 1, c1, 7, (s // 2) ** 2, bias=True))
        rows.append(_conv(g, f"{g}.ltse.w2", c1, c2, 3, (s // 4) ** 2, bias=True))
        rows.append(_conv(g, f"{g}.ltse.w3", c2, ce, 3, (s // 8) ** 2, bias=True))
        rows.append(LedgerRow(g, f"{g}.hfm", 2 * (ce * ch + ch), 2 * ce * ch))
        rows.append(LedgerRow(g, f"{g}.modulate", 0, ch * site_px[site]))
    n_maps = 1 if cfg.shared_prompt else len(cfg.site_channels())
    rows.append(LedgerRow("tgp.prompts", "tgp.prompts", len(cfg.tasks) * n_maps * s * s, 0))
    return rows


def count_parameters(cfg: ModelConfig) -> int:
    """Exact number of trainable scalars (EMA shadows excluded)."""
    return sum(r.params for r in ledger(cfg, 8, 8))


def estimate_macs(cfg: ModelConfig, h: int, w: int) -> int:
    return sum(r.macs for r in ledger(cfg, h, w))


def estimate_flops(cfg: ModelConfig, h: int, w: int) -> int:
    """Floating-point operations, counted as 2 x multiply-accumulates."""
    return 2 * estimate_macs(cfg, h, w)


def group_totals(cfg: ModelConfig, h: int = 256, w: int = 256) -> "OrderedDict[str, tuple[int, int]]":
    out: OrderedDict[str, list[int]] = OrderedDict()
    for r in ledger(cfg, h, w):
        key = r.group.split(".")[0] if r.group.startswith("tgp") else r.group
        acc = out.setdefault(key, [0, 0])
        acc[0] += r.params
        acc[1] += r.macs
    return OrderedDict((k, (p, m)) for k, (p, m) in out.items())
