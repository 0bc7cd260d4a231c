"""Channel-attention transformer block (MDTA + GDFN)."""
from __future__ import annotations

from . import tensor as T
from .nn import Conv2d, LayerNorm, Module, gelu, softmax
from .tensor import Parameter, ShapeError, Tensor

DEFAULT_EXPANSION = 2.66


def hidden_width(c: int, expansion: float) -> int:
    return int(c * expansion)


class MDTA(Module):
    """Multi-head transposed attention: heads attend across channels, not pixels.

    Each head forms a (c/heads, c/heads) attention matrix from L2-normalized
    query/key rows of length h*w, so cost is linear in pixel count.
    """

    def __init__(self, c: int, heads: int):
        super().__init__()
        if c % heads:
            raise ShapeError(f"channels {c} not divisible by heads {heads}")
        self.c, self.heads = c, heads
        self.temperature = Parameter((1, heads, 1, 1), init="ones")
        self.qkv = Conv2d(c, 3 * c, 1, bias=False)
        self.qkv_dw = Conv2d(3 * c, 3 * c, 3, groups=3 * c, bias=False)
        self.project_out = Conv2d(c, c, 1, bias=False)

    def attention(self, y: Tensor) -> tuple[Tensor, Tensor]:
        """Return (attention matrices, attended values reshaped to (n, c, h, w))."""
        n, _, h, w = y.shape
        c, heads = self.c, self.heads
        qkv = self.qkv_dw(self.qkv(y))
        q, k, v = (T.reshape(T.narrow(qkv, 1, i * c, c), (n, heads, c // heads, h * w))
                   for i in range(3))
        q = T.l2_normalize(q, axis=-1)
        k = T.l2_normalize(k, axis=-1)
        attn = softmax(T.matmul(q, T.transpose(k, (0, 1, 3, 2))) * self.temperature)
        out = T.reshape(T.matmul(attn, v), (n, c, h, w))
        return attn, out

    def __call__(self, y: Tensor) -> Tensor:
        return self.project_out(self.attention(y)[1])


class GDFN(Module):
    """Gated depthwise-conv feed-forward: gelu(x1) * x2 over a split hidden map."""

    def __init__(self, c: int, expansion: float = DEFAULT_EXPANSION):
        super().__init__()
        self.hidden = hidden_width(c, expansion)
        hd = self.hidden
        self.project_in = Conv2d(c, 2 * hd, 1, bias=False)
        self.dwconv = Conv2d(2 * hd, 2 * hd, 3, groups=2 * hd, bias=False)
        self.project_out = Conv2d(hd, c, 1, bias=False)

    def __call__(self, y: Tensor) -> Tensor:
        hidden = self.dwconv(self.project_in(y))
        x1 = T.narrow(hidden, 1, 0, self.hidden)
        x2 = T.narrow(hidden, 1, self.hidden, self.hidden)
        return self.project_out(gelu(x1) * x2)


class TransformerBlock(Module):
    def __init__(self, c: int, heads: int, expansion: float = DEFAULT_EXPANSION):
        super().__init__()
        self.norm1 = LayerNorm(c)
        self.attn = MDTA(c, heads)
        self.norm2 = LayerNorm(c)
        self.ffn = GDFN(c, expansion)

    def mdta(self, x: Tensor) -> Tensor:
        return x + self.attn(self.norm1(x))

    def gdfn(self, x: Tensor) -> Tensor:
        return x + self.ffn(self.norm2(x))

    def __call__(self, x: Tensor) -> Tensor:
        return self.gdfn(self.mdta(x))
