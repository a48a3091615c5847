"""Token grids and zero-padded 3x3 stencils over them."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, record, register

# (row offset, col offset) -> weight
NEIGHBORHOOD_3X3 = {(di, dj): 1.0 for di in (-1, 0, 1) for dj in (-1, 0, 1)}
HAAR_LOW = {(-1, -1): 1.0, (-1, 1): 1.0, (1, -1): 1.0, (1, 1): 1.0}
HAAR_HIGH = {(-1, -1): 1.0, (1, 1): 1.0, (-1, 1): -1.0, (1, -1): -1.0}


@dataclass
class TokenGrid:
    """``values`` is ``(..., H*W, C)``, tokens in row-major grid order."""

    height: int
    width: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim < 2 or self.values.shape[-2] != self.height * self.width:
            raise ValueError(
                f"token count {self.values.shape[-2] if self.values.ndim >= 2 else None} "
                f"does not match a {self.height}x{self.width} grid")

    @property
    def channels(self) -> int:
        return self.values.shape[-1]

    def image(self) -> np.ndarray:
        return to_image(self.values, self.height, self.width)


def to_image(x: np.ndarray, h: int, w: int) -> np.ndarray:
    if x.shape[-2] != h * w:
        raise ValueError(f"{x.shape[-2]} tokens cannot form a {h}x{w} grid")
    return x.reshape(x.shape[:-2] + (h, w, x.shape[-1]))


def stencil(img: np.ndarray, taps: dict) -> np.ndarray:
    """``out[i, j] = sum w * img[i+di, j+dj]`` over ``taps`` with zero padding.
    ``img`` is ``(..., H, W, C)``."""
    h, w = img.shape[-3], img.shape[-2]
    padded = np.zeros(img.shape[:-3] + (h + 2, w + 2, img.shape[-1]), dtype=img.dtype)
    padded[..., 1:h + 1, 1:w + 1, :] = img
    out = np.zeros_like(img)
    for (di, dj), wt in taps.items():
        out += wt * padded[..., 1 + di:1 + di + h, 1 + dj:1 + dj + w, :]
    return out


def _mirror(taps: dict) -> dict:
    return {(-di, -dj): wt for (di, dj), wt in taps.items()}


def grid_stencil(x: Tensor, h: int, w: int, taps: dict, kernel: Tensor | None = None) -> Tensor:
    """Tape op applying ``taps`` to token-major ``x`` of shape ``(..., H*W, C)``.

    If ``kernel`` (3x3) is given its entries replace the tap weights; it is
    treated as a constant and receives no gradient.
    """
    if kernel is not None:
        k = kernel.data if isinstance(kernel, Tensor) else np.asarray(kernel)
        taps = {(di, dj): float(k[di + 1, dj + 1]) for (di, dj) in taps}
    xd = x.data
    out = stencil(to_image(xd, h, w), taps).reshape(xd.shape)
    inputs = (x,) if kernel is None else (x, kernel)
    return record("grid_stencil", inputs, out, h=h, w=w, taps=taps)


@register("grid_stencil")
def _grid_stencil_bw(g, ctx):
    gx = stencil(to_image(g, ctx["h"], ctx["w"]), _mirror(ctx["taps"])).reshape(g.shape)
    return gx, None
