"""Hot data-movement kernels for the convolution and pooling layers.

The column gather (im2col), its scatter-add inverse (col2im), and the max
pooling forward/backward are plain element loops, compiled with numba when
it is available. The numpy fallbacks below produce bitwise-identical
results (same accumulation order); they are just slower.

Column layout is channels-first: ``cols[(c*KH + u)*KW + v, (b*Ho + i)*Wo + j]``
holds ``arr[b, c, u + i*stride, v + j*stride]``, so a convolution forward is
one ``(O, C*KH*KW) @ (C*KH*KW, B*Ho*Wo)`` matrix product.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

__all__ = ["HAVE_NUMBA", "im2col", "col2im", "maxpool_forward", "maxpool_backward"]


def _out_size(h: int, w: int, kh: int, kw: int, stride: int) -> tuple[int, int]:
    return (h - kh) // stride + 1, (w - kw) // stride + 1


if HAVE_NUMBA:

    @njit(cache=True)
    def _im2col_jit(arr, kh, kw, stride, cols):
        b, c, h, w = arr.shape
        ho = (h - kh) // stride + 1
        wo = (w - kw) // stride + 1
        for ci in range(c):
            for u in range(kh):
                for v in range(kw):
                    row = (ci * kh + u) * kw + v
                    for bi in range(b):
                        for i in range(ho):
                            base = (bi * ho + i) * wo
                            src_i = u + i * stride
                            for j in range(wo):
                                cols[row, base + j] = arr[bi, ci, src_i, v + j * stride]

    @njit(cache=True)
    def _col2im_jit(dcols, kh, kw, stride, gx):
        b, c, h, w = gx.shape
        ho = (h - kh) // stride + 1
        wo = (w - kw) // stride + 1
        for ci in range(c):
            for u in range(kh):
                for v in range(kw):
                    row = (ci * kh + u) * kw + v
                    for bi in range(b):
                        for i in range(ho):
                            base = (bi * ho + i) * wo
                            dst_i = u + i * stride
                            for j in range(wo):
                                gx[bi, ci, dst_i, v + j * stride] += dcols[row, base + j]

    @njit(cache=True)
    def _maxpool_jit(arr, window, out, arg, want_arg):
        b, c, h, w = arr.shape
        ho = h // window
        wo = w // window
        for bi in range(b):
            for ci in range(c):
                for i in range(ho):
                    for j in range(wo):
                        best = arr[bi, ci, i * window, j * window]
                        best_at = 0
                        for u in range(window):
                            for v in range(window):
                                val = arr[bi, ci, i * window + u, j * window + v]
                                if val > best:
                                    best = val
                                    best_at = u * window + v
                        out[bi, ci, i, j] = best
                        if want_arg:
                            arg[bi, ci, i, j] = best_at

    @njit(cache=True)
    def _maxpool_bwd_jit(g, arg, window, gx):
        b, c, ho, wo = g.shape
        for bi in range(b):
            for ci in range(c):
                for i in range(ho):
                    for j in range(wo):
                        at = arg[bi, ci, i, j]
                        gx[bi, ci, i * window + at // window, j * window + at % window] = g[
                            bi, ci, i, j
                        ]

    def im2col(arr: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
        b, c, h, w = arr.shape
        ho, wo = _out_size(h, w, kh, kw, stride)
        cols = np.empty((c * kh * kw, b * ho * wo))
        _im2col_jit(np.ascontiguousarray(arr), kh, kw, stride, cols)
        return cols

    def col2im(dcols: np.ndarray, kh: int, kw: int, stride: int, shape) -> np.ndarray:
        gx = np.zeros(shape)
        _col2im_jit(np.ascontiguousarray(dcols), kh, kw, stride, gx)
        return gx

    def maxpool_forward(arr: np.ndarray, window: int, want_arg: bool):
        b, c, h, w = arr.shape
        out = np.empty((b, c, h // window, w // window))
        arg = np.empty(out.shape, dtype=np.int64) if want_arg else np.empty((1, 1, 1, 1), np.int64)
        _maxpool_jit(np.ascontiguousarray(arr), window, out, arg, want_arg)
        return out, (arg if want_arg else None)

    def maxpool_backward(g: np.ndarray, arg: np.ndarray, window: int, shape) -> np.ndarray:
        gx = np.zeros(shape)
        _maxpool_bwd_jit(np.ascontiguousarray(g), arg, window, gx)
        return gx

else:  # pragma: no cover - exercised only without numba

    def im2col(arr: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
        b, c, h, w = arr.shape
        ho, wo = _out_size(h, w, kh, kw, stride)
        cols = np.empty((c, kh, kw, b, ho, wo))
        hspan = (ho - 1) * stride + 1
        wspan = (wo - 1) * stride + 1
        for u in range(kh):
            for v in range(kw):
                cols[:, u, v] = arr[:, :, u : u + hspan : stride, v : v + wspan : stride].transpose(
                    1, 0, 2, 3
                )
        return cols.reshape(c * kh * kw, b * ho * wo)

    def col2im(dcols: np.ndarray, kh: int, kw: int, stride: int, shape) -> np.ndarray:
        b, c, h, w = shape
        ho, wo = _out_size(h, w, kh, kw, stride)
        gx = np.zeros(shape)
        parts = dcols.reshape(c, kh, kw, b, ho, wo)
        hspan = (ho - 1) * stride + 1
        wspan = (wo - 1) * stride + 1
        for u in range(kh):
            for v in range(kw):
                gx[:, :, u : u + hspan : stride, v : v + wspan : stride] += parts[:, u, v].transpose(
                    1, 0, 2, 3
                )
        return gx

    def maxpool_forward(arr: np.ndarray, window: int, want_arg: bool):
        b, c, h, w = arr.shape
        ho, wo = h // window, w // window
        tiles = (
            arr.reshape(b, c, ho, window, wo, window)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(b, c, ho, wo, window * window)
        )
        out = tiles.max(axis=-1)
        return out, (tiles.argmax(axis=-1) if want_arg else None)

    def maxpool_backward(g: np.ndarray, arg: np.ndarray, window: int, shape) -> np.ndarray:
        b, c, h, w = shape
        ho, wo = h // window, w // window
        gt = np.zeros((b, c, ho, wo, window * window))
        np.put_along_axis(gt, arg[..., None], g[..., None], axis=-1)
        return (
            gt.reshape(b, c, ho, wo, window, window)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(b, c, h, w)
        )
