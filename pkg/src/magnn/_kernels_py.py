"""Pure numpy implementations of the hot kernels.

Every function here has a twin with the same signature in the compiled
``_kernels`` extension. Inputs are C-contiguous float64 arrays; the caller
(``magnn.kernels``) takes care of that.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND = "numpy"


def _windows(xpad, k, stride, dilation):
    span = (k - 1) * dilation + 1
    # (B, C, n_pos, span) -> strided selection -> (B, C, L_out, k)
    return sliding_window_view(xpad, span, axis=-1)[:, :, ::stride, ::dilation]


def conv1d_forward(xpad, w, stride, dilation):
    """Valid cross-correlation of an already padded (B, C_in, L) input."""
    k = w.shape[2]
    cols = _windows(xpad, k, stride, dilation)
    out = np.tensordot(cols, w, axes=([1, 3], [1, 2]))  # (B, L_out, C_out)
    return np.ascontiguousarray(out.transpose(0, 2, 1))


def conv1d_backward(g, xpad, w, stride, dilation):
    """Return (grad wrt padded input, grad wrt kernel)."""
    k = w.shape[2]
    l_out = g.shape[2]
    cols = _windows(xpad, k, stride, dilation)
    gw = np.tensordot(g, cols, axes=([0, 2], [0, 2]))  # (C_out, C_in, k)
    gcols = np.tensordot(g, w, axes=([1], [0]))  # (B, L_out, C_in, k)
    gx = np.zeros_like(xpad)
    last = stride * (l_out - 1) + 1
    for j in range(k):
        start = j * dilation
        gx[:, :, start:start + last:stride] += gcols[:, :, :, j].transpose(0, 2, 1)
    return gx, np.ascontiguousarray(gw)


def maxpool1d_forward(x, window, stride):
    """Max over non-padded windows; returns values and absolute argmax positions."""
    win = sliding_window_view(x, window, axis=-1)[:, :, ::stride]
    # argmax returns the first maximum, so ties go to the earlier position
    local = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, local[..., None], axis=-1)[..., 0]
    pos = local + stride * np.arange(win.shape[2])
    return np.ascontiguousarray(out), np.ascontiguousarray(pos.astype(np.int64))


def maxpool1d_backward(g, pos, length):
    b, c, _ = g.shape
    gx = np.zeros((b, c, length))
    # windows never overlap when window == stride, but stay general
    bi = np.arange(b)[:, None, None]
    ci = np.arange(c)[None, :, None]
    np.add.at(gx, (bi, ci, pos), g)
    return gx


def topk_mask(a, k):
    """0/1 mask keeping the k largest entries of each row, lower index wins ties."""
    n, m = a.shape
    mask = np.zeros((n, m))
    if k >= m:
        mask[:] = 1.0
        return mask
    # stable sort on the negated row keeps lower column first among equals
    order = np.argsort(-a, axis=1, kind="stable")[:, :k]
    np.put_along_axis(mask, order, 1.0, axis=1)
    return mask
