"""Euclidean projection onto the descending cone by pool-adjacent-violators.

The projection of ``z`` onto ``{y : y_1 >= y_2 >= ... >= y_d}`` is the
equal-weight antitonic regression of ``z``.  PAVA computes it exactly in
O(d) per vector: adjacent blocks that violate the ordering are pooled and
replaced by their mean.
"""

from __future__ import annotations

import numba as nb
import numpy as np
from numpy.typing import ArrayLike, NDArray


@nb.njit(cache=True)
def _pava_row(z, out):
    d = z.shape[0]
    sums = np.empty(d)
    counts = np.empty(d, dtype=np.int64)
    top = -1
    for i in range(d):
        top += 1
        sums[top] = z[i]
        counts[top] = 1
        # pool while the previous block mean is below the current one
        while top > 0 and sums[top - 1] * counts[top] < sums[top] * counts[top - 1]:
            sums[top - 1] += sums[top]
            counts[top - 1] += counts[top]
            top -= 1
    pos = 0
    for b in range(top + 1):
        m = sums[b] / counts[b]
        for _ in range(counts[b]):
            out[pos] = m
            pos += 1


@nb.njit(cache=True)
def _pava_rows(z, out):
    n, d = z.shape
    for r in range(n):
        ordered = True
        for i in range(d - 1):
            if z[r, i] < z[r, i + 1]:
                ordered = False
                break
        if ordered:
            for i in range(d):
                out[r, i] = z[r, i]
        else:
            _pava_row(z[r], out[r])


def project_descending(z: ArrayLike) -> NDArray[np.float64]:
    """Project each vector along the last axis onto the descending cone.

    >>> project_descending([1.0, 1.4, 1.2]).tolist()
    [1.2, 1.2, 1.2]
    """
    z = np.asarray(z, dtype=np.float64)
    flat = np.ascontiguousarray(z.reshape(-1, z.shape[-1]))
    out = np.empty_like(flat)
    _pava_rows(flat, out)
    return out.reshape(z.shape)
