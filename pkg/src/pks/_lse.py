"""Separable log-sum-exp convolution with a 1-D Gibbs kernel (the Sinkhorn hot loop).

The fast path shifts blocks of each row by their maximum, exponentiates once
and spreads each block with a small kernel slab (one batched BLAS call).
Entries whose shifted sum underflows are recomputed with a max-stabilized
banded loop, so the result is correct across any dynamic range.
"""

import numpy as np
import numba

UNDERFLOW = 1e-250


@numba.njit(cache=True)
def _lse_rows(W, logk):
    R, N = W.shape
    K = (logk.shape[0] - 1) // 2
    out = np.empty((R, N))
    for r in range(R):
        for y in range(N):
            m = -np.inf
            s = 0.0
            lo = max(0, y - K)
            hi = min(N, y + K + 1)
            for j in range(lo, hi):
                x = W[r, j] + logk[j - y + K]
                if x > m:
                    s = s * np.exp(m - x) + 1.0
                    m = x
                elif x > -np.inf:
                    s += np.exp(x - m)
            out[r, y] = m + np.log(s) if s > 0.0 else -np.inf
    return out


def lse_last_axis(W: np.ndarray, logk: np.ndarray) -> np.ndarray:
    """``out[..., y] = log sum_k exp(W[..., y + k] + logk[k])`` for ``|k| <= K``.

    ``logk`` has odd length ``2K + 1`` and is indexed from ``-K``; entries of
    ``W`` outside ``[0, N)`` count as ``-inf``.
    """
    shape = W.shape
    flat = np.ascontiguousarray(W, dtype=np.float64).reshape(-1, shape[-1])
    return _lse_rows(flat, np.ascontiguousarray(logk, dtype=np.float64)).reshape(shape)


@numba.njit(cache=True)
def _lse_entries(W, logk, rows, cols):
    K = (logk.shape[0] - 1) // 2
    N = W.shape[1]
    out = np.empty(rows.shape[0])
    for e in range(rows.shape[0]):
        r, y = rows[e], cols[e]
        m = -np.inf
        for j in range(max(0, y - K), min(N, y + K + 1)):
            x = W[r, j] + logk[j - y + K]
            if x > m:
                m = x
        s = 0.0
        if m > -np.inf:
            for j in range(max(0, y - K), min(N, y + K + 1)):
                s += np.exp(W[r, j] + logk[j - y + K] - m)
        out[e] = m + np.log(s) if s > 0.0 else -np.inf
    return out


class AxisKernel:
    """``logk(d) = -(d h)^2 / eps + p log((d h)^2)`` on an axis of ``N`` cells.

    ``apply`` splits each row into blocks of ``B >= K`` cells, shifts every
    block by its own maximum and spreads it onto the ``B + 2K`` outputs it
    reaches with one small matrix product.
    """

    def __init__(self, h: float, eps: float, N: int, power: int = 0, cutoff: float = 40.0):
        self.N = N
        K = min(int(np.ceil(np.sqrt(cutoff * eps) / h)) + 1, N - 1)
        self.K = K
        d = np.arange(-K, K + 1) * h
        with np.errstate(divide="ignore"):
            self.band = -d * d / eps + (power * np.log(d * d) if power else 0.0)
        self.B = B = max(K, 32)
        self.nb = -(-N // B)
        # slab[j, t]: weight from block cell j to output (block start - K + t)
        off = (np.arange(B + 2 * K)[None, :] - K) - np.arange(B)[:, None]
        inside = np.abs(off) <= K
        self.slab = np.where(inside, np.exp(self.band[np.clip(-off + K, 0, 2 * K)]), 0.0)

    def apply(self, W: np.ndarray) -> np.ndarray:
        """Log-domain convolution along the last axis of ``W``."""
        shape = W.shape
        N, K, B, nb = self.N, self.K, self.B, self.nb
        flat = np.ascontiguousarray(W, dtype=np.float64).reshape(-1, N)
        R = flat.shape[0]
        Wp = np.full((R, nb * B), -np.inf)
        Wp[:, :N] = flat
        Wb = Wp.reshape(R, nb, B)
        m = Wb.max(axis=2, keepdims=True)
        m = np.where(np.isfinite(m), m, 0.0)
        with np.errstate(under="ignore", invalid="ignore"):
            T = np.exp(Wb - m) @ self.slab  # (R, nb, B + 2K)
        with np.errstate(divide="ignore", under="ignore"):
            Z = np.log(T) + m
        # overlap-add in log space: block b feeds blocks b-1, b, b+1
        acc = np.full((R, nb + 2, B), -np.inf)
        acc[:, 1:-1, :] = Z[:, :, K:K + B]
        left = np.full((R, nb, B), -np.inf)
        left[:, :, B - K:] = Z[:, :, :K]
        right = np.full((R, nb, B), -np.inf)
        right[:, :, :K] = Z[:, :, K + B:]
        with np.errstate(invalid="ignore"):
            acc[:, :-2, :] = np.logaddexp(acc[:, :-2, :], left)
            acc[:, 2:, :] = np.logaddexp(acc[:, 2:, :], right)
        out = acc[:, 1:-1, :].reshape(R, nb * B)[:, :N]
        # a block sum can underflow when its maximum sits outside the band;
        # recheck outputs where such a block could still contribute
        mf = np.where(np.isfinite(Wb.max(axis=2, keepdims=True)), m, -np.inf) + self.band.max()
        with np.errstate(invalid="ignore"):
            sus = (T < UNDERFLOW) & (mf > -np.inf)
        bound = np.full((R, nb + 2, B), -np.inf)
        hit = np.where(sus[:, :, K:K + B], mf, -np.inf)
        bound[:, 1:-1, :] = hit
        bound[:, :-2, B - K:] = np.maximum(bound[:, :-2, B - K:], np.where(sus[:, :, :K], mf, -np.inf))
        bound[:, 2:, :K] = np.maximum(bound[:, 2:, :K], np.where(sus[:, :, K + B:], mf, -np.inf))
        bnd = bound[:, 1:-1, :].reshape(R, nb * B)[:, :N]
        with np.errstate(invalid="ignore"):
            small = bnd > out - 40.0
        rows, cols = np.nonzero(small)
        if rows.size:
            out[rows, cols] = _lse_entries(flat, self.band, rows, cols)
        return out.reshape(shape)


def lse_separable(W: np.ndarray, k0: AxisKernel, k1: AxisKernel) -> np.ndarray:
    """Two-axis version for ``(..., N, N)`` arrays; ``k0`` acts on x, ``k1`` on y."""
    t = k1.apply(W)
    t = k0.apply(np.swapaxes(t, -1, -2))
    return np.swapaxes(t, -1, -2)
