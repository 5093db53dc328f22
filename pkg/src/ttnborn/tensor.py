"""Dense real tensors with a tracked log-scale factor.

Every multi-way array in this package is a ``DenseTensor``: a float64
ndarray ``data`` together with a scalar ``log_scale``, representing the
tensor ``exp(log_scale) * data``.  Carrying the magnitude in log space keeps
contractions of networks with ~1000 tensors finite, and lets ratios of
amplitudes cancel scales exactly.

Four operations cover everything built on top: pairwise contraction,
matricized QR, truncated SVD, and the Frobenius norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

# After any contraction, if max |data| leaves this window, data is rescaled
# to unit max magnitude and the factor folded into log_scale.
RESCALE_HI = 1e150
RESCALE_LO = 1e-150

NEG_INF = float("-inf")


class DenseTensor:
    """A float64 array plus a log-scale factor; immutable by convention."""

    __slots__ = ("data", "log_scale")

    def __init__(self, data, log_scale: float = 0.0, validate: bool = True):
        arr = np.asarray(data, dtype=np.float64)
        if validate:
            if not np.all(np.isfinite(arr)):
                raise ValueError("tensor data must be finite")
            if not math.isfinite(log_scale):
                raise ValueError("log_scale must be finite")
        self.data = arr
        self.log_scale = float(log_scale)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def copy(self) -> "DenseTensor":
        return DenseTensor(self.data.copy(), self.log_scale, validate=False)

    def to_array(self) -> np.ndarray:
        """Materialize exp(log_scale) * data.  Only safe for modest scales."""
        return self.data * math.exp(self.log_scale)

    def rescaled(self) -> "DenseTensor":
        """Apply the rescaling policy: fold extreme magnitudes into log_scale."""
        m = float(np.max(np.abs(self.data))) if self.data.size else 0.0
        if m == 0.0 or RESCALE_LO <= m <= RESCALE_HI:
            return self
        return DenseTensor(self.data / m, self.log_scale + math.log(m),
                           validate=False)

    def __repr__(self):
        return f"DenseTensor(shape={self.shape}, log_scale={self.log_scale:.6g})"


@dataclass
class QrResult:
    q: DenseTensor  # (row_axes..., k), orthonormal columns when matricized
    r: DenseTensor  # (k, col_axes...), non-negative diagonal


@dataclass
class SvdResult:
    u: DenseTensor          # (row_axes..., k), orthonormal columns
    s: list                 # kept singular values, descending
    v: DenseTensor          # (col_axes..., k), orthonormal columns
    truncation_error: float  # discarded weight / total weight, in [0, 1]


def _check_axis_partition(t: DenseTensor, row_axes, col_axes):
    axes = list(row_axes) + list(col_axes)
    if sorted(axes) != list(range(t.ndim)):
        raise DimensionError(
            f"row_axes {list(row_axes)} and col_axes {list(col_axes)} do not "
            f"partition the {t.ndim} axes of the tensor")


def _matricize(t: DenseTensor, row_axes, col_axes):
    row_axes, col_axes = list(row_axes), list(col_axes)
    perm = row_axes + col_axes
    row_dims = [t.shape[a] for a in row_axes]
    col_dims = [t.shape[a] for a in col_axes]
    mat = np.transpose(t.data, perm).reshape(
        int(np.prod(row_dims, dtype=np.int64)) if row_dims else 1,
        int(np.prod(col_dims, dtype=np.int64)) if col_dims else 1)
    return np.ascontiguousarray(mat), row_dims, col_dims


def contract(a: DenseTensor, b: DenseTensor, axis_pairs) -> DenseTensor:
    """Contract a with b over the given (axis-in-a, axis-in-b) pairs.

    Result axes are the unpaired axes of ``a`` followed by those of ``b``.
    Contracting all axes of both yields a 0-way (scalar) tensor.
    """
    pairs = list(axis_pairs)
    axes_a = [p[0] for p in pairs]
    axes_b = [p[1] for p in pairs]
    if len(set(axes_a)) != len(axes_a) or len(set(axes_b)) != len(axes_b):
        raise DimensionError("an axis may be paired at most once")
    for ia, ib in pairs:
        if not (0 <= ia < a.ndim and 0 <= ib < b.ndim):
            raise DimensionError(f"axis pair ({ia}, {ib}) out of range")
        if a.shape[ia] != b.shape[ib]:
            raise DimensionError(
                f"cannot contract axis {ia} (dim {a.shape[ia]}) of {a.shape} "
                f"with axis {ib} (dim {b.shape[ib]}) of {b.shape}")
    out = np.tensordot(a.data, b.data, axes=(axes_a, axes_b))
    return DenseTensor(np.asarray(out), a.log_scale + b.log_scale,
                       validate=False).rescaled()


def qr_split(t: DenseTensor, row_axes, col_axes) -> QrResult:
    """QR-factor the matricization rows=row_axes, cols=col_axes.

    Q comes back reshaped to (row_axes..., k) with exactly orthonormal
    columns; R is (k, col_axes...) and carries the whole input log_scale.
    The diagonal of R is forced non-negative so the decomposition is
    deterministic.
    """
    _check_axis_partition(t, row_axes, col_axes)
    mat, row_dims, col_dims = _matricize(t, row_axes, col_axes)
    q, r = np.linalg.qr(mat, mode="reduced")
    diag_sign = np.sign(np.diag(r))
    diag_sign[diag_sign == 0] = 1.0
    q = q * diag_sign[np.newaxis, :]
    r = r * diag_sign[:, np.newaxis]
    k = q.shape[1]
    q_t = DenseTensor(q.reshape(row_dims + [k]), 0.0, validate=False)
    r_t = DenseTensor(r.reshape([k] + col_dims), t.log_scale,
                      validate=False).rescaled()
    return QrResult(q=q_t, r=r_t)


def kept_rank(s: np.ndarray, d_max: int, cutoff: float) -> int:
    """Number of singular values to keep: min(d_max, #above-cutoff, all), >= 1.

    A value is above the cutoff when its squared relative weight exceeds it.
    """
    total = float(np.sum(s * s))
    if total == 0.0:
        return 1
    significant = int(np.sum((s * s) / total > cutoff))
    return max(1, min(int(d_max), significant, len(s)))


def svd_split(t: DenseTensor, row_axes, col_axes, d_max: int,
              cutoff: float = 0.0) -> SvdResult:
    """Truncated SVD of the matricization rows=row_axes, cols=col_axes.

    Both factors have orthonormal columns; the singular values absorb the
    input log_scale.  ``truncation_error`` is the discarded squared weight
    relative to the total squared weight.
    """
    if d_max < 1:
        raise DimensionError("d_max must be >= 1")
    _check_axis_partition(t, row_axes, col_axes)
    mat, row_dims, col_dims = _matricize(t, row_axes, col_axes)
    if not np.any(mat):
        # All-zero tensor: a single zero singular value by convention.
        u = np.zeros((mat.shape[0], 1))
        v = np.zeros((mat.shape[1], 1))
        u[0, 0] = 1.0
        v[0, 0] = 1.0
        return SvdResult(
            u=DenseTensor(u.reshape(row_dims + [1]), 0.0, validate=False),
            s=[0.0],
            v=DenseTensor(v.reshape(col_dims + [1]), 0.0, validate=False),
            truncation_error=0.0)
    u, s, vt = np.linalg.svd(mat, full_matrices=False)
    k = kept_rank(s, d_max, cutoff)
    total = float(np.sum(s * s))
    discarded = float(np.sum(s[k:] * s[k:]))
    u, s, vt = u[:, :k], s[:k], vt[:k, :]
    # Deterministic sign convention: largest-magnitude entry of each left
    # singular vector is positive.
    for j in range(k):
        i = int(np.argmax(np.abs(u[:, j])))
        if u[i, j] < 0:
            u[:, j] = -u[:, j]
            vt[j, :] = -vt[j, :]
    scale = math.exp(t.log_scale) if t.log_scale != 0.0 else 1.0
    return SvdResult(
        u=DenseTensor(u.reshape(row_dims + [k]), 0.0, validate=False),
        s=[float(x) * scale for x in s],
        v=DenseTensor(np.ascontiguousarray(vt.T).reshape(col_dims + [k]),
                      0.0, validate=False),
        truncation_error=discarded / total)


def frobenius_norm(t: DenseTensor) -> float:
    """log of the Frobenius norm, log_scale included; -inf for the zero tensor."""
    if t.data.size == 0:
        raise DimensionError("tensor is empty")
    n = float(np.linalg.norm(t.data.ravel()))
    if n == 0.0:
        return NEG_INF
    return math.log(n) + t.log_scale
