"""The tree tensor network Born machine.

Topology
--------
The model is a perfect binary tree stored heap-style.  For ``n_sites``
pixels (a power of two, >= 4) there are ``n_sites - 1`` tensors indexed
1..n_sites-1.  Tensor 1 is the 2-way root with axes (bond to node 2,
bond to node 3); every other tensor ``n`` is 3-way with axes
(bond to parent ``n // 2``, bond to child ``2n``, bond to child ``2n + 1``).
Nodes whose children indices exceed the tensor count are leaves; their two
lower axes are physical with dimension 2, and heap slot ``n_sites + k``
corresponds to pixel ``k``, so pixels run left to right across the leaves.

The squared amplitude of a pixel configuration, normalized by the partition
function, is the model probability.  In mixed canonical form every tensor
except one (the center) contracts with itself over its two non-center-facing
axes to the identity, which makes the partition function the squared
Frobenius norm of the center tensor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (DegenerateDistributionError, DimensionError, StateError,
                     TopologyError)
from .tensor import NEG_INF, DenseTensor, frobenius_norm, qr_split

_EYE2 = np.eye(2)


@dataclass
class Amplitude:
    """A signed scalar carried as (log |value|, sign)."""

    log_abs: float
    sign: int  # -1, 0, +1; 0 iff the value is exactly zero (log_abs = -inf)

    def value(self) -> float:
        return self.sign * math.exp(self.log_abs) if self.sign else 0.0


class TtnModel:
    """Heap-indexed binary tree of tensors with canonical-center bookkeeping."""

    def __init__(self, n_sites: int, tensors, canonical_center=None,
                 d_max=None):
        if n_sites < 4 or n_sites & (n_sites - 1):
            raise TopologyError(f"n_sites must be a power of 2 >= 4, got {n_sites}")
        self.n_sites = n_sites
        self.tensors = list(tensors)           # index 0 unused
        if len(self.tensors) != n_sites:
            raise TopologyError(
                f"expected {n_sites - 1} tensors (plus unused slot 0), got "
                f"{len(self.tensors) - 1}")
        self.canonical_center = canonical_center
        self.d_max = d_max

    # -- topology ----------------------------------------------------------

    @property
    def n_tensors(self) -> int:
        return self.n_sites - 1

    @property
    def first_leaf(self) -> int:
        return self.n_sites // 2

    def is_leaf(self, n: int) -> bool:
        return 2 * n > self.n_tensors

    def parent(self, n: int) -> int:
        return n // 2

    def neighbors(self, n: int):
        out = []
        if n > 1:
            out.append(n // 2)
        if not self.is_leaf(n):
            out.extend((2 * n, 2 * n + 1))
        return out

    def axis_toward(self, u: int, v: int) -> int:
        """The axis of tensor u on the edge to neighbor v."""
        if u == 1:
            if v == 2:
                return 0
            if v == 3:
                return 1
        else:
            if v == u // 2:
                return 0
            if v == 2 * u:
                return 1
            if v == 2 * u + 1:
                return 2
        raise TopologyError(f"{v} is not adjacent to {u}")

    def leaf_of_pixel(self, k: int):
        """(leaf node, tensor axis) holding pixel k."""
        if not 0 <= k < self.n_sites:
            raise DimensionError(f"pixel {k} out of range for {self.n_sites} sites")
        slot = self.n_sites + k
        return slot // 2, 1 + (slot % 2)

    def pixels_of_leaf(self, n: int):
        """(left pixel, right pixel) of leaf node n."""
        return 2 * n - self.n_sites, 2 * n - self.n_sites + 1

    def pixel_span(self, n: int):
        """Inclusive range of pixel positions under node n."""
        lo = hi = n
        while lo < self.first_leaf:
            lo, hi = 2 * lo, 2 * hi + 1
        return 2 * lo - self.n_sites, 2 * hi - self.n_sites + 1

    def path(self, u: int, v: int):
        """Nodes along the tree path from u to v, inclusive."""
        up_u, up_v = [u], [v]
        a, b = u, v
        while a != b:
            if a > b:
                a //= 2
                up_u.append(a)
            else:
                b //= 2
                up_v.append(b)
        return up_u[:-1] + up_v[::-1]

    def bond_dims(self) -> dict:
        """Dimension of the parent edge above each node n >= 2."""
        return {n: self.tensors[n].shape[0] for n in range(2, self.n_tensors + 1)}

    def max_bond(self) -> int:
        return max(self.bond_dims().values())

    def copy(self) -> "TtnModel":
        ts = [None] + [self.tensors[n].copy() for n in range(1, self.n_tensors + 1)]
        return TtnModel(self.n_sites, ts, self.canonical_center, self.d_max)


def bond_capacity(n_sites: int, node: int, d_max: int) -> int:
    """Bond dimension of the edge above ``node``: d_max capped by what the
    subtree can carry (2 to the number of pixels below the edge)."""
    lo = hi = node
    half = n_sites // 2
    while lo < half:
        lo, hi = 2 * lo, 2 * hi + 1
    sites_below = 2 * (hi - lo + 1)
    if sites_below >= 62:
        return d_max
    return min(d_max, 2 ** sites_below)


def build_random(n_pixels_padded: int, d_max: int, seed: int) -> TtnModel:
    """Random TTN with capacity-capped bonds, canonicalized to the root.

    Entries are i.i.d. uniform on (-1, 1) from a seeded generator, so the
    same seed always yields the identical model.
    """
    if n_pixels_padded < 4 or n_pixels_padded & (n_pixels_padded - 1):
        raise TopologyError(
            f"n_pixels_padded must be a power of 2 >= 4, got {n_pixels_padded}")
    if d_max < 1:
        raise DimensionError("d_max must be >= 1")
    n_t = n_pixels_padded - 1
    dims = {n: bond_capacity(n_pixels_padded, n, d_max) for n in range(2, n_t + 1)}
    rng = np.random.default_rng(seed)
    tensors = [None]
    for n in range(1, n_t + 1):
        if n == 1:
            shape = (dims[2], dims[3])
        elif 2 * n > n_t:
            shape = (dims[n], 2, 2)
        else:
            shape = (dims[n], dims[2 * n], dims[2 * n + 1])
        tensors.append(DenseTensor(rng.uniform(-1.0, 1.0, size=shape),
                                   validate=False))
    model = TtnModel(n_pixels_padded, tensors, canonical_center=None,
                     d_max=d_max)
    canonicalize(model, 1)
    return model


# -- canonical form ---------------------------------------------------------

def push_qr(model: TtnModel, u: int, v: int):
    """Make tensor u canonical toward neighbor v, absorbing R into v."""
    au = model.axis_toward(u, v)
    t = model.tensors[u]
    rows = [i for i in range(t.ndim) if i != au]
    res = qr_split(t, rows, [au])
    q = np.moveaxis(res.q.data, -1, au)
    model.tensors[u] = DenseTensor(np.ascontiguousarray(q), 0.0, validate=False)
    av = model.axis_toward(v, u)
    tv = model.tensors[v]
    merged = np.tensordot(res.r.data, tv.data, axes=([1], [av]))
    merged = np.moveaxis(merged, 0, av)
    model.tensors[v] = DenseTensor(
        np.ascontiguousarray(merged), tv.log_scale + res.r.log_scale,
        validate=False).rescaled()


def canonicalize(model: TtnModel, center: int) -> TtnModel:
    """Push all non-canonical weight onto ``center``; Psi is unchanged."""
    if not 1 <= center <= model.n_tensors:
        raise TopologyError(f"center {center} out of range")
    if model.canonical_center is not None:
        path = model.path(model.canonical_center, center)
        for a, b in zip(path[:-1], path[1:]):
            push_qr(model, a, b)
    else:
        # BFS from the center; push farthest nodes first so every push lands
        # on a neighbor that has not been finalized yet.
        order = [center]
        toward = {center: None}
        for node in order:
            for nb in model.neighbors(node):
                if nb not in toward:
                    toward[nb] = node
                    order.append(nb)
        for node in reversed(order[1:]):
            push_qr(model, node, toward[node])
    model.canonical_center = center
    return model


def max_canonical_deviation(model: TtnModel) -> float:
    """Largest deviation of any non-center tensor from its canonical identity."""
    if model.canonical_center is None:
        raise StateError("model has no canonical center")
    worst = 0.0
    for n in range(1, model.n_tensors + 1):
        if n == model.canonical_center:
            continue
        nxt = model.path(n, model.canonical_center)[1]
        ax = model.axis_toward(n, nxt)
        t = model.tensors[n]
        others = [i for i in range(t.ndim) if i != ax]
        g = np.tensordot(t.data, t.data, axes=(others, others))
        g = g * math.exp(2.0 * t.log_scale)
        worst = max(worst, float(np.max(np.abs(g - np.eye(g.shape[0])))))
    return worst


def partition_function(model: TtnModel) -> float:
    """log Z for a model in mixed canonical form."""
    if model.canonical_center is None:
        raise StateError("partition_function requires a canonical center; "
                         "canonicalize the model first")
    log_norm = frobenius_norm(model.tensors[model.canonical_center])
    return 2.0 * log_norm


# -- amplitudes --------------------------------------------------------------

def _rescale_rows(m, logs):
    mx = np.max(np.abs(m), axis=1)
    nz = mx > 0
    if np.any(nz):
        logs[nz] += np.log(mx[nz])
        m[nz] /= mx[nz, None]
    return m, logs


def amplitudes_from_vectors(model: TtnModel, vectors: np.ndarray):
    """Batched linear contraction of the network with per-pixel 2-vectors.

    ``vectors`` has shape (S, n_sites, 2); returns (log_abs, sign) arrays of
    shape (S,).  One-hot rows give amplitudes of pixel configurations; other
    vectors give weighted sums of amplitudes (e.g. all-ones sums Psi over all
    configurations).
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim == 2:
        vectors = vectors[np.newaxis]
    s_count = vectors.shape[0]
    if vectors.shape[1] != model.n_sites or vectors.shape[2] != 2:
        raise DimensionError(
            f"expected vectors of shape (S, {model.n_sites}, 2), got "
            f"{vectors.shape}")
    msgs = {}
    for n in range(model.n_tensors, 1, -1):
        t = model.tensors[n]
        if model.is_leaf(n):
            k1, k2 = model.pixels_of_leaf(n)
            x = np.tensordot(vectors[:, k1, :], t.data, axes=([1], [1]))
            m = np.einsum('saq,sq->sa', x, vectors[:, k2, :])
            logs = np.full(s_count, t.log_scale)
        else:
            ml, logl = msgs.pop(2 * n)
            mr, logr = msgs.pop(2 * n + 1)
            x = np.tensordot(ml, t.data, axes=([1], [1]))
            m = np.einsum('sac,sc->sa', x, mr)
            logs = logl + logr + t.log_scale
        msgs[n] = _rescale_rows(m, logs)
    t1 = model.tensors[1]
    m2, log2 = msgs[2]
    m3, log3 = msgs[3]
    val = np.einsum('sc,sc->s', m2 @ t1.data, m3)
    logs_total = log2 + log3 + t1.log_scale
    sign = np.sign(val).astype(np.int64)
    log_abs = np.full(s_count, NEG_INF)
    nz = val != 0.0
    log_abs[nz] = np.log(np.abs(val[nz])) + logs_total[nz]
    return log_abs, sign


def _one_hot(samples: np.ndarray) -> np.ndarray:
    samples = np.asarray(samples)
    if samples.ndim == 1:
        samples = samples[np.newaxis]
    return _EYE2[samples.astype(np.int64)]


def amplitude(model: TtnModel, sample) -> Amplitude:
    """Psi(x) for one pixel configuration."""
    sample = np.asarray(sample)
    if sample.shape != (model.n_sites,):
        raise DimensionError(
            f"sample has length {sample.shape}, model has {model.n_sites} sites")
    log_abs, sign = amplitudes_from_vectors(model, _one_hot(sample))
    return Amplitude(float(log_abs[0]), int(sign[0]))


def contract_pixel_vectors(model: TtnModel, vectors) -> Amplitude:
    """Linear contraction with arbitrary per-pixel 2-vectors (one row)."""
    log_abs, sign = amplitudes_from_vectors(model, np.asarray(vectors))
    return Amplitude(float(log_abs[0]), int(sign[0]))


def log_probs(model: TtnModel, samples) -> np.ndarray:
    """log p(x) for a batch of samples; -inf where the amplitude is zero."""
    log_z = partition_function(model)
    log_abs, sign = amplitudes_from_vectors(model, _one_hot(samples))
    with np.errstate(invalid="ignore"):
        return np.where(sign != 0, 2.0 * log_abs - log_z, NEG_INF)


def log_prob(model: TtnModel, sample) -> float:
    sample = np.asarray(sample)
    if sample.shape != (model.n_sites,):
        raise DimensionError(
            f"sample has length {sample.shape}, model has {model.n_sites} sites")
    return float(log_probs(model, sample[np.newaxis])[0])


def nll(model: TtnModel, dataset) -> float:
    """Mean negative log-likelihood; +inf if any sample has zero probability."""
    samples = dataset.samples if hasattr(dataset, "samples") else np.asarray(dataset)
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise ValueError("dataset must be a nonempty matrix of samples")
    if samples.shape[1] != model.n_sites:
        raise DimensionError(
            f"dataset has {samples.shape[1]} pixels, model has {model.n_sites}")
    lp = log_probs(model, samples)
    if np.any(np.isneginf(lp)):
        return float("inf")
    return float(-np.mean(lp))


# -- doubled-network contractions (marginals, correlations) ------------------

def _pixel_operators(n_sites: int, assignment) -> np.ndarray:
    """(n, 2, 2) stack: clamped pixels get |v><v|, free pixels the identity."""
    ops = np.broadcast_to(_EYE2, (n_sites, 2, 2)).copy()
    for k, v in (assignment or {}).items():
        if not 0 <= k < n_sites:
            raise ValueError(f"pixel {k} out of range")
        if v not in (0, 1):
            raise ValueError(f"pixel value must be 0 or 1, got {v}")
        ops[k] = 0.0
        ops[k, v, v] = 1.0
    return ops


def _rescale_mat(m, log):
    mx = float(np.max(np.abs(m)))
    if mx > 0:
        return m / mx, log + math.log(mx)
    return m, log


def _doubled_up(model: TtnModel, ops):
    """Bra-ket upward messages (D, D) per node for given pixel operators."""
    msgs, logs = {}, {}
    for n in range(model.n_tensors, 1, -1):
        t = model.tensors[n]
        if model.is_leaf(n):
            k1, k2 = model.pixels_of_leaf(n)
            x = np.einsum('apq,pP->aPq', t.data, ops[k1])
            x = np.einsum('aPq,qQ->aPQ', x, ops[k2])
            m = np.tensordot(x, t.data, axes=([1, 2], [1, 2]))
            log = 2.0 * t.log_scale
        else:
            x = np.tensordot(model.tensors[n].data, msgs[2 * n], axes=([1], [0]))
            x = np.tensordot(x, msgs[2 * n + 1], axes=([1], [0]))
            m = np.tensordot(x, t.data, axes=([1, 2], [1, 2]))
            log = logs[2 * n] + logs[2 * n + 1] + 2.0 * t.log_scale
        msgs[n], logs[n] = _rescale_mat(m, log)
    return msgs, logs


def _doubled_down(model: TtnModel, up, uplogs):
    """Bra-ket downward messages: environment above each node."""
    t1 = model.tensors[1]
    down, downlogs = {}, {}
    down[2], downlogs[2] = _rescale_mat(
        (t1.data @ up[3]) @ t1.data.T, uplogs[3] + 2.0 * t1.log_scale)
    down[3], downlogs[3] = _rescale_mat(
        (t1.data.T @ up[2]) @ t1.data, uplogs[2] + 2.0 * t1.log_scale)
    for n in range(2, model.n_tensors + 1):
        if model.is_leaf(n):
            continue
        t = model.tensors[n]
        x = np.tensordot(down[n], t.data, axes=([0], [0]))   # (a', b, c)
        for child, sib_axis in ((2 * n, 2), (2 * n + 1, 1)):
            sib = 2 * n + 1 if child == 2 * n else 2 * n
            y = np.tensordot(x, up[sib], axes=([sib_axis], [0]))
            # y axes: (a', kept-child-bond, sib')
            m = np.tensordot(y, t.data, axes=([0, 2], [0, sib_axis]))
            log = downlogs[n] + uplogs[sib] + 2.0 * t.log_scale
            down[child], downlogs[child] = _rescale_mat(m, log)
    return down, downlogs


def single_site_marginals(model: TtnModel, assignment=None) -> np.ndarray:
    """(n_sites, 2) conditional marginals of every pixel given ``assignment``.

    Clamped pixels get a one-hot row.  Raises if the clamped assignment has
    zero total probability mass.
    """
    assignment = dict(assignment or {})
    ops = _pixel_operators(model.n_sites, assignment)
    up, uplogs = _doubled_up(model, ops)
    down, downlogs = _doubled_down(model, up, uplogs)
    out = np.zeros((model.n_sites, 2))
    for leaf in range(model.first_leaf, model.n_sites):
        t = model.tensors[leaf]
        k1, k2 = model.pixels_of_leaf(leaf)
        env = down[leaf]
        # marginal of k1 with k2's operator inserted, and vice versa
        x = np.tensordot(env, t.data, axes=([0], [0]))          # (a', p, q)
        y2 = np.tensordot(x, ops[k2], axes=([2], [0]))          # (a', p, Q)
        m1 = np.tensordot(y2, t.data, axes=([0, 2], [0, 2]))    # (p, P)
        y1 = np.tensordot(x, ops[k1], axes=([1], [0]))          # (a', q, P)
        m2 = np.tensordot(y1, t.data, axes=([0, 2], [0, 1]))    # (q, Q)
        out[k1] = np.maximum(np.diag(m1), 0.0)
        out[k2] = np.maximum(np.diag(m2), 0.0)
    totals = out.sum(axis=1)
    if np.any(totals <= 0.0):
        raise DegenerateDistributionError(
            "clamped configuration has zero probability mass")
    out /= totals[:, None]
    for k, v in assignment.items():
        out[k] = 0.0
        out[k, v] = 1.0
    return out


def marginal(model: TtnModel, fixed, open_pixel: int):
    """(p0, p1) for ``open_pixel`` given the clamped pixels in ``fixed``."""
    fixed = dict(fixed or {})
    if open_pixel in fixed:
        raise ValueError(f"pixel {open_pixel} is already fixed")
    if not 0 <= open_pixel < model.n_sites:
        raise ValueError(f"pixel {open_pixel} out of range")
    row = single_site_marginals(model, fixed)[open_pixel]
    return float(row[0]), float(row[1])


def correlation(model: TtnModel, pixel_i: int, pixel_j: int) -> float:
    """Connected correlation <s_i s_j> - <s_i><s_j> with pixels mapped to +-1."""
    if pixel_i == pixel_j:
        raise ValueError("correlation requires two distinct pixels")
    base = single_site_marginals(model)
    spin = np.array([-1.0, 1.0])
    mean_i = float(base[pixel_i] @ spin)
    mean_j = float(base[pixel_j] @ spin)
    joint = 0.0
    for v in (0, 1):
        pv = float(base[pixel_i, v])
        if pv == 0.0:
            continue
        cond = single_site_marginals(model, {pixel_i: v})
        joint += spin[v] * pv * float(cond[pixel_j] @ spin)
    return joint - mean_i * mean_j


def correlation_map(model: TtnModel, ref_pixel: int) -> np.ndarray:
    """Connected correlations of ``ref_pixel`` with every pixel (0 at itself)."""
    base = single_site_marginals(model)
    spin = np.array([-1.0, 1.0])
    means = base @ spin
    joint = np.zeros(model.n_sites)
    for v in (0, 1):
        pv = float(base[ref_pixel, v])
        if pv == 0.0:
            continue
        cond = single_site_marginals(model, {ref_pixel: v})
        joint += spin[v] * pv * (cond @ spin)
    out = joint - means[ref_pixel] * means
    out[ref_pixel] = 1.0 - means[ref_pixel] ** 2
    return out
