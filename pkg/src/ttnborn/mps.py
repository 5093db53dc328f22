"""Matrix product state Born machine baseline.

A chain of 3-way tensors (left bond, pixel, right bond) with dimension-1
boundary bonds, trained, evaluated and sampled with the same machinery as
the tree model: exact partition function from the canonical center, sweeps
with QR pushes, two-site updates with truncated SVD, and ancestral sampling
from exact conditionals.  Kept deliberately close to the tree code so the
comparisons between the two models are like for like.
"""

from __future__ import annotations

import math
import time

import numpy as np

from .errors import (DegenerateDistributionError, DimensionError, StateError,
                     TopologyError)
from .tensor import NEG_INF, DenseTensor, frobenius_norm, qr_split
from .training import (TrainConfig, TrainStats, _fold_scale_data,
                       guarded_merge_factors, guarded_site_new_data)
from .ttn import Amplitude

_EYE2 = np.eye(2)


class MpsModel:
    """Open-boundary MPS over binary pixels with a canonical center."""

    def __init__(self, tensors, canonical_center=None, d_max=None):
        self.tensors = list(tensors)
        if len(self.tensors) < 2:
            raise TopologyError("an MPS needs at least 2 sites")
        if self.tensors[0].shape[0] != 1 or self.tensors[-1].shape[2] != 1:
            raise TopologyError("boundary bonds must have dimension 1")
        self.canonical_center = canonical_center
        self.d_max = d_max

    @property
    def n_sites(self) -> int:
        return len(self.tensors)

    def bond_dims(self) -> dict:
        return {i: self.tensors[i].shape[0] for i in range(1, self.n_sites)}

    def max_bond(self) -> int:
        return max(self.bond_dims().values())

    def copy(self) -> "MpsModel":
        return MpsModel([t.copy() for t in self.tensors],
                        self.canonical_center, self.d_max)


def mps_build_random(n_sites: int, d_max: int, seed: int) -> MpsModel:
    """Random MPS with capacity-capped bonds, canonicalized to the last site."""
    if n_sites < 2:
        raise TopologyError("n_sites must be >= 2")
    if d_max < 1:
        raise DimensionError("d_max must be >= 1")
    dims = [1]
    for i in range(n_sites - 1):
        left_sites = min(i + 1, 62)
        right_sites = min(n_sites - 1 - i, 62)
        dims.append(min(d_max, 2 ** left_sites, 2 ** right_sites))
    dims.append(1)
    rng = np.random.default_rng(seed)
    tensors = [DenseTensor(rng.uniform(-1.0, 1.0, size=(dims[i], 2, dims[i + 1])),
                           validate=False)
               for i in range(n_sites)]
    model = MpsModel(tensors, canonical_center=None, d_max=d_max)
    mps_canonicalize(model, n_sites - 1)
    return model


def _push(model: MpsModel, i: int, j: int):
    """QR-push the non-canonical part from site i to adjacent site j."""
    t = model.tensors[i]
    if j == i + 1:
        res = qr_split(t, [0, 1], [2])
        model.tensors[i] = res.q
        tj = model.tensors[j]
        merged = np.tensordot(res.r.data, tj.data, axes=([1], [0]))
        model.tensors[j] = DenseTensor(
            merged, tj.log_scale + res.r.log_scale, validate=False).rescaled()
    elif j == i - 1:
        res = qr_split(t, [1, 2], [0])
        model.tensors[i] = DenseTensor(
            np.ascontiguousarray(np.moveaxis(res.q.data, -1, 0)), 0.0,
            validate=False)
        tj = model.tensors[j]
        merged = np.tensordot(tj.data, res.r.data, axes=([2], [1]))
        model.tensors[j] = DenseTensor(
            merged, tj.log_scale + res.r.log_scale, validate=False).rescaled()
    else:
        raise TopologyError(f"sites {i} and {j} are not adjacent")


def mps_canonicalize(model: MpsModel, center: int) -> MpsModel:
    if not 0 <= center < model.n_sites:
        raise TopologyError(f"center {center} out of range")
    if model.canonical_center is None:
        for i in range(center):
            _push(model, i, i + 1)
        for i in range(model.n_sites - 1, center, -1):
            _push(model, i, i - 1)
    else:
        c = model.canonical_center
        step = 1 if center > c else -1
        for i in range(c, center, step):
            _push(model, i, i + step)
    model.canonical_center = center
    return model


def mps_max_canonical_deviation(model: MpsModel) -> float:
    if model.canonical_center is None:
        raise StateError("model has no canonical center")
    worst = 0.0
    for i, t in enumerate(model.tensors):
        if i == model.canonical_center:
            continue
        axes = ([0, 1], [0, 1]) if i < model.canonical_center else ([1, 2], [1, 2])
        g = np.tensordot(t.data, t.data, axes=axes) * math.exp(2 * t.log_scale)
        worst = max(worst, float(np.max(np.abs(g - np.eye(g.shape[0])))))
    return worst


def mps_partition_function(model: MpsModel) -> float:
    if model.canonical_center is None:
        raise StateError("partition function requires a canonical center")
    return 2.0 * frobenius_norm(model.tensors[model.canonical_center])


def mps_amplitudes(model: MpsModel, samples) -> tuple:
    """(log|Psi|, sign) arrays for a batch of pixel configurations."""
    samples = np.asarray(samples, dtype=np.int64)
    if samples.ndim == 1:
        samples = samples[np.newaxis]
    if samples.shape[1] != model.n_sites:
        raise DimensionError(
            f"samples have {samples.shape[1]} pixels, model has {model.n_sites}")
    s_count = samples.shape[0]
    vec = np.ones((s_count, 1))
    logs = np.zeros(s_count)
    for i, t in enumerate(model.tensors):
        slab = t.data[:, samples[:, i], :]            # (l, S, r)
        vec = np.einsum('sl,lsr->sr', vec, slab)
        logs += t.log_scale
        mx = np.max(np.abs(vec), axis=1)
        nz = mx > 0
        if np.any(nz):
            logs[nz] += np.log(mx[nz])
            vec[nz] /= mx[nz, None]
    val = vec[:, 0]
    sign = np.sign(val).astype(np.int64)
    log_abs = np.full(s_count, NEG_INF)
    nz = val != 0
    log_abs[nz] = np.log(np.abs(val[nz])) + logs[nz]
    return log_abs, sign


def mps_amplitude(model: MpsModel, sample) -> Amplitude:
    log_abs, sign = mps_amplitudes(model, sample)
    return Amplitude(float(log_abs[0]), int(sign[0]))


def mps_log_probs(model: MpsModel, samples) -> np.ndarray:
    log_z = mps_partition_function(model)
    log_abs, sign = mps_amplitudes(model, samples)
    with np.errstate(invalid="ignore"):
        return np.where(sign != 0, 2.0 * log_abs - log_z, NEG_INF)


def mps_log_prob(model: MpsModel, sample) -> float:
    return float(mps_log_probs(model, np.asarray(sample)[np.newaxis])[0])


def mps_nll(model: MpsModel, dataset) -> float:
    samples = dataset.samples if hasattr(dataset, "samples") else np.asarray(dataset)
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise ValueError("dataset must be a nonempty matrix of samples")
    lp = mps_log_probs(model, samples)
    if np.any(np.isneginf(lp)):
        return float("inf")
    return float(-np.mean(lp))


# -- marginals and correlations (doubled chain contractions) ------------------

def _pixel_ops(n, assignment):
    ops = np.broadcast_to(_EYE2, (n, 2, 2)).copy()
    for k, v in (assignment or {}).items():
        ops[k] = 0.0
        ops[k, v, v] = 1.0
    return ops


def _doubled_edge(t, op, mat, from_left):
    """Transfer the doubled boundary matrix through one site."""
    if from_left:
        x = np.tensordot(mat, t.data, axes=([0], [0]))         # (b, p, r)
        x = np.einsum('bpr,pq->bqr', x, op)
        out = np.tensordot(x, t.data, axes=([0, 1], [0, 1]))   # (r, r')
    else:
        x = np.tensordot(t.data, mat, axes=([2], [0]))         # (l, p, r')
        x = np.einsum('lpr,pq->lqr', x, op)
        out = np.tensordot(x, t.data, axes=([1, 2], [1, 2]))   # (l, l')
    m = float(np.max(np.abs(out)))
    return out / m if m > 0 else out


def mps_single_site_marginals(model: MpsModel, assignment=None) -> np.ndarray:
    assignment = dict(assignment or {})
    n = model.n_sites
    ops = _pixel_ops(n, assignment)
    lefts = [np.ones((1, 1))]
    for i in range(n - 1):
        lefts.append(_doubled_edge(model.tensors[i], ops[i], lefts[-1], True))
    rights = [np.ones((1, 1))]
    for i in range(n - 1, 0, -1):
        rights.append(_doubled_edge(model.tensors[i], ops[i], rights[-1], False))
    rights = rights[::-1]
    out = np.zeros((n, 2))
    for i in range(n):
        t = model.tensors[i].data
        x = np.tensordot(lefts[i], t, axes=([0], [0]))         # (b, p, r)
        y = np.tensordot(x, rights[i], axes=([2], [0]))        # (b, p, r')
        m = np.tensordot(y, t, axes=([0, 2], [0, 2]))          # (p, p')
        out[i] = np.maximum(np.diag(m), 0.0)
    totals = out.sum(axis=1)
    if np.any(totals <= 0.0):
        raise DegenerateDistributionError(
            "clamped configuration has zero probability mass")
    out /= totals[:, None]
    for k, v in assignment.items():
        out[k] = 0.0
        out[k, v] = 1.0
    return out


def mps_marginal(model: MpsModel, fixed, open_pixel: int):
    fixed = dict(fixed or {})
    if open_pixel in fixed:
        raise ValueError(f"pixel {open_pixel} is already fixed")
    row = mps_single_site_marginals(model, fixed)[open_pixel]
    return float(row[0]), float(row[1])


def mps_correlation(model: MpsModel, pixel_i: int, pixel_j: int) -> float:
    if pixel_i == pixel_j:
        raise ValueError("correlation requires two distinct pixels")
    spin = np.array([-1.0, 1.0])
    base = mps_single_site_marginals(model)
    mean_i = float(base[pixel_i] @ spin)
    mean_j = float(base[pixel_j] @ spin)
    joint = 0.0
    for v in (0, 1):
        pv = float(base[pixel_i, v])
        if pv == 0.0:
            continue
        cond = mps_single_site_marginals(model, {pixel_i: v})
        joint += spin[v] * pv * float(cond[pixel_j] @ spin)
    return joint - mean_i * mean_j


def mps_correlation_map(model: MpsModel, ref_pixel: int) -> np.ndarray:
    """Connected correlations of ``ref_pixel`` with every pixel."""
    spin = np.array([-1.0, 1.0])
    base = mps_single_site_marginals(model)
    means = base @ spin
    joint = np.zeros(model.n_sites)
    for v in (0, 1):
        pv = float(base[ref_pixel, v])
        if pv == 0.0:
            continue
        cond = mps_single_site_marginals(model, {ref_pixel: v})
        joint += spin[v] * pv * (cond @ spin)
    out = joint - means[ref_pixel] * means
    out[ref_pixel] = 1.0 - means[ref_pixel] ** 2
    return out


# -- training ------------------------------------------------------------------

class _ChainCache:
    """Clamped environments left and right of the moving center."""

    def __init__(self, model: MpsModel, samples: np.ndarray, center: int):
        self.model = model
        self.samples = np.asarray(samples, dtype=np.int64)
        self.lefts = {0: np.ones((self.samples.shape[0], 1))}
        self.rights = {model.n_sites - 1: np.ones((self.samples.shape[0], 1))}
        for i in range(center):
            self.refresh_left(i + 1)
        for i in range(model.n_sites - 1, center, -1):
            self.refresh_right(i - 1)

    def _rescale(self, m):
        mx = np.max(np.abs(m), axis=1)
        nz = mx > 0
        if np.any(nz):
            m[nz] /= mx[nz, None]
        return m

    def refresh_left(self, i: int):
        """Environment of sites < i (depends on site i-1 and lefts[i-1])."""
        t = self.model.tensors[i - 1].data
        slab = t[:, self.samples[:, i - 1], :]
        self.lefts[i] = self._rescale(np.einsum('sl,lsr->sr',
                                                self.lefts[i - 1], slab))

    def refresh_right(self, i: int):
        t = self.model.tensors[i + 1].data
        slab = t[:, self.samples[:, i + 1], :]
        self.rights[i] = self._rescale(np.einsum('lsr,sr->sl', slab,
                                                 self.rights[i + 1]))

    def onehot(self, i: int):
        return _EYE2[self.samples[:, i]]

    def site_parts(self, i: int):
        return [(self.lefts[i], None), (self.onehot(i), None),
                (self.rights[i], None)]


def _mps_site_step(model, cache, i, cfg, stats):
    _fold_scale_data(model.tensors, i)
    parts = cache.site_parts(i)
    new = guarded_site_new_data(model.tensors[i].data, parts, cfg, stats)
    model.tensors[i] = DenseTensor(new, 0.0, validate=False)


def _mps_merge_step(model, cache, i, j, cfg, stats, center_to):
    """Two-site update across the (i, j) bond; center lands on center_to."""
    _fold_scale_data(model.tensors, i)
    _fold_scale_data(model.tensors, j)
    left, right = (i, j) if j == i + 1 else (j, i)
    tl, tr = model.tensors[left], model.tensors[right]
    dl = tl.shape[0]
    dr = tr.shape[2]
    lmat = tl.data.reshape(dl * 2, -1)            # (left env x pixel, bond)
    rmat = tr.data.reshape(-1, 2 * dr)            # (bond, pixel x right env)
    ul = (cache.lefts[left][:, :, None] * cache.onehot(left)[:, None, :])
    ul = ul.reshape(ul.shape[0], -1)
    vr = (cache.onehot(right)[:, :, None] * cache.rights[right][:, None, :])
    vr = vr.reshape(vr.shape[0], -1)
    l_new, r_new, err = guarded_merge_factors(
        lmat, rmat, ul, vr, cfg, stats, center_on_j=(center_to == right))
    stats.truncation_errors[-1].append(err)
    rank = l_new.shape[1]
    model.tensors[left] = DenseTensor(l_new.reshape(dl, 2, rank), 0.0,
                                      validate=False)
    model.tensors[right] = DenseTensor(r_new.reshape(rank, 2, dr), 0.0,
                                       validate=False)
    model.canonical_center = center_to
    if center_to == right:
        cache.refresh_left(right)
    else:
        cache.refresh_right(left)


def mps_sweep_epoch(model: MpsModel, dataset, config: TrainConfig, *,
                    cache=None, stats=None, on_step=None):
    """Right-to-left then left-to-right pass, every site updated once each."""
    samples = dataset.samples if hasattr(dataset, "samples") else np.asarray(dataset)
    samples = samples.astype(np.int64)
    if samples.shape[1] != model.n_sites:
        raise DimensionError(
            f"dataset has {samples.shape[1]} pixels, model has {model.n_sites}")
    last = model.n_sites - 1
    if model.canonical_center != last:
        mps_canonicalize(model, last)
    if config.renormalize_center:
        # Normalize instead of folding: the center's log_scale can be far
        # beyond float range right after canonicalization.
        t = model.tensors[last]
        nrm = np.linalg.norm(t.data.ravel())
        if nrm > 0:
            model.tensors[last] = DenseTensor(t.data / nrm, 0.0, validate=False)
    else:
        _fold_scale_data(model.tensors, last)
    if stats is None:
        stats = TrainStats()
    if cache is None:
        cache = _ChainCache(model, samples, last)
    stats.truncation_errors.append([])
    started = time.perf_counter()
    for direction in (-1, +1):
        sites = range(last, 0, -1) if direction < 0 else range(0, last)
        endpoint = 0 if direction < 0 else last
        for i in sites:
            if config.scheme == "one-site":
                _mps_site_step(model, cache, i, config, stats)
                _push(model, i, i + direction)
                model.canonical_center = i + direction
                if direction < 0:
                    cache.refresh_right(i - 1)
                else:
                    cache.refresh_left(i + 1)
            else:
                _mps_merge_step(model, cache, i, i + direction, config, stats,
                                center_to=i + direction)
            if on_step is not None:
                on_step(model, (i, i + direction, True))
        # the endpoint tensor still owes its update for this pass
        if config.scheme == "one-site":
            _mps_site_step(model, cache, endpoint, config, stats)
        else:
            _mps_merge_step(model, cache, endpoint, endpoint - direction,
                            config, stats, center_to=endpoint)
        if on_step is not None:
            on_step(model, (endpoint, None, True))
    stats.nll.append(mps_nll(model, samples))
    stats.seconds.append(time.perf_counter() - started)
    stats.max_bond.append(model.max_bond())
    stats.final_bond_dims = {str(k): int(v) for k, v in model.bond_dims().items()}
    return model, stats


def mps_train(dataset, config: TrainConfig, *, model: MpsModel = None,
              on_epoch=None):
    """Train an MPS Born machine; builds a fresh random model unless given one."""
    samples = dataset.samples if hasattr(dataset, "samples") else np.asarray(dataset)
    samples = samples.astype(np.int64)
    if model is None:
        model = mps_build_random(samples.shape[1], config.d_max, config.seed)
    stats = TrainStats()
    mps_canonicalize(model, model.n_sites - 1)
    rng = np.random.default_rng(config.seed)
    batch_size = config.batch_size
    if batch_size in (None, "full") or int(batch_size) >= samples.shape[0]:
        batch_size = None
    cache = None
    for epoch in range(config.epochs):
        if batch_size is None:
            batch = samples
        else:
            idx = np.sort(rng.choice(samples.shape[0], size=int(batch_size),
                                     replace=False))
            batch = samples[idx]
            cache = None
        t0 = time.perf_counter()
        if cache is None:
            cache = _ChainCache(model, batch, model.n_sites - 1)
        _, stats = mps_sweep_epoch(model, batch, config, cache=cache,
                                   stats=stats)
        stats.seconds[-1] = time.perf_counter() - t0
        if batch_size is not None:
            stats.nll[-1] = mps_nll(model, samples)
            cache = None
        if on_epoch is not None:
            on_epoch(model, epoch, stats)
    return model, stats


# -- sampling -------------------------------------------------------------------

def mps_sample_batch(model: MpsModel, count: int, seed: int, *,
                     ordering=None, return_chain_log: bool = False):
    """Ancestral sampling left to right from exact conditionals."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if model.canonical_center is None:
        raise StateError("sampling requires a canonicalized model")
    work = model.copy()
    if work.canonical_center != 0:
        mps_canonicalize(work, 0)
    n = work.n_sites
    uniforms = np.random.default_rng(seed).random((count, n))
    samples = np.zeros((count, n), dtype=np.uint8)
    chain_log = np.zeros(count)
    vec = np.ones((count, 1))
    for i in range(n):
        t = work.tensors[i].data
        a0 = vec @ t[:, 0, :]
        a1 = vec @ t[:, 1, :]
        p0 = np.sum(a0 * a0, axis=1)
        p1 = np.sum(a1 * a1, axis=1)
        total = p0 + p1
        if np.any(total <= 0.0):
            raise DegenerateDistributionError(f"zero conditional mass at site {i}")
        prob1 = p1 / total
        draw = (uniforms[:, i] < prob1).astype(np.uint8)
        samples[:, i] = draw
        chain_log += np.log(np.where(draw == 1, prob1, 1.0 - prob1))
        vec = np.where(draw[:, None] == 1, a1, a0)
        mx = np.max(np.abs(vec), axis=1)
        nz = mx > 0
        vec[nz] /= mx[nz, None]
    if ordering is not None:
        from .data import invert_ordering
        samples = invert_ordering(samples, ordering)
    if return_chain_log:
        return samples, chain_log
    return samples


def mps_sample_one(model: MpsModel, seed: int, *, ordering=None):
    return mps_sample_batch(model, 1, seed, ordering=ordering)[0]
