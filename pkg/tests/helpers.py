"""Shared test oracles, kept independent of the library's evaluation paths."""

import itertools
import math

import numpy as np

from ttnborn import DenseTensor, MpsModel, TtnModel


def all_configs(n):
    return np.array(list(itertools.product([0, 1], repeat=n)), dtype=np.int64)


def brute_force_amplitudes(model: TtnModel) -> np.ndarray:
    """Full 2^n amplitude table by whole-subtree contraction.

    Builds the complete state vector of every subtree instead of clamping
    samples, so it exercises none of the library's message passing.  Index
    order puts pixel 0 in the most significant bit, matching all_configs.
    """
    tables = {}
    log_total = 0.0
    for n in range(model.n_tensors, 1, -1):
        t = model.tensors[n]
        log_total += t.log_scale
        if model.is_leaf(n):
            tables[n] = t.data.reshape(t.shape[0], 4)
        else:
            left = tables.pop(2 * n)
            right = tables.pop(2 * n + 1)
            full = np.einsum('abc,bl,cr->alr', t.data, left, right)
            tables[n] = full.reshape(t.shape[0], -1)
    t1 = model.tensors[1]
    log_total += t1.log_scale
    vec = np.einsum('bc,bl,cr->lr', t1.data, tables[2], tables[3]).ravel()
    return vec * math.exp(log_total)


def mps_state_vector(model: MpsModel) -> np.ndarray:
    """Full 2^n amplitude table of an MPS, pixel 0 most significant."""
    acc = np.ones((1, 1))          # (config block, right bond)
    log_total = 0.0
    for t in model.tensors:
        log_total += t.log_scale
        acc = np.einsum('xl,lpr->xpr', acc, t.data)
        acc = acc.reshape(-1, acc.shape[-1])
    return acc.ravel() * math.exp(log_total)


def ttn_from_patterns(patterns) -> TtnModel:
    """TTN whose amplitude is 1 on each (distinct) pattern and 0 elsewhere."""
    patterns = np.asarray(patterns, dtype=np.int64)
    count, n_sites = patterns.shape
    tensors = [None]
    for node in range(1, n_sites):
        if node == 1:
            data = np.eye(count)
        elif 2 * node > n_sites - 1:
            k = 2 * node - n_sites
            data = np.zeros((count, 2, 2))
            for a in range(count):
                data[a, patterns[a, k], patterns[a, k + 1]] = 1.0
        else:
            data = np.zeros((count, count, count))
            for a in range(count):
                data[a, a, a] = 1.0
        tensors.append(DenseTensor(data, validate=False))
    return TtnModel(n_sites, tensors, canonical_center=None, d_max=count)


def mps_from_patterns(patterns) -> MpsModel:
    patterns = np.asarray(patterns, dtype=np.int64)
    count, n_sites = patterns.shape
    tensors = []
    for i in range(n_sites):
        dl = 1 if i == 0 else count
        dr = 1 if i == n_sites - 1 else count
        data = np.zeros((dl, 2, dr))
        for a in range(count):
            data[min(a, dl - 1), patterns[a, i], min(a, dr - 1)] = 1.0
        tensors.append(DenseTensor(data, validate=False))
    return MpsModel(tensors, canonical_center=None, d_max=count)


def uniform_ttn(n_sites) -> TtnModel:
    """Product model with equal amplitude on every configuration."""
    tensors = [None, DenseTensor(np.ones((1, 1)))]
    for node in range(2, n_sites):
        if 2 * node > n_sites - 1:
            tensors.append(DenseTensor(np.full((1, 2, 2), 0.5)))
        else:
            tensors.append(DenseTensor(np.ones((1, 1, 1))))
    return TtnModel(n_sites, tensors, canonical_center=None, d_max=1)


def enum_log_z(model: TtnModel) -> float:
    amps = brute_force_amplitudes(model)
    return float(np.log(np.sum(amps * amps)))


def chi_square_pvalue(counts, probs):
    from scipy.stats import chi2
    counts = np.asarray(counts, dtype=np.float64)
    expected = probs * counts.sum()
    mask = expected > 0
    stat = float(np.sum((counts[mask] - expected[mask]) ** 2 / expected[mask]))
    dof = int(mask.sum()) - 1
    return chi2.sf(stat, dof)


def config_indices(samples):
    n = samples.shape[1]
    return samples.astype(np.int64) @ (1 << np.arange(n - 1, -1, -1))
