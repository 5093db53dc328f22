"""The TTNBORN1 checkpoint container.

Layout: 8-byte magic ``TTNBORN1``, a little-endian u64 byte length followed
by a UTF-8 JSON header, then each tensor as a little-endian u64 byte length
followed by row-major little-endian float64 data.  The header carries
model_type (ttn | mps | treefg), n_sites, d_max, per-edge bond dimensions,
tensor shapes in storage order, the ordering descriptor, seed and epoch.

Log scales are folded into the written data: scales are first moved onto
the canonical center (which changes no represented value), so canonical
models always serialize to finite floats.  Field order is fixed, making
identical models byte-identical on disk.
"""

from __future__ import annotations

import json
import math
import struct

import numpy as np

from .errors import FormatError, NumericalError
from .data import OrderingDescriptor
from .tensor import DenseTensor
from .ttn import TtnModel
from .mps import MpsModel
from .factor_graph import TreeFactorGraph

MAGIC = b"TTNBORN1"


def _fold_arrays(tensors, center_idx):
    """Fold every tensor's log_scale into its data, exactly when possible.

    The canonical center's scale is pure gauge (probabilities do not depend
    on it), so when folding it would leave float range it is dropped instead;
    any other tensor with an unfoldable scale is an error.
    """
    out = []
    for i, t in enumerate(tensors):
        if t is None:
            out.append(None)
            continue
        if t.log_scale == 0.0:
            out.append(t.data)
            continue
        if abs(t.log_scale) < 690.0:
            data = t.data * math.exp(t.log_scale)
            if np.all(np.isfinite(data)):
                out.append(data)
                continue
        if i == center_idx:
            out.append(t.data)
        else:
            raise NumericalError(
                f"tensor {i}: log_scale {t.log_scale:.3g} cannot be folded "
                "for writing")
    return out


def _tensor_list(model):
    if isinstance(model, TtnModel):
        center = model.canonical_center if model.canonical_center else 1
        arrays = _fold_arrays(model.tensors, center)
        return arrays[1:], "ttn"
    if isinstance(model, MpsModel):
        center = model.canonical_center if model.canonical_center is not None else 0
        return _fold_arrays(model.tensors, center), "mps"
    if isinstance(model, TreeFactorGraph):
        return list(model.factors), "treefg"
    raise TypeError(f"cannot checkpoint {type(model).__name__}")


def save_checkpoint(path, model, *, ordering: OrderingDescriptor = None,
                    seed=None, epoch=None):
    """Write a model; returns the header dict actually stored."""
    arrays, model_type = _tensor_list(model)
    header = {"format": "ttnborn-checkpoint-v1", "model_type": model_type}
    if model_type == "ttn":
        header["n_sites"] = model.n_sites
        header["d_max"] = model.d_max
        header["bond_dims"] = {str(k): int(v) for k, v in model.bond_dims().items()}
        header["canonical_center"] = model.canonical_center
    elif model_type == "mps":
        header["n_sites"] = model.n_sites
        header["d_max"] = model.d_max
        header["bond_dims"] = {str(k): int(v) for k, v in model.bond_dims().items()}
        header["canonical_center"] = model.canonical_center
    else:
        header["n_sites"] = len(model.visible)
        header["d_max"] = None
        header["bond_dims"] = {}
        header["n_vars"] = model.n_vars
        header["edges"] = [list(e) for e in model.edges]
        header["visible"] = list(model.visible)
    header["tensor_shapes"] = [list(a.shape) for a in arrays]
    header["ordering"] = ordering.to_json_dict() if ordering is not None else None
    header["seed"] = seed
    header["epoch"] = epoch
    blob = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for a in arrays:
            raw = np.ascontiguousarray(a, dtype="<f8").tobytes()
            f.write(struct.pack("<Q", len(raw)))
            f.write(raw)
    return header


def load_checkpoint(path):
    """Read a checkpoint; returns (model, header).

    The ordering descriptor, when present, is reconstructed and attached to
    the header under the key "ordering_descriptor".
    """
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        arrays = []
        for shape in header["tensor_shapes"]:
            (blen,) = struct.unpack("<Q", f.read(8))
            raw = f.read(blen)
            if len(raw) != blen:
                raise FormatError(f"{path}: truncated tensor data")
            arrays.append(np.frombuffer(raw, dtype="<f8").reshape(shape).copy())
    model_type = header["model_type"]
    if model_type == "ttn":
        tensors = [None] + [DenseTensor(a, validate=False) for a in arrays]
        model = TtnModel(header["n_sites"], tensors,
                         canonical_center=header.get("canonical_center"),
                         d_max=header.get("d_max"))
    elif model_type == "mps":
        model = MpsModel([DenseTensor(a, validate=False) for a in arrays],
                         canonical_center=header.get("canonical_center"),
                         d_max=header.get("d_max"))
    elif model_type == "treefg":
        model = TreeFactorGraph(header["n_vars"],
                                [tuple(e) for e in header["edges"]],
                                arrays, header["visible"])
    else:
        raise FormatError(f"{path}: unknown model_type {model_type!r}")
    if header.get("ordering"):
        header["ordering_descriptor"] = OrderingDescriptor.from_json_dict(
            header["ordering"])
    return model, header
