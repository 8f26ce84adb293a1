"""Data formats, chain persistence, checkpoints and run manifests.

Tensor files (``SOFT1``) hold ``n`` record tensors::

    b"SOFT1" | endianness b"<" | symmetry tag (u8) | K (u32) | dims (K × u64) | n (u64)
    payload: n · ∏dims little-endian float64 values in C order

The CSV alternative has a ``dims=p1xp2x...`` header line followed by one
flattened record per line.

Chains and checkpoints share one container: an 8-byte magic, a u32 header
length, a sorted-key JSON header (array table, metadata, SHA-256 of the
payload) and the raw little-endian arrays.  Files carry no timestamps, so
writing the same object twice gives identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from .model import ChainSamples, Dataset, ParameterState, SofterConfig
from .tensor import ShapeError, multi_index

__all__ = [
    "FORMAT_VERSION",
    "DataError",
    "ChecksumError",
    "VersionError",
    "write_tensor_file",
    "read_tensor_file",
    "write_tensor_csv",
    "read_tensor_csv",
    "read_tensors",
    "load_dataset",
    "apply_transform",
    "dataset_checksum",
    "file_checksum",
    "save_chain",
    "load_chain",
    "save_checkpoint",
    "load_checkpoint",
    "write_manifest",
    "read_manifest",
]

FORMAT_VERSION = 1
TENSOR_MAGIC = b"SOFT1"
CHAIN_MAGIC = b"SOFTCHN1"
CHECKPOINT_MAGIC = b"SOFTCKP1"
SYMMETRY_TAGS = {"none": 0, "symmetric": 1, "semi-symmetric": 2}


class DataError(ValueError):
    """Input data cannot be parsed or fails validation."""


class ChecksumError(ValueError):
    """Stored checksum or manifest does not match the content."""


class VersionError(ValueError):
    """File written by an incompatible format version."""


# --- tensor data files ----------------------------------------------------

def write_tensor_file(path, tensors: np.ndarray, symmetry: str = "none") -> None:
    arr = np.ascontiguousarray(tensors, dtype="<f8")
    if arr.ndim < 2:
        raise ShapeError("expected an (n, p_1, ..., p_K) array")
    n, dims = arr.shape[0], arr.shape[1:]
    head = TENSOR_MAGIC + b"<" + struct.pack("<BI", SYMMETRY_TAGS[symmetry], len(dims))
    head += struct.pack(f"<{len(dims)}QQ", *dims, n)
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(arr.tobytes())


def read_tensor_file(path) -> tuple[np.ndarray, str]:
    """Return ``(tensors, symmetry)`` from a binary tensor file."""
    raw = Path(path).read_bytes()
    if raw[:5] != TENSOR_MAGIC:
        raise DataError(f"{path}: not a SOFT1 tensor file")
    if raw[5:6] != b"<":
        raise DataError(f"{path}: unsupported endianness tag {raw[5:6]!r}")
    sym_tag, K = struct.unpack_from("<BI", raw, 6)
    off = 11
    dims = struct.unpack_from(f"<{K}Q", raw, off)
    off += 8 * K
    (n,) = struct.unpack_from("<Q", raw, off)
    off += 8
    count = n * int(np.prod(dims))
    if len(raw) - off != 8 * count:
        raise DataError(f"{path}: payload has {len(raw) - off} bytes, expected {8 * count}")
    arr = np.frombuffer(raw, dtype="<f8", offset=off, count=count).astype(np.float64).reshape(n, *dims)
    symmetry = {v: k for k, v in SYMMETRY_TAGS.items()}.get(sym_tag)
    if symmetry is None:
        raise DataError(f"{path}: unknown symmetry tag {sym_tag}")
    return arr, symmetry


def write_tensor_csv(path, tensors: np.ndarray) -> None:
    arr = np.asarray(tensors, dtype=np.float64)
    dims = arr.shape[1:]
    with open(path, "w", newline="") as fh:
        fh.write("dims=" + "x".join(str(p) for p in dims) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        for rec in arr.reshape(arr.shape[0], int(np.prod(arr.shape[1:]))):
            writer.writerow([repr(float(v)) for v in rec])


def read_tensor_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        header = fh.readline().strip()
        if not header.startswith("dims="):
            raise DataError(f"{path}: first line must be 'dims=p1xp2x...'")
        try:
            dims = tuple(int(p) for p in header[5:].split("x"))
        except ValueError as exc:
            raise DataError(f"{path}: bad dims header {header!r}") from exc
        size = int(np.prod(dims))
        rows = []
        for i, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            if len(row) != size:
                raise DataError(f"{path}: record {i + 1} has {len(row)} values, dims need {size}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise DataError(f"{path}: record {i + 1}: {exc}") from exc
    return np.array(rows, dtype=np.float64).reshape(len(rows), *dims)


def read_tensors(path) -> np.ndarray:
    """Read tensors from either encoding (detected by the magic bytes)."""
    with open(path, "rb") as fh:
        magic = fh.read(5)
    if magic == TENSOR_MAGIC:
        return read_tensor_file(path)[0]
    return read_tensor_csv(path)


def _read_table(path) -> np.ndarray:
    """Numeric CSV with an optional header row."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if rows:
        try:
            [float(v) for v in rows[0]]
        except ValueError:
            rows = rows[1:]
    try:
        return np.array([[float(v) for v in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


def _check_finite(arr: np.ndarray, what: str) -> None:
    bad = np.argwhere(~np.isfinite(arr))
    if bad.size:
        first = bad[0]
        if arr.ndim > 2:
            where = f"record {first[0] + 1}, entry {multi_index(arr.shape[1:], int(np.ravel_multi_index(first[1:], arr.shape[1:])))}"
        else:
            where = f"row {first[0] + 1}" + (f", column {first[1] + 1}" if arr.ndim == 2 else "")
        raise DataError(f"non-finite value in {what} at {where}")


def load_dataset(outcomes, tensors, covariates=None, standardize: bool = False,
                 symmetry: str = "none", sym_tol: float = 0.0) -> tuple[Dataset, dict | None]:
    """Load and validate a dataset; optionally standardize it.

    Returns the dataset and the applied transform (``None`` without
    standardization), which :func:`apply_transform` reuses for new data.
    ``outcomes=None`` gives zero outcomes (prediction inputs).
    """
    X = read_tensors(tensors)
    y = _read_table(outcomes).reshape(-1) if outcomes is not None else np.zeros(X.shape[0])
    C = _read_table(covariates) if covariates is not None else None
    _check_finite(y, "outcomes")
    _check_finite(X, "tensors")
    if C is not None:
        _check_finite(C, "covariates")
    if X.shape[0] != y.shape[0]:
        raise ShapeError(f"{X.shape[0]} tensors for {y.shape[0]} outcomes")
    if C is not None and C.shape[0] != y.shape[0]:
        raise ShapeError(f"{C.shape[0]} covariate rows for {y.shape[0]} outcomes")
    ds = Dataset(y, X, C)
    if symmetry != "none":
        from .symmetric import ingest_symmetric

        ds = ingest_symmetric(ds, symmetry, sym_tol)
    transform = None
    if standardize:
        transform = {
            "y_mean": float(ds.y.mean()), "y_sd": float(ds.y.std()) or 1.0,
            "cov_mean": ds.covariates.mean(axis=0).tolist(),
            "cov_sd": [float(s) or 1.0 for s in ds.covariates.std(axis=0)],
            "x_scale": float(ds.predictors.std()) or 1.0,
        }
        ds = apply_transform(ds, transform)
    return ds, transform


def apply_transform(ds: Dataset, transform: dict | None, outcomes: bool = True) -> Dataset:
    if not transform:
        return ds
    y = (ds.y - transform["y_mean"]) / transform["y_sd"] if outcomes else ds.y
    C = (ds.covariates - np.array(transform["cov_mean"])) / np.array(transform["cov_sd"]) if ds.p else ds.covariates
    return Dataset(y, ds.predictors / transform["x_scale"], C)


def dataset_checksum(ds: Dataset) -> str:
    h = hashlib.sha256()
    for arr in (ds.y, ds.covariates, ds.predictors):
        h.update(str(arr.shape).encode())
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()


def file_checksum(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --- binary container -----------------------------------------------------

def _write_container(path, magic: bytes, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    table, chunks, offset = [], [], 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        data = arr.tobytes()
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    payload = b"".join(chunks)
    header = {"version": FORMAT_VERSION, "meta": meta, "arrays": table,
              "sha256": hashlib.sha256(payload).hexdigest()}
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(magic + struct.pack("<I", len(hbytes)) + hbytes + payload)
    os.replace(tmp, path)


def _read_container(path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:len(magic)] != magic:
        raise DataError(f"{path}: unexpected file type")
    (hlen,) = struct.unpack_from("<I", raw, len(magic))
    start = len(magic) + 4
    try:
        header = json.loads(raw[start:start + hlen])
    except ValueError as exc:
        raise ChecksumError(f"{path}: corrupted header") from exc
    if header.get("version") != FORMAT_VERSION:
        raise VersionError(f"{path}: format version {header.get('version')}, expected {FORMAT_VERSION}")
    payload = raw[start + hlen:]
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise ChecksumError(f"{path}: payload checksum mismatch")
    arrays = {}
    for entry in header["arrays"]:
        arr = np.frombuffer(payload, dtype="<f8", count=entry["nbytes"] // 8, offset=entry["offset"])
        arrays[entry["name"]] = arr.astype(np.float64).reshape(entry["shape"])
    return header["meta"], arrays


def save_chain(samples: ChainSamples, path) -> None:
    meta = samples.meta()
    meta["dims"] = list(samples.dims)
    _write_container(path, CHAIN_MAGIC, meta, samples.arrays())


def load_chain(path) -> ChainSamples:
    meta, arrs = _read_container(path, CHAIN_MAGIC)
    return ChainSamples(
        mu=arrs["mu"], delta=arrs["delta"], tau2=arrs["tau2"], B=arrs["B"], sigma2=arrs["sigma2"],
        zeta=arrs["zeta"], xi=arrs.get("xi"), config_hash=meta["config_hash"], seed=meta["seed"],
        chain=meta["chain"], iterations=meta["iterations"], burn_in=meta["burn_in"], thin=meta["thin"],
    )


# --- checkpoints ----------------------------------------------------------

def save_checkpoint(path, config: SofterConfig, data_sum: str, chain: int, sampler, recorder) -> None:
    arrays = {f"state/{k}": v for k, v in sampler.state.to_arrays().items()}
    for name in ("mu", "delta", "tau2", "B", "sigma2", "zeta", "xi"):
        value = getattr(recorder, name)
        if value is not None:
            arrays[f"rec/{name}"] = value
    meta = {
        "config_hash": config.model_hash(), "data_checksum": data_sum, "chain": chain,
        "iteration": sampler.iteration, "recorded": recorder.count,
        "rng_state": sampler.rng.bit_generator.state,
    }
    _write_container(path, CHECKPOINT_MAGIC, meta, arrays)


def load_checkpoint(path, config: SofterConfig, data_sum: str, chain: int) -> dict:
    from .sampler import _Recorder

    meta, arrs = _read_container(path, CHECKPOINT_MAGIC)
    if meta["config_hash"] != config.model_hash():
        raise ChecksumError("checkpoint was written for a different configuration")
    if meta["data_checksum"] != data_sum:
        raise ChecksumError("checkpoint was written for a different dataset")
    if meta["chain"] != chain:
        raise ChecksumError(f"checkpoint belongs to chain {meta['chain']}, not {chain}")
    state = ParameterState.from_arrays({k[6:]: v for k, v in arrs.items() if k.startswith("state/")})
    rec = _Recorder(**{n: arrs.get(f"rec/{n}") for n in ("mu", "delta", "tau2", "B", "sigma2", "zeta", "xi")},
                    count=meta["recorded"])
    return {"state": state, "rng_state": meta["rng_state"], "iteration": meta["iteration"], "recorder": rec}


# --- manifests ------------------------------------------------------------

def write_manifest(path, config: SofterConfig, data_checksums: dict, chain_paths: list,
                   transform: dict | None = None, extra: dict | None = None) -> None:
    from . import __version__

    doc = {
        "software_version": __version__, "format_version": FORMAT_VERSION,
        "config": config.to_dict(), "config_hash": config.model_hash(), "seed": config.sampler.seed,
        "data_checksums": data_checksums, "chains": [str(p) for p in chain_paths], "transform": transform,
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != FORMAT_VERSION:
        raise VersionError(f"{path}: manifest format version {doc.get('format_version')}")
    return doc
