"""Matrix Market input and the factor container file format.

Container layout (all integers little-endian)::

    b"RANDLRFC"                 8-byte magic
    uint32 version              currently 1
    uint64 manifest_length
    manifest                    UTF-8 JSON, lists blobs in storage order
    for each blob:
        uint64 count            number of float64 values
        count * float64 (LE)    column-major data

Load checks the magic, the version and that every blob's length prefix
matches the shape recorded in the manifest.
"""

import json
import os
import struct
import tempfile

import numpy as np
import scipy.sparse as sp

from .decomp import Approximant, Method
from .errors import (
    ContainerError,
    MMDataError,
    MMFieldError,
    MMHeaderError,
    MMIndexError,
    VersionMismatchError,
)
from .sketch import SketchKind, SketchSpec
from .stability import CoreFactor, CorePath, EpsilonPolicy, InstabilityReport
from .update import BlockSketch, UpdatableState

__all__ = [
    "read_matrix_market",
    "write_matrix_market",
    "save_container",
    "load_container",
    "MAGIC",
    "FORMAT_VERSION",
]

MAGIC = b"RANDLRFC"
FORMAT_VERSION = 1


# -- Matrix Market ---------------------------------------------------------

def _parse_float(tok, lineno):
    try:
        return float(tok)
    except ValueError:
        raise MMDataError(f"cannot parse value {tok!r}", lineno) from None


def _parse_int(tok, lineno):
    try:
        return int(tok)
    except ValueError:
        raise MMDataError(f"cannot parse index {tok!r}", lineno) from None


def read_matrix_market(path):
    """Read a real Matrix Market file.

    ``coordinate`` files become CSR arrays, ``array`` files dense ndarrays.
    Symmetric and skew-symmetric storage is expanded.
    """
    with open(path, "r") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise MMHeaderError("empty file", 1)
    header = lines[0].split()
    if len(header) != 5 or header[0].lower() != "%%matrixmarket" or header[1].lower() != "matrix":
        raise MMHeaderError(f"bad banner {lines[0]!r}", 1)
    fmt, fld, sym = (h.lower() for h in header[2:])
    if fmt not in ("coordinate", "array"):
        raise MMHeaderError(f"unknown format {fmt!r}", 1)
    if fld not in ("real", "double", "integer"):
        raise MMFieldError(f"unsupported field {fld!r}; only real data is accepted", 1)
    if sym not in ("general", "symmetric", "skew-symmetric"):
        raise MMHeaderError(f"unsupported symmetry {sym!r}", 1)

    body = [(i + 1, ln.split()) for i, ln in enumerate(lines[1:], start=1)
            if ln.strip() and not ln.lstrip().startswith("%")]
    if not body:
        raise MMHeaderError("missing size line", len(lines))
    size_line, size = body[0]
    entries = body[1:]
    want = 3 if fmt == "coordinate" else 2
    if len(size) != want:
        raise MMHeaderError(f"size line needs {want} integers", size_line)
    dims = [_parse_int(t, size_line) for t in size]
    m, n = dims[0], dims[1]
    if m < 0 or n < 0 or (fmt == "coordinate" and dims[2] < 0):
        raise MMHeaderError("negative size", size_line)
    if sym != "general" and m != n:
        raise MMHeaderError(f"{sym} matrix must be square", size_line)
    sign = -1.0 if sym == "skew-symmetric" else 1.0

    if fmt == "array":
        if sym == "general":
            expected = m * n
        elif sym == "symmetric":
            expected = n * (n + 1) // 2
        else:
            expected = n * (n - 1) // 2
        if len(entries) != expected:
            last = entries[-1][0] if entries else size_line
            raise MMDataError(f"expected {expected} values, found {len(entries)}", last)
        vals = []
        for lineno, toks in entries:
            if len(toks) != 1:
                raise MMDataError("array entries hold one value per line", lineno)
            vals.append(_parse_float(toks[0], lineno))
        if sym == "general":
            return np.array(vals, dtype=np.float64).reshape((m, n), order="F")
        A = np.zeros((n, n))
        it = iter(vals)
        for j in range(n):
            for i in range(j if sym == "symmetric" else j + 1, n):
                v = next(it)
                A[i, j] = v
                A[j, i] = v if i == j else sign * v
        return A

    nnz = dims[2]
    if len(entries) != nnz:
        last = entries[-1][0] if entries else size_line
        raise MMDataError(f"expected {nnz} entries, found {len(entries)}", last)
    rows, cols, vals = [], [], []
    for lineno, toks in entries:
        if len(toks) != 3:
            raise MMDataError("coordinate entries need 'row col value'", lineno)
        i, j = _parse_int(toks[0], lineno), _parse_int(toks[1], lineno)
        if not (1 <= i <= m and 1 <= j <= n):
            raise MMIndexError(f"index ({i}, {j}) outside {m}x{n}", lineno)
        if sym == "symmetric" and i < j:
            raise MMIndexError(f"entry ({i}, {j}) above the diagonal in symmetric storage", lineno)
        if sym == "skew-symmetric" and i <= j:
            raise MMIndexError(f"entry ({i}, {j}) not strictly below the diagonal in skew storage", lineno)
        v = _parse_float(toks[2], lineno)
        rows.append(i - 1)
        cols.append(j - 1)
        vals.append(v)
        if sym != "general" and i != j:
            rows.append(j - 1)
            cols.append(i - 1)
            vals.append(sign * v)
    return sp.csr_array((np.array(vals, dtype=np.float64), (np.array(rows, dtype=np.int64),
                                                            np.array(cols, dtype=np.int64))),
                        shape=(m, n))


def write_matrix_market(path, A, comment=None):
    """Write a general real matrix: coordinate for sparse input, array for dense."""
    with open(path, "w") as fh:
        if sp.issparse(A):
            C = sp.coo_array(A)
            fh.write("%%MatrixMarket matrix coordinate real general\n")
            if comment:
                fh.write(f"% {comment}\n")
            fh.write(f"{C.shape[0]} {C.shape[1]} {C.nnz}\n")
            for i, j, v in zip(C.row, C.col, C.data):
                fh.write(f"{i + 1} {j + 1} {float(v)!r}\n")
        else:
            A = np.asarray(A, dtype=np.float64)
            fh.write("%%MatrixMarket matrix array real general\n")
            if comment:
                fh.write(f"% {comment}\n")
            fh.write(f"{A.shape[0]} {A.shape[1]}\n")
            for v in A.ravel(order="F"):
                fh.write(f"{float(v)!r}\n")


# -- factor container ------------------------------------------------------

def _core_manifest(core):
    return {
        "path": core.path.value,
        "eps_used": core.eps_used,
        "lower": core.lower,
        "rank": core.rank,
        "switched": core.switched,
        "report": None if core.report is None else core.report.to_dict(),
    }


def _approx_payload(approx):
    m, n = approx.shape
    manifest = {
        "type": "approximant",
        "method": approx.method.value,
        "m": m, "n": n, "r": approx.r, "ell": approx.ell,
        "seed": approx.seed, "sketch": approx.kind.value, "power": approx.power,
        "x_spec": None if approx.x_spec is None else approx.x_spec.to_dict(),
        "y_spec": None if approx.y_spec is None else approx.y_spec.to_dict(),
        "epsilon_policy": None if approx.policy is None else approx.policy.to_dict(),
    }
    if approx.method.is_range_finder:
        blobs = {"Q": approx.Q, "U0": approx.U0, "s0": approx.s0, "V0": approx.V0}
    else:
        blobs = {"F": approx.F}
        if approx.G is not None:
            blobs["G"] = approx.G
        blobs.update(approx.core.arrays())
        manifest["core"] = _core_manifest(approx.core)
        manifest["instability"] = manifest["core"]["report"]
    return manifest, blobs


def _state_payload(state):
    m, n = state.shape
    manifest = {
        "type": "state",
        "method": "sgn" if state.mode == "stabilized" else "gn",
        "mode": state.mode,
        "m": m, "n": n, "r": state.r, "ell": state.ell,
        "seed": state.seed, "sketch": state.kind.value,
        "next_stream": state.next_stream,
        "epsilon_policy": state.policy.to_dict(),
        "X": state.X.to_dict(),
        "Y": state.Y.to_dict(),
    }
    return manifest, {"F": state.F, "G": state.G, "core_raw": state.core_raw}


def save_container(obj, path):
    """Write an :class:`Approximant` or :class:`UpdatableState` atomically."""
    if isinstance(obj, UpdatableState):
        manifest, blobs = _state_payload(obj)
    elif isinstance(obj, Approximant):
        manifest, blobs = _approx_payload(obj)
    else:
        raise TypeError(f"cannot store {type(obj).__name__}")
    manifest["format_version"] = FORMAT_VERSION
    manifest["blobs"] = [{"name": k, "shape": list(np.shape(v))} for k, v in blobs.items()]
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")

    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".randlr-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<IQ", FORMAT_VERSION, len(head)))
            fh.write(head)
            for arr in blobs.values():
                data = np.asarray(arr, dtype="<f8")
                fh.write(struct.pack("<Q", data.size))
                fh.write(data.tobytes(order="F"))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_exact(fh, nbytes, what):
    buf = fh.read(nbytes)
    if len(buf) != nbytes:
        raise ContainerError(f"container truncated while reading {what}")
    return buf


def _read_container(path):
    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC), "magic") != MAGIC:
            raise ContainerError("not a factor container (bad magic)")
        version, hlen = struct.unpack("<IQ", _read_exact(fh, 12, "header"))
        if version != FORMAT_VERSION:
            raise VersionMismatchError(f"container version {version}, expected {FORMAT_VERSION}")
        try:
            manifest = json.loads(_read_exact(fh, hlen, "manifest").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ContainerError(f"corrupt manifest: {exc}") from None
        blobs = {}
        for entry in manifest.get("blobs", []):
            shape = tuple(int(s) for s in entry["shape"])
            (count,) = struct.unpack("<Q", _read_exact(fh, 8, f"blob {entry['name']}"))
            if count != int(np.prod(shape, dtype=np.int64)):
                raise ContainerError(
                    f"blob {entry['name']} holds {count} values but the manifest says {shape}"
                )
            data = np.frombuffer(_read_exact(fh, 8 * count, f"blob {entry['name']}"), dtype="<f8")
            blobs[entry["name"]] = data.astype(np.float64).reshape(shape, order="F")
        if fh.read(1):
            raise ContainerError("trailing bytes after the last blob")
    return manifest, blobs


def _check_dims(manifest, blobs):
    m, n = manifest["m"], manifest["n"]
    checks = []
    if "F" in blobs:
        checks.append(("F", blobs["F"].shape[0] == m))
    if "G" in blobs:
        checks.append(("G", blobs["G"].shape[1] == n))
    if "Q" in blobs:
        checks.append(("Q", blobs["Q"].shape[0] == m and blobs["V0"].shape[0] == n))
    for name, ok in checks:
        if not ok:
            raise ContainerError(f"blob {name} is inconsistent with the manifest dimensions {m}x{n}")


def load_container(path):
    """Inverse of :func:`save_container`."""
    try:
        manifest, blobs = _read_container(path)
    except FileNotFoundError:
        raise
    except (struct.error, KeyError, ValueError) as exc:
        raise ContainerError(f"malformed container: {exc}") from None
    try:
        _check_dims(manifest, blobs)
        if manifest["type"] == "state":
            return UpdatableState(
                F=blobs["F"], G=blobs["G"], core_raw=blobs["core_raw"],
                X=BlockSketch.from_dict(manifest["X"]), Y=BlockSketch.from_dict(manifest["Y"]),
                r=manifest["r"], ell=manifest["ell"], seed=manifest["seed"],
                kind=SketchKind.parse(manifest["sketch"]), next_stream=manifest["next_stream"],
                mode=manifest["mode"], policy=EpsilonPolicy.from_dict(manifest["epsilon_policy"]),
            )
        method = Method(manifest["method"])
        common = dict(
            method=method, shape=(manifest["m"], manifest["n"]), r=manifest["r"], ell=manifest["ell"],
            seed=manifest["seed"], kind=SketchKind.parse(manifest["sketch"]), power=manifest.get("power", 0),
            x_spec=None if manifest.get("x_spec") is None else SketchSpec.from_dict(manifest["x_spec"]),
            y_spec=None if manifest.get("y_spec") is None else SketchSpec.from_dict(manifest["y_spec"]),
            policy=None if manifest.get("epsilon_policy") is None
            else EpsilonPolicy.from_dict(manifest["epsilon_policy"]),
        )
        if method.is_range_finder:
            return Approximant(**common, Q=blobs["Q"], U0=blobs["U0"], s0=blobs["s0"], V0=blobs["V0"])
        c = manifest["core"]
        core = CoreFactor(
            Q=blobs["core_Q"], T=blobs["core_T"], Z=blobs.get("core_Z"), lower=c["lower"],
            path=CorePath.parse(c["path"]), eps_used=c["eps_used"],
            report=None if c["report"] is None else InstabilityReport.from_dict(c["report"]),
            switched=c["switched"],
        )
        if core.rank != c["rank"] or core.Q.shape[1] != core.rank:
            raise ContainerError("core blobs are inconsistent with the recorded rank")
        return Approximant(**common, F=blobs["F"], G=blobs.get("G"), core=core)
    except KeyError as exc:
        raise ContainerError(f"container is missing {exc}") from None
