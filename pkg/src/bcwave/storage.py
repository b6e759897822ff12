"""Binary array persistence and stage provenance.

Every floating-point artifact is stored as raw 64-bit little-endian
row-major payload next to a JSON manifest that records dimensions and the
payload's SHA-256.  Stage manifests additionally record the hashes of their
inputs, forming a provenance chain: a stage refuses to resume on top of
inputs whose hashes have changed.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ProvenanceError
from .forward import ReceiverSpec, TraceSet

__all__ = [
    "sha256_file",
    "save_matrix",
    "load_matrix",
    "save_manifest",
    "load_manifest",
    "manifest_digest",
    "check_inputs",
    "save_traceset",
    "DiskTraceSet",
    "load_traceset",
]


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def save_matrix(path, arr: np.ndarray, meta: dict | None = None) -> dict:
    """Raw float64 payload plus a sidecar manifest with shape and hash."""
    arr = np.ascontiguousarray(arr, dtype="<f8")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(arr.tobytes(order="C"))
    manifest = {
        "format": "float64 little-endian row-major",
        "shape": list(arr.shape),
        "sha256": sha256_file(path),
    }
    if meta:
        manifest.update(meta)
    save_manifest(path.with_suffix(path.suffix + ".json"), manifest)
    return manifest


def load_matrix(path, verify: bool = True) -> np.ndarray:
    path = Path(path)
    manifest = load_manifest(path.with_suffix(path.suffix + ".json"))
    if verify and sha256_file(path) != manifest["sha256"]:
        raise ProvenanceError(f"payload hash mismatch for {path}")
    arr = np.fromfile(path, dtype="<f8")
    return arr.reshape(manifest["shape"])


def save_manifest(path, manifest: dict) -> None:
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def manifest_digest(manifest: dict) -> str:
    """Order-independent digest of a manifest's content."""
    return hashlib.sha256(
        json.dumps(manifest, sort_keys=True).encode()).hexdigest()


def check_inputs(manifest: dict, current: dict) -> None:
    """Verify that the recorded input digests match the current ones."""
    recorded = manifest.get("inputs", {})
    for name, digest in current.items():
        if name in recorded and recorded[name] != digest:
            raise ProvenanceError(
                f"stage input '{name}' changed since this artifact was made; "
                "refusing to resume (rerun with --force to rebuild)")


# ---------------------------------------------------------------------------
# Trace sets on disk
# ---------------------------------------------------------------------------

def save_traceset(dirpath, traces: TraceSet, extra_meta: dict | None = None) -> dict:
    """One row-major float64 file per source plus a manifest describing the
    receiver lattice and per-file hashes."""
    dirpath = Path(dirpath)
    os.makedirs(dirpath, exist_ok=True)
    rec = traces.receivers
    files = []
    shape = None
    for n, tr in traces.traces():
        fname = f"trace_{n:05d}.bin"
        arr = np.ascontiguousarray(tr, dtype="<f8")
        shape = list(arr.shape)
        with open(dirpath / fname, "wb") as fh:
            fh.write(arr.tobytes(order="C"))
        files.append({"file": fname, "sha256": sha256_file(dirpath / fname)})
    manifest = {
        "kind": "traceset",
        "n_sources": traces.n_sources,
        "trace_shape": shape,
        "receivers": {"x_lo": rec.x_lo, "x_hi": rec.x_hi, "dx_r": rec.dx_r,
                      "dt_r": rec.dt_r, "t_max": rec.t_max},
        "files": files,
    }
    if extra_meta:
        manifest.update(extra_meta)
    save_manifest(dirpath / "manifest.json", manifest)
    return manifest


class DiskTraceSet(TraceSet):
    """Trace access backed by the per-source files of a saved set."""

    def __init__(self, dirpath, verify: bool = False):
        self.dir = Path(dirpath)
        self.manifest = load_manifest(self.dir / "manifest.json")
        if self.manifest.get("kind") != "traceset":
            raise ConfigurationError(f"{dirpath} does not hold a trace set")
        r = self.manifest["receivers"]
        self.receivers = ReceiverSpec(x_lo=r["x_lo"], x_hi=r["x_hi"],
                                      dx_r=r["dx_r"], dt_r=r["dt_r"],
                                      t_max=r["t_max"])
        self.n_sources = self.manifest["n_sources"]
        self._shape = tuple(self.manifest["trace_shape"])
        self.provenance = manifest_digest(self.manifest)
        if verify:
            for entry in self.manifest["files"]:
                if sha256_file(self.dir / entry["file"]) != entry["sha256"]:
                    raise ProvenanceError(f"trace file {entry['file']} corrupted")

    def trace(self, n: int) -> np.ndarray:
        entry = self.manifest["files"][n]
        return np.fromfile(self.dir / entry["file"], dtype="<f8").reshape(self._shape)


def load_traceset(dirpath, verify: bool = False) -> DiskTraceSet:
    return DiskTraceSet(dirpath, verify=verify)
