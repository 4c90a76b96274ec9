"""Versioned on-disk container for model parameter tensors.

Layout: one UTF-8 JSON header line (sorted keys) describing kind, config
and tensor order/shapes, followed by each tensor's raw bytes in C order,
little-endian float64.  Writing the same tensors always produces the same
bytes, and a round trip is bit-exact.
"""

import json

import numpy as np

FORMAT_NAME = "polarlens.tensors"
FORMAT_VERSION = 1


class ContainerError(ValueError):
    """Raised for malformed or mismatched container files."""


def save_tensors(path, kind: str, config: dict, tensors: dict) -> None:
    names = sorted(tensors)
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "kind": kind,
        "config": config,
        "tensors": [
            {"name": n, "shape": list(tensors[n].shape)} for n in names
        ],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for n in names:
            arr = np.ascontiguousarray(tensors[n], dtype="<f8")
            fh.write(arr.tobytes())


def load_tensors(path):
    """Read a container; returns (kind, config, tensors dict)."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ContainerError(f"bad container header: {exc}")
        if header.get("format") != FORMAT_NAME:
            raise ContainerError(f"not a {FORMAT_NAME} file")
        if header.get("version") != FORMAT_VERSION:
            raise ContainerError(f"unsupported container version {header.get('version')}")
        tensors = {}
        for meta in header["tensors"]:
            shape = tuple(meta["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise ContainerError(f"truncated tensor {meta['name']!r}")
            tensors[meta["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise ContainerError("trailing bytes after last tensor")
    return header["kind"], header["config"], tensors
