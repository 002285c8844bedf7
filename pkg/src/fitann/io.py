"""File formats: fvecs vectors, raw float32 matrices with a shape sidecar,
line-aligned attribute files, workload tallies, and key-value configs with
environment overrides.

Attribute file: one line per row, comma-separated entries; a plain entry is
a token, ``name=value`` is a numeric attribute. Workload file: one
``<count>\\t<filter>`` line per unique filter.
"""
from __future__ import annotations

import json
import os

import numpy as np

from .dataset import AttributedDataset, AttributeSet
from .filters import FilterExpr, parse, to_text

ENV_PREFIX = "FITANN_"


def read_fvecs(path) -> np.ndarray:
    """Little-endian fvecs: per vector, an int32 dimension then that many
    float32 components."""
    raw = np.fromfile(path, dtype="<i4")
    if raw.size == 0:
        raise ValueError(f"empty fvecs file: {path}")
    d = int(raw[0])
    if d < 1 or raw.size % (d + 1) != 0:
        raise ValueError(f"malformed fvecs file (dim {d}): {path}")
    mat = raw.reshape(-1, d + 1)
    if not np.all(mat[:, 0] == d):
        raise ValueError(f"inconsistent dimensions across rows in {path}")
    return mat[:, 1:].view("<f4").astype(np.float32)


def write_fvecs(path, vectors: np.ndarray) -> None:
    vectors = np.asarray(vectors, dtype="<f4")
    n, d = vectors.shape
    out = np.empty((n, d + 1), dtype="<i4")
    out[:, 0] = d
    out[:, 1:] = vectors.view("<i4")
    out.tofile(path)


def read_raw_f32(path, sidecar=None) -> np.ndarray:
    """Raw float32 matrix; shape from ``<path>.shape.json`` by default."""
    sidecar = sidecar or f"{path}.shape.json"
    with open(sidecar, encoding="utf-8") as fh:
        shape = json.load(fh)
    n, d = int(shape["n"]), int(shape["d"])
    data = np.fromfile(path, dtype="<f4")
    if data.size != n * d:
        raise ValueError(f"raw file {path} has {data.size} floats, expected {n * d}")
    return data.reshape(n, d)


def write_raw_f32(path, vectors: np.ndarray, sidecar=None) -> None:
    vectors = np.asarray(vectors, dtype="<f4")
    vectors.tofile(path)
    sidecar = sidecar or f"{path}.shape.json"
    with open(sidecar, "w", encoding="utf-8") as fh:
        json.dump({"n": int(vectors.shape[0]), "d": int(vectors.shape[1])}, fh)
        fh.write("\n")


def parse_attribute_line(line: str) -> AttributeSet:
    tokens: set[str] = set()
    numerics: dict[str, float] = {}
    line = line.strip()
    if line:
        for part in line.split(","):
            part = part.strip()
            if not part:
                continue
            if "=" in part:
                name, _, val = part.partition("=")
                numerics[name.strip()] = float(val)
            else:
                tokens.add(part)
    return AttributeSet(tokens=frozenset(tokens), numerics=numerics)


def format_attribute_line(a: AttributeSet) -> str:
    parts = sorted(a.tokens)
    parts += [f"{k}={v:g}" for k, v in sorted(a.numerics.items())]
    return ",".join(parts)


def read_attributes(path) -> list[AttributeSet]:
    with open(path, encoding="utf-8") as fh:
        return [parse_attribute_line(line) for line in fh.read().splitlines()]


def write_attributes(path, attrs: list[AttributeSet]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a in attrs:
            fh.write(format_attribute_line(a) + "\n")


def load_dataset(vectors_path, attributes_path=None, metric: str = "l2",
                 fmt: str = "fvecs") -> AttributedDataset:
    if fmt == "fvecs":
        vecs = read_fvecs(vectors_path)
    elif fmt == "raw":
        vecs = read_raw_f32(vectors_path)
    else:
        raise ValueError(f"unknown vector format {fmt!r}")
    if attributes_path is None:
        attrs = [AttributeSet() for _ in range(vecs.shape[0])]
    else:
        attrs = read_attributes(attributes_path)
        if len(attrs) != vecs.shape[0]:
            raise ValueError(
                f"attribute file has {len(attrs)} lines for {vecs.shape[0]} vectors"
            )
    return AttributedDataset(vectors=vecs, attributes=attrs, metric=metric)


def read_workload(path) -> list[tuple[FilterExpr, int]]:
    """``<count>\\t<filter>`` per line; blank lines and ``#`` comments skipped."""
    entries: list[tuple[FilterExpr, int]] = []
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh.read().splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            count_s, _, filt_s = line.partition("\t")
            if not filt_s:
                raise ValueError(f"{path}:{ln}: expected '<count>\\t<filter>'")
            entries.append((parse(filt_s.strip()), int(count_s)))
    return entries


def write_workload(path, entries) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f, c in entries:
            fh.write(f"{int(c)}\t{to_text(f)}\n")


def read_filter_lines(path) -> list[FilterExpr]:
    """One filter per line, aligned with a query vector file."""
    with open(path, encoding="utf-8") as fh:
        return [parse(line.strip()) for line in fh.read().splitlines() if line.strip()]


def write_filter_lines(path, filters) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f in filters:
            fh.write(to_text(f) + "\n")


def _coerce(value: str):
    s = value.strip()
    low = s.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        pass
    if "," in s:
        return [_coerce(p) for p in s.split(",") if p.strip()]
    return s


def read_config(path) -> dict:
    """Key-value config: ``key = value`` lines, ``#`` comments. Values are
    coerced to bool/int/float/lists where they parse as such."""
    out: dict = {}
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh.read().splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected 'key = value'")
            key, _, val = line.partition("=")
            out[key.strip()] = _coerce(val)
    return out


def apply_env_overrides(config: dict, environ=None, prefix: str = ENV_PREFIX) -> dict:
    """Overlay ``FITANN_<KEY>`` environment variables onto a config dict."""
    environ = os.environ if environ is None else environ
    out = dict(config)
    for name, value in environ.items():
        if name.startswith(prefix):
            out[name[len(prefix):].lower()] = _coerce(value)
    return out
