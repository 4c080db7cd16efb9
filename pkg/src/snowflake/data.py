"""Point-cloud files, synthetic shapes, normalization and viewpoint cropping."""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

SHAPES = ("sphere", "box", "torus", "plane")


class ParseError(ValueError):
    def __init__(self, path, line: int | None, message: str):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")
        self.path = path
        self.line = line


class DegenerateError(ValueError):
    pass


# file formats

def _fmt(v: float) -> str:
    return f"{v:.9g}"


def write_xyz(path, points: np.ndarray) -> None:
    pts = np.asarray(points, dtype=np.float64)
    with open(path, "w") as fh:
        for x, y, z in pts:
            fh.write(f"{_fmt(x)} {_fmt(y)} {_fmt(z)}\n")


def _floats(tokens: Sequence[str], path, line: int) -> list[float]:
    try:
        values = [float(t) for t in tokens]
    except ValueError:
        raise ParseError(path, line, f"non-numeric token in {' '.join(tokens)!r}") from None
    if not all(np.isfinite(values)):
        raise ParseError(path, line, "non-finite coordinate")
    return values


def read_xyz(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != 3:
                raise ParseError(path, lineno, f"expected 3 coordinates, found {len(tokens)}")
            rows.append(_floats(tokens, path, lineno))
    if not rows:
        raise ParseError(path, None, "no points in file")
    return np.array(rows, dtype=np.float64)


def write_ply(path, points: np.ndarray, extra: dict[str, np.ndarray] | None = None) -> None:
    """ASCII PLY with float x, y, z and optional integer vertex properties."""
    pts = np.asarray(points, dtype=np.float64)
    extra = extra or {}
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(pts)}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        for name in extra:
            fh.write(f"property int {name}\n")
        fh.write("end_header\n")
        columns = [np.asarray(v) for v in extra.values()]
        for i, (x, y, z) in enumerate(pts):
            tail = "".join(f" {int(c[i])}" for c in columns)
            fh.write(f"{_fmt(x)} {_fmt(y)} {_fmt(z)}{tail}\n")


def read_ply(path, with_properties: bool = False):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(path, None, "empty file")
    if lines[0].strip() != "ply":
        raise ParseError(path, 1, "missing 'ply' magic line")
    count = None
    props: list[str] = []
    in_vertex = False
    body_start = None
    for lineno, raw in enumerate(lines[1:], 2):
        tokens = raw.split()
        if not tokens or tokens[0] == "comment" or tokens[0] == "obj_info":
            continue
        if tokens[0] == "format":
            if len(tokens) < 3 or tokens[1] != "ascii":
                raise ParseError(path, lineno, f"only ASCII PLY is supported, got {' '.join(tokens[1:2])!r}")
            if tokens[2] != "1.0":
                raise ParseError(path, lineno, f"unsupported PLY version {tokens[2]}")
        elif tokens[0] == "element":
            if len(tokens) != 3:
                raise ParseError(path, lineno, "malformed element line")
            in_vertex = tokens[1] == "vertex"
            if in_vertex:
                try:
                    count = int(tokens[2])
                except ValueError:
                    raise ParseError(path, lineno, f"bad vertex count {tokens[2]!r}") from None
            elif count is None:
                raise ParseError(path, lineno, "elements before vertex are not supported")
        elif tokens[0] == "property":
            if in_vertex:
                if len(tokens) != 3:
                    raise ParseError(path, lineno, "list properties are not supported on vertices")
                props.append(tokens[2])
        elif tokens[0] == "end_header":
            body_start = lineno
            break
        else:
            raise ParseError(path, lineno, f"unexpected header line {raw!r}")
    if body_start is None:
        raise ParseError(path, None, "missing end_header")
    if count is None:
        raise ParseError(path, None, "no vertex element")
    try:
        axes = [props.index(a) for a in "xyz"]
    except ValueError:
        raise ParseError(path, None, "vertex element lacks x, y, z properties") from None
    rows = []
    lineno = body_start
    for raw in lines[body_start:]:
        lineno += 1
        tokens = raw.split()
        if not tokens:
            continue
        if len(rows) == count:
            break
        if len(tokens) < len(props):
            raise ParseError(path, lineno, f"expected {len(props)} values, found {len(tokens)}")
        rows.append(_floats(tokens[:len(props)], path, lineno))
    if len(rows) < count:
        raise ParseError(path, lineno, f"truncated body: header declares {count} vertices, found {len(rows)}")
    if count == 0:
        raise ParseError(path, None, "no points in file")
    table = np.array(rows, dtype=np.float64)
    pts = table[:, axes]
    if with_properties:
        return pts, {name: table[:, i] for i, name in enumerate(props) if name not in "xyz"}
    return pts


def read_cloud(path) -> np.ndarray:
    return read_ply(path) if str(path).lower().endswith(".ply") else read_xyz(path)


def write_cloud(path, points) -> None:
    if str(path).lower().endswith(".ply"):
        write_ply(path, points)
    else:
        write_xyz(path, points)


# normalization

def normalize(points) -> tuple[np.ndarray, np.ndarray, float]:
    """Center on the bounding box and scale the largest half-extent to 1.

    Returns ``(normalized, center, scale)``; the original is ``normalized * scale + center``.
    """
    pts = np.asarray(points, dtype=np.float64)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    center = (lo + hi) / 2
    scale = float((hi - lo).max() / 2)
    if not scale > 0:
        raise DegenerateError("point cloud has zero extent")
    return (pts - center) / scale, center, scale


def denormalize(points, center, scale: float) -> np.ndarray:
    return np.asarray(points, dtype=np.float64) * scale + center


# synthetic shapes

def _sphere(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _box(rng, n):
    # faces of the cube [-1, 1]^3, all of equal area
    face = rng.integers(0, 6, size=n)
    uv = rng.uniform(-1.0, 1.0, size=(n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, -1.0, 1.0)
    for a in range(3):
        others = [b for b in range(3) if b != a]
        sel = axis == a
        pts[sel, a] = sign[sel]
        pts[np.ix_(sel, others)] = uv[sel]
    return pts


def _torus(rng, n, major=1.0, minor=0.4):
    # rejection on the tube angle gives uniform surface density
    theta = np.empty(0)
    while theta.size < n:
        cand = rng.uniform(0, 2 * np.pi, size=2 * n)
        keep = rng.uniform(0, major + minor, size=2 * n) <= major + minor * np.cos(cand)
        theta = np.concatenate([theta, cand[keep]])
    theta = theta[:n]
    phi = rng.uniform(0, 2 * np.pi, size=n)
    ring = major + minor * np.cos(theta)
    return np.stack([ring * np.cos(phi), ring * np.sin(phi), minor * np.sin(theta)], axis=1)


def _plane(rng, n):
    uv = rng.uniform(-1.0, 1.0, size=(n, 2))
    return np.column_stack([uv, np.zeros(n)])


_SAMPLERS = {"sphere": _sphere, "box": _box, "torus": _torus, "plane": _plane}


def synth_surface(kind: str, n: int, rng_seed: int) -> np.ndarray:
    """Raw surface samples before box normalization."""
    if kind not in _SAMPLERS:
        raise ValueError(f"unknown shape kind {kind!r}; expected one of {', '.join(SHAPES)}")
    if n < 1:
        raise ValueError("n must be at least 1")
    return _SAMPLERS[kind](np.random.default_rng(rng_seed), n)


def synth_shape(kind: str, n: int, rng_seed: int) -> np.ndarray:
    """``n`` points uniform on the surface of ``kind``, normalized to [-1, 1]^3."""
    pts = synth_surface(kind, n, rng_seed)
    if n == 1:
        return np.zeros((1, 3))
    return normalize(pts)[0]


# partial inputs

@dataclass
class ShapeSample:
    partial: np.ndarray
    complete: np.ndarray
    label: str = ""
    viewpoint: np.ndarray | None = None


def random_viewpoint(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def crop_viewpoint(complete, n_remove: int, viewpoint, label: str = "") -> ShapeSample:
    """Drop the ``n_remove`` points farthest from ``viewpoint``; order of the rest is preserved."""
    pts = np.asarray(complete, dtype=np.float64)
    if not 0 <= n_remove < len(pts):
        raise ValueError(f"cannot remove {n_remove} of {len(pts)} points")
    vp = np.asarray(viewpoint, dtype=np.float64)
    d = np.linalg.norm(pts - vp, axis=1)
    order = np.argsort(d, kind="stable")
    keep = np.sort(order[:len(pts) - n_remove])
    return ShapeSample(pts[keep], pts, label, vp)


# manifests

@dataclass
class ManifestEntry:
    complete: Path
    partial: Path | None
    label: str


def write_manifest(path, entries: Sequence[ManifestEntry]) -> None:
    base = Path(path).parent
    with open(path, "w") as fh:
        for e in entries:
            partial = "" if e.partial is None else os.path.relpath(e.partial, base)
            fh.write(f"{os.path.relpath(e.complete, base)}\t{partial}\t{e.label}\n")


def read_manifest(path) -> list[ManifestEntry]:
    base = Path(path).parent
    entries = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) != 3:
                raise ParseError(path, lineno, f"expected 3 tab-separated fields, found {len(fields)}")
            complete, partial, label = fields
            if not complete:
                raise ParseError(path, lineno, "missing complete-cloud path")
            entries.append(ManifestEntry(base / complete, base / partial if partial else None, label))
    return entries


def load_samples(manifest_path) -> list[ShapeSample]:
    out = []
    for e in read_manifest(manifest_path):
        complete = read_cloud(e.complete)
        partial = read_cloud(e.partial) if e.partial is not None else complete
        out.append(ShapeSample(partial, complete, e.label))
    return out
