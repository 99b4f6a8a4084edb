"""Synthetic scene generation: procedural lane graphs, rasterized centerline
images, and similarity-transform augmentation.

The raster stands in for a real sensor/BEV feature: a noisy anti-aliased
rendering of the ground-truth centerlines. Noise and coordinate quantization
keep the task from degenerating into pixel copying.
"""

from __future__ import annotations

import os
import math
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from .graph import (
    DEFAULT_EXTENT,
    BevExtent,
    Edge,
    LaneGraph,
    Vec2,
    load_graph,
    sample_edge,
    save_graph,
    validate,
)
from .codec import SerializationOrder, TokenSequence, VocabSpec, encode

_MARGIN = 2.0          # meters kept clear of the extent border
_LANE_SEP = 4.0        # minimum lateral separation between frontier lanes
_STROKE_RADIUS = 1.7   # raster stroke half-width in pixels
_RASTER_MAGIC = b"LGRS1"


@dataclass(frozen=True)
class GenConfig:
    seed: int = 0
    num_scenes: int = 2000
    min_vertices: int = 3
    max_vertices: int = 12
    fork_prob: float = 0.18
    merge_prob: float = 0.18
    curvature_scale: float = 3.0
    raster_h: int = 64
    raster_w: int = 64
    noise_std: float = 0.05
    flip: bool = True
    rotate: bool = True
    scale: bool = True

    def __post_init__(self) -> None:
        for name in ("fork_prob", "merge_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name}={p} outside [0, 1]")
        if not 0 < self.min_vertices <= self.max_vertices:
            raise ValueError("need 0 < min_vertices <= max_vertices")


@dataclass
class SceneSample:
    raster: np.ndarray  # (H, W) float32 in [0, 1]
    graph: LaneGraph
    sequence: TokenSequence


def generate_graph(cfg: GenConfig, rng: np.random.Generator) -> LaneGraph:
    """Grow lanes left to right across the extent.

    Frontier lanes advance in x stations; at each station a lane may fork
    into two children or merge with its lateral neighbour. Children always
    lie strictly to the right of their parents, so the result is acyclic by
    construction. Retries a few times if an attempt lands under the minimum
    vertex budget and returns the largest attempt otherwise.
    """
    best: LaneGraph | None = None
    for _ in range(16):
        g = _grow(cfg, rng)
        if len(g.vertices) >= cfg.min_vertices:
            return g
        if best is None or len(g.vertices) > len(best.vertices):
            best = g
    return best if best is not None else _grow(cfg, rng)


def _grow(cfg: GenConfig, rng: np.random.Generator) -> LaneGraph:
    ext = DEFAULT_EXTENT
    y_lo, y_hi = ext.y_min + _MARGIN, ext.y_max - _MARGIN
    x = ext.x_min + _MARGIN + rng.uniform(0.0, 4.0)

    verts: list[tuple[float, float]] = []
    edges: list[tuple[int, int]] = []

    n_lanes = 1 if cfg.max_vertices < 6 else int(rng.integers(1, 3))
    frontier: list[int] = []
    for _ in range(n_lanes):
        for _ in range(8):
            y = rng.uniform(y_lo, y_hi)
            if all(abs(y - verts[f][1]) >= _LANE_SEP for f in frontier):
                break
        verts.append((x + rng.uniform(-1.0, 1.0), y))
        frontier.append(len(verts) - 1)

    while True:
        x += rng.uniform(14.0, 24.0)
        if x > ext.x_max - _MARGIN:
            break
        # worst case this station adds one child per lane
        if len(verts) + len(frontier) > cfg.max_vertices:
            break
        frontier.sort(key=lambda i: verts[i][1])
        budget = cfg.max_vertices - len(verts)
        merge_at = -1
        if len(frontier) >= 2 and rng.random() < cfg.merge_prob:
            merge_at = int(rng.integers(0, len(frontier) - 1))

        new_frontier: list[int] = []
        i = 0
        while i < len(frontier):
            parent = frontier[i]
            py = verts[parent][1]
            cx = x + rng.uniform(-1.5, 1.5)
            if i == merge_at:
                partner = frontier[i + 1]
                cy = _clamp(0.5 * (py + verts[partner][1]) + rng.uniform(-1.0, 1.0), y_lo, y_hi)
                child = len(verts)
                verts.append((cx, cy))
                edges.append((parent, child))
                edges.append((partner, child))
                new_frontier.append(child)
                budget -= 1
                i += 2
                continue
            fork_ok = (
                budget >= len(frontier) - i + 1
                and len(new_frontier) + (len(frontier) - i) < 4
                and y_lo + _LANE_SEP <= py <= y_hi - _LANE_SEP
            )
            if fork_ok and rng.random() < cfg.fork_prob:
                for dy in (-_LANE_SEP, _LANE_SEP):
                    child = len(verts)
                    verts.append((cx + rng.uniform(-0.8, 0.8), _clamp(py + dy + rng.uniform(-0.8, 0.8), y_lo, y_hi)))
                    edges.append((parent, child))
                    new_frontier.append(child)
                budget -= 2
            else:
                child = len(verts)
                verts.append((cx, _clamp(py + rng.uniform(-2.5, 2.5), y_lo, y_hi)))
                edges.append((parent, child))
                new_frontier.append(child)
                budget -= 1
            i += 1
        frontier = new_frontier

    full_edges = []
    for src, tgt in edges:
        p, q = verts[src], verts[tgt]
        dx, dy = q[0] - p[0], q[1] - p[1]
        norm = math.hypot(dx, dy)
        ux, uy = (-dy / norm, dx / norm) if norm > 0 else (0.0, 0.0)
        off = rng.uniform(-1.0, 1.0) * cfg.curvature_scale
        mx = _clamp(0.5 * (p[0] + q[0]) + ux * off, ext.x_min, ext.x_max)
        my = _clamp(0.5 * (p[1] + q[1]) + uy * off, ext.y_min, ext.y_max)
        full_edges.append((src, tgt, (mx, my)))
    return LaneGraph.build(verts, full_edges, ext)


def _clamp(v: float, lo: float, hi: float) -> float:
    return min(max(v, lo), hi)


def rasterize(g: LaneGraph, cfg: GenConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Render sampled centerlines into an (H, W) float32 grid in [0, 1].

    Strokes are anti-aliased by splatting each sample point with a linear
    falloff kernel, composited with max so overlaps don't over-brighten.
    Gaussian pixel noise of cfg.noise_std is added, then values are clamped.
    The rng drives only the noise; pass the corpus rng for reproducibility.
    """
    h, w = cfg.raster_h, cfg.raster_w
    ext = g.extent
    img = np.zeros((h, w), dtype=np.float32)

    pts: list[tuple[float, float]] = []
    for e in g.edges:
        for p in sample_edge(g, e):
            pts.append((p.x, p.y))
    if pts:
        arr = np.asarray(pts, dtype=np.float64)
        px = (arr[:, 0] - ext.x_min) / (ext.x_max - ext.x_min) * w - 0.5
        py = (arr[:, 1] - ext.y_min) / (ext.y_max - ext.y_min) * h - 0.5
        r0 = np.rint(py).astype(np.int64)
        c0 = np.rint(px).astype(np.int64)
        reach = int(math.ceil(_STROKE_RADIUS))
        for dr in range(-reach, reach + 1):
            for dc in range(-reach, reach + 1):
                rr = r0 + dr
                cc = c0 + dc
                ok = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
                if not ok.any():
                    continue
                d = np.hypot(rr[ok] - py[ok], cc[ok] - px[ok])
                val = np.clip(1.0 - d / _STROKE_RADIUS, 0.0, 1.0).astype(np.float32)
                np.maximum.at(img, (rr[ok], cc[ok]), val)

    if cfg.noise_std > 0:
        if rng is None:
            rng = np.random.default_rng(cfg.seed)
        img = img + rng.normal(0.0, cfg.noise_std, size=img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0)


def augment(
    sample: SceneSample,
    rng: np.random.Generator,
    cfg: GenConfig,
    vocab: VocabSpec,
    order: SerializationOrder,
    vertex_len: int,
    edge_len: int,
) -> SceneSample:
    """Apply one random similarity transform (flip / rotate / scale) to the
    graph, re-render the raster and re-encode the sequence.

    If any transformed vertex would leave the extent the original sample is
    returned unchanged (midpoints are clamped instead, which preserves
    validity). The identity draw returns the input sample as-is.
    """
    g = sample.graph
    ext = g.extent

    do_flip = cfg.flip and rng.random() < 0.5
    theta = math.radians(rng.uniform(-10.0, 10.0)) if cfg.rotate else 0.0
    s = rng.uniform(0.9, 1.1) if cfg.scale else 1.0
    if not do_flip and theta == 0.0 and s == 1.0:
        return sample

    cos_t, sin_t = math.cos(theta), math.sin(theta)

    def xform(p: Vec2) -> tuple[float, float]:
        x, y = p.x, (-p.y if do_flip else p.y)
        return (s * (cos_t * x - sin_t * y), s * (sin_t * x + cos_t * y))

    new_verts = [xform(v) for v in g.vertices]
    if not all(ext.x_min <= x <= ext.x_max and ext.y_min <= y <= ext.y_max for x, y in new_verts):
        return sample

    new_edges = []
    for e in g.edges:
        mx, my = xform(e.mid)
        new_edges.append((e.src, e.tgt, (_clamp(mx, ext.x_min, ext.x_max), _clamp(my, ext.y_min, ext.y_max))))
    new_graph = LaneGraph.build(new_verts, new_edges, ext)
    raster = rasterize(new_graph, cfg, rng)
    seq = encode(new_graph, vocab, order, vertex_len, edge_len)
    return SceneSample(raster=raster, graph=new_graph, sequence=seq)


# ---------------------------------------------------------------------------
# Raster files: binary (magic LGRS1, uint16 H W, float32 LE row-major) by
# default; the text form is a "H W" header line then row-major decimals.
# ---------------------------------------------------------------------------


def save_raster(img: np.ndarray, path, binary: bool = True) -> None:
    if img.ndim != 2:
        raise ValueError("raster must be 2-D")
    arr = np.ascontiguousarray(img, dtype="<f4")
    if binary:
        with open(path, "wb") as f:
            f.write(_RASTER_MAGIC)
            f.write(struct.pack("<HH", arr.shape[0], arr.shape[1]))
            f.write(arr.tobytes())
    else:
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"{arr.shape[0]} {arr.shape[1]}\n")
            for row in arr:
                f.write(" ".join(f"{v:.8g}" for v in row) + "\n")


def load_raster(path) -> np.ndarray:
    with open(path, "rb") as f:
        head = f.read(len(_RASTER_MAGIC))
        if head == _RASTER_MAGIC:
            h, w = struct.unpack("<HH", f.read(4))
            data = np.frombuffer(f.read(4 * h * w), dtype="<f4")
            return data.reshape(h, w).copy()
    text = open(path, "r", encoding="utf-8").read().split()
    h, w = int(text[0]), int(text[1])
    vals = np.asarray([float(v) for v in text[2 : 2 + h * w]], dtype=np.float32)
    return vals.reshape(h, w)


def scene_rng(seed: int, index: int) -> np.random.Generator:
    """Independent deterministic stream for one scene of a corpus."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


def write_corpus(
    out_dir,
    cfg: GenConfig,
    vocab: VocabSpec,
    order: SerializationOrder,
    vertex_len: int,
    edge_len: int,
    binary_raster: bool = True,
) -> list[str]:
    """Generate cfg.num_scenes samples and write the corpus directory.

    Every sample is validated and encode-checked before writing; scene ids
    are zero-padded indices. Returns the id list.
    """
    scenes = os.path.join(out_dir, "scenes")
    os.makedirs(scenes, exist_ok=True)
    ids: list[str] = []
    for i in range(cfg.num_scenes):
        rng = scene_rng(cfg.seed, i)
        g = generate_graph(cfg, rng)
        res = validate(g)
        if not res.ok:
            raise RuntimeError(f"generated scene {i} invalid: {res.violations}")
        encode(g, vocab, order, vertex_len, edge_len)  # capacity check
        img = rasterize(g, cfg, rng)
        sid = f"{i:05d}"
        save_graph(g, os.path.join(scenes, sid + ".graph"))
        save_raster(img, os.path.join(scenes, sid + ".raster"), binary=binary_raster)
        ids.append(sid)

    with open(os.path.join(out_dir, "manifest"), "w", encoding="utf-8") as f:
        f.write("laneseq-corpus v1\n")
        for k, v in asdict(cfg).items():
            f.write(f"{k}={v}\n")
        f.write(f"order={order.kind.value}\n")
        if order.seed is not None:
            f.write(f"order_seed={order.seed}\n")
        f.write(f"num_bins={vocab.num_bins}\n")
        f.write(f"max_vertices={vocab.max_vertices}\n")
        f.write(f"vertex_len={vertex_len}\n")
        f.write(f"edge_len={edge_len}\n")
        f.write("ids\n")
        for sid in ids:
            f.write(sid + "\n")
    return ids


def read_manifest(corpus_dir) -> dict:
    path = os.path.join(corpus_dir, "manifest")
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln.rstrip("\n") for ln in f]
    if not lines or not lines[0].startswith("laneseq-corpus"):
        raise ValueError(f"{path}: not a corpus manifest")
    info: dict = {}
    ids: list[str] = []
    in_ids = False
    for ln in lines[1:]:
        if ln == "ids":
            in_ids = True
            continue
        if in_ids:
            if ln:
                ids.append(ln)
        elif "=" in ln:
            k, v = ln.split("=", 1)
            info[k] = v
    info["ids"] = ids
    return info


def load_scene(corpus_dir, scene_id: str) -> tuple[LaneGraph, np.ndarray]:
    scenes = os.path.join(corpus_dir, "scenes")
    g = load_graph(os.path.join(scenes, scene_id + ".graph"))
    img = load_raster(os.path.join(scenes, scene_id + ".raster"))
    return g, img
