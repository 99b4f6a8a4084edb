"""Lane-graph data model: a DAG of 2-D junction vertices joined by quadratic
Bezier centerline edges, plus geometric sampling and structural validation.

Coordinates are meters in a fixed bird's-eye-view (BEV) frame. Every operation
here is a pure function over immutable inputs.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence


class CycleError(ValueError):
    """Raised when an operation that requires a DAG encounters a cycle."""


@dataclass(frozen=True)
class Vec2:
    """A 2-D point in the BEV frame (meters)."""

    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite coordinate ({self.x}, {self.y})")


@dataclass(frozen=True)
class BevExtent:
    """Axis-aligned BEV region plus the centerline sampling step."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    sample_interval: float

    def __post_init__(self) -> None:
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError("extent must have positive width and height")
        if not self.sample_interval > 0:
            raise ValueError("sample_interval must be positive")

    def contains(self, p: Vec2) -> bool:
        return (
            self.x_min <= p.x <= self.x_max and self.y_min <= p.y <= self.y_max
        )


#: 96 m x 64 m region around the ego vehicle, sampled every 0.5 m.
DEFAULT_EXTENT = BevExtent(-48.0, 48.0, -32.0, 32.0, 0.5)


@dataclass(frozen=True)
class Edge:
    """Directed centerline: source vertex index, target vertex index, and the
    middle Bezier control point. End control points live on the vertices."""

    src: int
    tgt: int
    mid: Vec2

    def __post_init__(self) -> None:
        if self.src == self.tgt:
            raise ValueError(f"edge may not be a self-loop (vertex {self.src})")


@dataclass(frozen=True)
class LaneGraph:
    """Directed acyclic lane graph over a fixed BEV extent."""

    vertices: tuple[Vec2, ...]
    edges: tuple[Edge, ...]
    extent: BevExtent

    @classmethod
    def build(
        cls,
        vertices: Iterable[Sequence[float] | Vec2],
        edges: Iterable[Sequence | Edge],
        extent: BevExtent = DEFAULT_EXTENT,
    ) -> "LaneGraph":
        """Construct from plain tuples: vertices ``(x, y)`` and edges
        ``(src, tgt, (mx, my))``. Does not validate; see :func:`validate`."""
        vs = tuple(v if isinstance(v, Vec2) else Vec2(float(v[0]), float(v[1])) for v in vertices)
        es = []
        for e in edges:
            if isinstance(e, Edge):
                es.append(e)
            else:
                src, tgt, mid = e
                mid = mid if isinstance(mid, Vec2) else Vec2(float(mid[0]), float(mid[1]))
                es.append(Edge(int(src), int(tgt), mid))
        return cls(vs, tuple(es), extent)

    def out_edges(self, v: int) -> list[Edge]:
        return [e for e in self.edges if e.src == v]


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    violations: tuple[str, ...]


def validate(g: LaneGraph) -> ValidationResult:
    """Check the structural invariants of a lane graph.

    Violations are data, not faults: a list of human-readable strings, each
    prefixed with its kind (``cycle``, ``index out of range``,
    ``out of extent``, ``duplicate edge``).
    """
    violations: list[str] = []
    n = len(g.vertices)

    for i, v in enumerate(g.vertices):
        if not g.extent.contains(v):
            violations.append(f"out of extent: vertex {i} at ({v.x}, {v.y})")

    seen: set[tuple[int, int]] = set()
    index_ok = True
    for e in g.edges:
        if not (0 <= e.src < n and 0 <= e.tgt < n):
            violations.append(f"index out of range: edge {e.src}->{e.tgt} with {n} vertices")
            index_ok = False
            continue
        if (e.src, e.tgt) in seen:
            violations.append(f"duplicate edge: {e.src}->{e.tgt}")
        seen.add((e.src, e.tgt))

    if index_ok:
        try:
            topological_order(g)
        except CycleError:
            violations.append("cycle: graph is not acyclic")

    return ValidationResult(ok=not violations, violations=tuple(violations))


def topological_order(g: LaneGraph) -> list[int]:
    """Kahn's algorithm with FIFO tie-breaking by ascending vertex index.

    Raises :class:`CycleError` if the graph contains a cycle.
    """
    n = len(g.vertices)
    indeg = [0] * n
    succ: list[list[int]] = [[] for _ in range(n)]
    for e in g.edges:
        if not (0 <= e.src < n and 0 <= e.tgt < n):
            raise ValueError(f"edge {e.src}->{e.tgt} references a missing vertex")
        succ[e.src].append(e.tgt)
        indeg[e.tgt] += 1
    queue = deque(i for i in range(n) if indeg[i] == 0)
    order: list[int] = []
    while queue:
        v = queue.popleft()
        order.append(v)
        for w in succ[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                queue.append(w)
    if len(order) != n:
        raise CycleError("graph contains a cycle")
    return order


def disjoint_union(graphs: Sequence[LaneGraph]) -> LaneGraph:
    """Disjoint union of several graphs over one shared extent.

    Vertex indices of each input are offset past the previous inputs, so
    every graph keeps its own structure and no cross-graph edges appear.
    The union of acyclic graphs with disjoint vertices is again acyclic.
    """
    if not graphs:
        raise ValueError("disjoint_union needs at least one graph")
    ext = graphs[0].extent
    for g in graphs[1:]:
        if g.extent != ext:
            raise ValueError("disjoint_union requires a common extent")
    verts: list[Vec2] = []
    edges: list[Edge] = []
    for g in graphs:
        off = len(verts)
        verts.extend(g.vertices)
        edges.extend(Edge(e.src + off, e.tgt + off, e.mid) for e in g.edges)
    return LaneGraph(tuple(verts), tuple(edges), ext)


def bezier_point(p0: Vec2, p1: Vec2, p2: Vec2, t: float) -> Vec2:
    """Quadratic Bezier B(t) = (1-t)^2 p0 + 2t(1-t) p1 + t^2 p2, t in [0, 1].

    B(0) == p0 and B(1) == p2 exactly.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0, 1]")
    u = 1.0 - t
    a, b, c = u * u, 2.0 * t * u, t * t
    return Vec2(a * p0.x + b * p1.x + c * p2.x, a * p0.y + b * p1.y + c * p2.y)


_FLATTEN_TOL = 1e-6  # meters of chord-length error per accepted span
_FLATTEN_MAX_DEPTH = 24


def _flatten(p0: Vec2, p1: Vec2, p2: Vec2) -> tuple[list[float], list[float]]:
    """Adaptive polyline refinement of the curve: bisect each span until the
    chord-length error drops below tolerance. Returns the breakpoint
    parameters and cumulative arc lengths at those parameters."""

    def dist(a: Vec2, b: Vec2) -> float:
        return math.hypot(a.x - b.x, a.y - b.y)

    ts: list[float] = [0.0]
    lens: list[float] = [0.0]
    # stack of (t_lo, point_lo, t_hi, point_hi, depth), processed left to right
    stack = [(0.0, p0, 1.0, p2, 0)]
    while stack:
        t_lo, a, t_hi, b, depth = stack.pop()
        t_mid = 0.5 * (t_lo + t_hi)
        m = bezier_point(p0, p1, p2, t_mid)
        chord = dist(a, b)
        refined = dist(a, m) + dist(m, b)
        if refined - chord < _FLATTEN_TOL or depth >= _FLATTEN_MAX_DEPTH:
            ts.append(t_hi)
            lens.append(lens[-1] + refined)
        else:
            # push right half first so the left half is processed next
            stack.append((t_mid, m, t_hi, b, depth + 1))
            stack.append((t_lo, a, t_mid, m, depth + 1))
    return ts, lens


def arc_length(p0: Vec2, p1: Vec2, p2: Vec2) -> float:
    """Arc length of the quadratic Bezier through the three control points."""
    return _flatten(p0, p1, p2)[1][-1]


def sample_edge(g: LaneGraph, e: Edge) -> list[Vec2]:
    """Sample the edge's centerline at uniform arc-length steps no larger than
    ``extent.sample_interval``, always including both endpoints.

    Returns at least 2 points; endpoints are the exact vertex coordinates.
    """
    p0, p1, p2 = g.vertices[e.src], e.mid, g.vertices[e.tgt]
    ts, lens = _flatten(p0, p1, p2)
    total = lens[-1]
    if total <= 0.0:
        return [p0, p2]
    n_gaps = max(1, math.ceil(total / g.extent.sample_interval - 1e-12))
    points = [p0]
    for k in range(1, n_gaps):
        s = total * k / n_gaps
        # invert arc length -> parameter on the refined polyline
        t = _interp(lens, ts, s)
        points.append(bezier_point(p0, p1, p2, t))
    points.append(p2)
    return points


def _interp(xs: list[float], ys: list[float], x: float) -> float:
    """Piecewise-linear interpolation; xs non-decreasing."""
    import bisect

    i = bisect.bisect_right(xs, x)
    if i <= 0:
        return ys[0]
    if i >= len(xs):
        return ys[-1]
    x0, x1 = xs[i - 1], xs[i]
    if x1 == x0:
        return ys[i]
    w = (x - x0) / (x1 - x0)
    return ys[i - 1] + w * (ys[i] - ys[i - 1])


# ---------------------------------------------------------------------------
# Graph file format: JSON with fields extent / vertices / edges, meters.
# ---------------------------------------------------------------------------


def graph_to_dict(g: LaneGraph) -> dict:
    return {
        "extent": {
            "x_min": g.extent.x_min,
            "x_max": g.extent.x_max,
            "y_min": g.extent.y_min,
            "y_max": g.extent.y_max,
            "sample_interval": g.extent.sample_interval,
        },
        "vertices": [[v.x, v.y] for v in g.vertices],
        "edges": [{"src": e.src, "tgt": e.tgt, "mid": [e.mid.x, e.mid.y]} for e in g.edges],
    }


def graph_from_dict(d: dict) -> LaneGraph:
    ext = d["extent"]
    extent = BevExtent(
        float(ext["x_min"]),
        float(ext["x_max"]),
        float(ext["y_min"]),
        float(ext["y_max"]),
        float(ext["sample_interval"]),
    )
    return LaneGraph.build(d["vertices"], [(e["src"], e["tgt"], e["mid"]) for e in d["edges"]], extent)


def save_graph(g: LaneGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(graph_to_dict(g), f)
        f.write("\n")


def load_graph(path) -> LaneGraph:
    with open(path, "r", encoding="utf-8") as f:
        return graph_from_dict(json.load(f))
