"""Graph <-> token-sequence codec.

A lane graph is flattened into one discrete sequence over a shared vocabulary:

    [START] v0x v0y v1x v1y ... [EOV] [NA pad]          (vertex segment)
    idx mx my idx mx my [SPLIT] ... [SPLIT] [EOE] [NA pad]   (edge segment)

The vertex segment lists quantized coordinates in a chosen serialization
order. The edge segment holds one sub-sequence per vertex, in the same order:
each outgoing edge contributes a triple (child position in the vertex order,
quantized midpoint x, quantized midpoint y), and every sub-sequence, the last
one included, is terminated by SPLIT. Coordinates, midpoints and child indices
live in disjoint id ranges so a token's range identifies its role.
"""

from __future__ import annotations

import enum
import math
import random
from dataclasses import dataclass, field
from typing import Sequence

from .graph import BevExtent, Edge, LaneGraph, CycleError, Vec2, topological_order


class CapacityError(ValueError):
    """Graph does not fit the configured vocabulary or segment lengths."""


@dataclass(frozen=True)
class VocabSpec:
    """Layout of the shared token vocabulary.

    Special ids come first, then the vertex-coordinate bins, the midpoint
    bins, and finally one id per addressable child index.
    """

    num_bins: int
    max_vertices: int
    START: int
    EOV: int
    SPLIT: int
    EOE: int
    NA: int
    MASK: int
    vertex_coord_base: int
    mid_coord_base: int
    index_base: int
    vocab_size: int

    @classmethod
    def create(cls, num_bins: int = 192, max_vertices: int = 32) -> "VocabSpec":
        if num_bins < 1 or max_vertices < 1:
            raise ValueError("num_bins and max_vertices must be positive")
        base = 6
        return cls(
            num_bins=num_bins,
            max_vertices=max_vertices,
            START=0,
            EOV=1,
            SPLIT=2,
            EOE=3,
            NA=4,
            MASK=5,
            vertex_coord_base=base,
            mid_coord_base=base + num_bins,
            index_base=base + 2 * num_bins,
            vocab_size=base + 2 * num_bins + max_vertices,
        )

    def is_vertex_coord(self, t: int) -> bool:
        return self.vertex_coord_base <= t < self.vertex_coord_base + self.num_bins

    def is_mid_coord(self, t: int) -> bool:
        return self.mid_coord_base <= t < self.mid_coord_base + self.num_bins

    def is_index(self, t: int) -> bool:
        return self.index_base <= t < self.index_base + self.max_vertices


#: Default padded segment lengths. 48 vertex slots hold up to 23 vertices
#: (2 coords each plus EOV); 96 edge slots hold the triples, per-vertex
#: SPLITs and EOE of any graph the synthetic generator produces.
DEFAULT_VERTEX_LEN = 48
DEFAULT_EDGE_LEN = 96


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[int, ...]
    vertex_len: int
    edge_len: int

    def __post_init__(self) -> None:
        expect = 1 + self.vertex_len + self.edge_len
        if len(self.tokens) != expect:
            raise ValueError(
                f"sequence length {len(self.tokens)} != 1 + {self.vertex_len} + {self.edge_len}"
            )


class OrderKind(enum.Enum):
    DFS = "dfs"
    BFS = "bfs"
    COORD_XY = "coord_xy"
    RANDOM = "random"


@dataclass(frozen=True)
class SerializationOrder:
    kind: OrderKind
    seed: int | None = None

    def __post_init__(self) -> None:
        if (self.kind is OrderKind.RANDOM) != (self.seed is not None):
            raise ValueError("seed must be given exactly when kind is RANDOM")

    @classmethod
    def parse(cls, text: str, seed: int | None = None) -> "SerializationOrder":
        kind = OrderKind(text.lower())
        if kind is OrderKind.RANDOM and seed is None:
            seed = 0
        return cls(kind, seed if kind is OrderKind.RANDOM else None)


def quantize(value: float, lo: float, hi: float, num_bins: int) -> int:
    """Map a coordinate to its bin: floor((clamp(v) - lo)/(hi - lo) * num_bins),
    clamped into [0, num_bins - 1] so hi itself lands in the last bin."""
    if not math.isfinite(value):
        raise ValueError(f"non-finite value {value}")
    if not (lo < hi and num_bins >= 1):
        raise ValueError("need lo < hi and num_bins >= 1")
    v = min(max(value, lo), hi)
    b = int(math.floor((v - lo) / (hi - lo) * num_bins))
    return min(max(b, 0), num_bins - 1)


def dequantize(bin_index: int, lo: float, hi: float, num_bins: int) -> float:
    """Bin center: lo + (bin + 0.5) * (hi - lo) / num_bins."""
    if not 0 <= bin_index < num_bins:
        raise ValueError(f"bin {bin_index} outside [0, {num_bins})")
    return lo + (bin_index + 0.5) * (hi - lo) / num_bins


def _coord_key(g: LaneGraph):
    """Sort key: ascending (x, y), vertex index as the final tie-break."""

    def key(i: int):
        v = g.vertices[i]
        return (v.x, v.y, i)

    return key


def order_vertices(g: LaneGraph, order: SerializationOrder) -> list[int]:
    """Permutation of vertex indices under the given strategy.

    DFS and BFS start from the in-degree-0 roots in ascending (x, y) order and
    visit children in ascending (x, y) order; both raise CycleError on cyclic
    input. COORD_XY sorts all vertices by (x, y). RANDOM is a seeded shuffle.
    """
    n = len(g.vertices)
    key = _coord_key(g)

    if order.kind is OrderKind.COORD_XY:
        return sorted(range(n), key=key)

    if order.kind is OrderKind.RANDOM:
        perm = list(range(n))
        random.Random(order.seed).shuffle(perm)
        return perm

    # Traversal orders need a DAG; this also catches roots-free cyclic input.
    topological_order(g)

    children: list[list[int]] = [[] for _ in range(n)]
    indeg = [0] * n
    for e in g.edges:
        children[e.src].append(e.tgt)
        indeg[e.tgt] += 1
    for c in children:
        c.sort(key=key)
    roots = sorted((i for i in range(n) if indeg[i] == 0), key=key)

    visited = [False] * n
    out: list[int] = []

    if order.kind is OrderKind.DFS:
        for r in roots:
            if visited[r]:
                continue
            stack = [r]
            visited[r] = True
            while stack:
                v = stack.pop()
                out.append(v)
                # push in reverse so the smallest child is expanded first
                for c in reversed(children[v]):
                    if not visited[c]:
                        visited[c] = True
                        stack.append(c)
        return out

    if order.kind is OrderKind.BFS:
        from collections import deque

        queue = deque()
        for r in roots:
            if not visited[r]:
                visited[r] = True
                queue.append(r)
        while queue:
            v = queue.popleft()
            out.append(v)
            for c in children[v]:
                if not visited[c]:
                    visited[c] = True
                    queue.append(c)
        return out

    raise ValueError(f"unknown order kind {order.kind}")


def encode(
    g: LaneGraph,
    vocab: VocabSpec,
    order: SerializationOrder,
    vertex_len: int = DEFAULT_VERTEX_LEN,
    edge_len: int = DEFAULT_EDGE_LEN,
) -> TokenSequence:
    """Flatten a graph into its padded token sequence.

    Raises CapacityError when the graph exceeds max_vertices or either
    segment length, and CycleError for cyclic input under DFS/BFS.
    """
    n = len(g.vertices)
    if n > vocab.max_vertices:
        raise CapacityError(f"{n} vertices exceed max_vertices={vocab.max_vertices}")
    if 2 * n + 1 > vertex_len:
        raise CapacityError(f"vertex segment needs {2 * n + 1} slots, have {vertex_len}")
    need_edge = 3 * len(g.edges) + n + 1
    if need_edge > edge_len:
        raise CapacityError(f"edge segment needs {need_edge} slots, have {edge_len}")

    perm = order_vertices(g, order)
    pos_of = {orig: pos for pos, orig in enumerate(perm)}
    ext = g.extent

    tokens: list[int] = [vocab.START]
    for orig in perm:
        v = g.vertices[orig]
        tokens.append(vocab.vertex_coord_base + quantize(v.x, ext.x_min, ext.x_max, vocab.num_bins))
        tokens.append(vocab.vertex_coord_base + quantize(v.y, ext.y_min, ext.y_max, vocab.num_bins))
    tokens.append(vocab.EOV)
    tokens.extend([vocab.NA] * (1 + vertex_len - len(tokens)))

    out_edges: list[list[Edge]] = [[] for _ in range(n)]
    for e in g.edges:
        out_edges[e.src].append(e)
    for orig in perm:
        for e in sorted(out_edges[orig], key=lambda e: pos_of[e.tgt]):
            tokens.append(vocab.index_base + pos_of[e.tgt])
            tokens.append(vocab.mid_coord_base + quantize(e.mid.x, ext.x_min, ext.x_max, vocab.num_bins))
            tokens.append(vocab.mid_coord_base + quantize(e.mid.y, ext.y_min, ext.y_max, vocab.num_bins))
        tokens.append(vocab.SPLIT)
    tokens.append(vocab.EOE)
    tokens.extend([vocab.NA] * (1 + vertex_len + edge_len - len(tokens)))

    return TokenSequence(tuple(tokens), vertex_len, edge_len)


@dataclass
class DecodeDiagnostics:
    """Counts of best-effort recovery actions taken while decoding."""

    dangling_coord: int = 0
    vertex_range_violations: int = 0
    aborted_triples: int = 0
    bad_index: int = 0
    extra_subseq: int = 0
    missing_eov: int = 0
    missing_eoe: int = 0
    dropped_self_loop: int = 0
    dropped_duplicate: int = 0
    dropped_cycle: int = 0

    def total(self) -> int:
        return sum(vars(self).values())

    def clean(self) -> bool:
        return self.total() == 0


def _creates_cycle(n: int, succ: list[list[int]], src: int, tgt: int) -> bool:
    """Would adding src->tgt close a cycle? True iff src is reachable from tgt."""
    if src == tgt:
        return True
    seen = [False] * n
    stack = [tgt]
    seen[tgt] = True
    while stack:
        v = stack.pop()
        if v == src:
            return True
        for w in succ[v]:
            if not seen[w]:
                seen[w] = True
                stack.append(w)
    return False


def decode(
    seq: TokenSequence, vocab: VocabSpec, extent: BevExtent
) -> tuple[LaneGraph, DecodeDiagnostics]:
    """Parse a token sequence back into a lane graph, tolerating malformed
    model output. Recovery never raises; each dropped or repaired construct
    increments a diagnostics counter. The returned graph always satisfies the
    LaneGraph invariants (offending edges are dropped, not kept)."""
    diag = DecodeDiagnostics()
    toks = list(seq.tokens)
    if toks and toks[0] == vocab.START:
        toks = toks[1:]

    # vertex stream: up to the first EOV
    try:
        eov = toks.index(vocab.EOV)
        vstream, rest = toks[:eov], toks[eov + 1 :]
    except ValueError:
        diag.missing_eov = 1
        vstream, rest = toks, []

    coords: list[int] = []
    for t in vstream:
        if vocab.is_vertex_coord(t):
            coords.append(t - vocab.vertex_coord_base)
        else:
            diag.vertex_range_violations += 1
    if len(coords) % 2 == 1:
        coords.pop()
        diag.dangling_coord = 1

    vertices = [
        Vec2(
            dequantize(coords[2 * i], extent.x_min, extent.x_max, vocab.num_bins),
            dequantize(coords[2 * i + 1], extent.y_min, extent.y_max, vocab.num_bins),
        )
        for i in range(len(coords) // 2)
    ]
    n = len(vertices)

    # edge stream: skip NA padding after EOV, stop at the first EOE
    i = 0
    while i < len(rest) and rest[i] == vocab.NA:
        i += 1
    try:
        eoe = rest.index(vocab.EOE, i)
        estream = rest[i:eoe]
    except ValueError:
        diag.missing_eoe = 1
        estream = rest[i:]
        while estream and estream[-1] == vocab.NA:
            estream.pop()

    # split into per-parent sub-sequences; an unterminated remainder counts too
    subseqs: list[list[int]] = []
    cur: list[int] = []
    for t in estream:
        if t == vocab.SPLIT:
            subseqs.append(cur)
            cur = []
        else:
            cur.append(t)
    if cur:
        subseqs.append(cur)

    edges: list[Edge] = []
    seen_pairs: set[tuple[int, int]] = set()
    succ: list[list[int]] = [[] for _ in range(n)]
    for parent, sub in enumerate(subseqs):
        if parent >= n:
            if sub:
                diag.extra_subseq += 1
            continue
        j = 0
        while j < len(sub):
            if not vocab.is_index(sub[j]):
                diag.aborted_triples += 1
                while j < len(sub) and not vocab.is_index(sub[j]):
                    j += 1
                continue
            if j + 2 >= len(sub):
                diag.aborted_triples += 1
                break
            t_idx, t_mx, t_my = sub[j], sub[j + 1], sub[j + 2]
            if not (vocab.is_mid_coord(t_mx) and vocab.is_mid_coord(t_my)):
                diag.aborted_triples += 1
                j += 1
                while j < len(sub) and not vocab.is_index(sub[j]):
                    j += 1
                continue
            j += 3
            child = t_idx - vocab.index_base
            if child >= n:
                diag.bad_index += 1
                continue
            if child == parent:
                diag.dropped_self_loop += 1
                continue
            if (parent, child) in seen_pairs:
                diag.dropped_duplicate += 1
                continue
            if _creates_cycle(n, succ, parent, child):
                diag.dropped_cycle += 1
                continue
            mid = Vec2(
                dequantize(t_mx - vocab.mid_coord_base, extent.x_min, extent.x_max, vocab.num_bins),
                dequantize(t_my - vocab.mid_coord_base, extent.y_min, extent.y_max, vocab.num_bins),
            )
            edges.append(Edge(parent, child, mid))
            seen_pairs.add((parent, child))
            succ[parent].append(child)

    return LaneGraph(tuple(vertices), tuple(edges), extent), diag


# ---------------------------------------------------------------------------
# Sequence file format: one header line, one line of space-separated ids.
# ---------------------------------------------------------------------------


def save_sequence(seq: TokenSequence, vocab: VocabSpec, path) -> None:
    header = (
        f"vocab num_bins={vocab.num_bins} max_vertices={vocab.max_vertices} "
        f"vertex_len={seq.vertex_len} edge_len={seq.edge_len}"
    )
    with open(path, "w", encoding="utf-8") as f:
        f.write(header + "\n")
        f.write(" ".join(str(t) for t in seq.tokens) + "\n")


def load_sequence(path) -> tuple[TokenSequence, VocabSpec]:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().split()
        body = f.readline().split()
    if not header or header[0] != "vocab":
        raise ValueError(f"{path}: not a sequence file (missing 'vocab' header)")
    kv = dict(item.split("=", 1) for item in header[1:])
    vocab = VocabSpec.create(int(kv["num_bins"]), int(kv["max_vertices"]))
    seq = TokenSequence(
        tuple(int(t) for t in body), int(kv["vertex_len"]), int(kv["edge_len"])
    )
    return seq, vocab
