"""Autoregressive generation: nucleus sampling, classifier-free guidance over
the edge segment, optional grammar masking, and sequence-to-graph decoding.

Generation runs in two phases. Phase 1 samples the vertex segment from the
conditioned stream alone. Phase 2 keeps two streams with a shared sampled
history: the conditioned stream saw the generated vertex tokens, the
unconditioned stream saw MASK in their place; their logits are combined as
uncond + alpha_c * (cond - uncond) before each sampling step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import torch

from .codec import DecodeDiagnostics, TokenSequence, VocabSpec, decode
from .graph import BevExtent, DEFAULT_EXTENT, LaneGraph, disjoint_union
from .model import LaneSeqDecoder


@dataclass(frozen=True)
class SamplerConfig:
    alpha_c: float = 4.0
    nucleus_p: float = 0.95
    temperature: float = 1.0
    seed: int = 0
    grammar_mask: bool = True
    greedy: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.nucleus_p <= 1.0:
            raise ValueError("nucleus_p must lie in (0, 1]")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if not math.isfinite(self.alpha_c) or self.alpha_c < 0:
            raise ValueError("alpha_c must be finite and >= 0")


def nucleus_sample(
    logits: torch.Tensor,
    p: float,
    temperature: float = 1.0,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Top-p sampling. Accepts (V,) or (B, V) logits and returns () or (B,)
    token ids.

    Probabilities are sorted descending with ties broken by ascending token
    id; the minimal prefix whose cumulative mass reaches p is kept and
    renormalized. Cumulative sums run in float64 so that p = 1 keeps every
    token with nonzero mass.
    """
    single = logits.dim() == 1
    x = logits.unsqueeze(0) if single else logits
    probs = torch.softmax(x.double() / temperature, dim=-1)
    sorted_probs, sorted_ids = torch.sort(probs, dim=-1, descending=True, stable=True)
    cum = sorted_probs.cumsum(dim=-1)
    keep = (cum - sorted_probs) < p  # mass strictly before this entry is still short of p
    kept = sorted_probs * keep
    kept = kept / kept.sum(dim=-1, keepdim=True)
    pick = torch.multinomial(kept, 1, generator=generator)
    tok = sorted_ids.gather(-1, pick).squeeze(-1)
    return tok[0] if single else tok


def cfg_logits(cond: torch.Tensor, uncond: torch.Tensor, alpha_c: float) -> torch.Tensor:
    """uncond + alpha_c * (cond - uncond), with the alpha 0 and 1 endpoints
    returned exactly so they are bitwise identities, not float approximations."""
    if cond.shape != uncond.shape:
        raise ValueError("cond and uncond logits must have equal shapes")
    if alpha_c == 1.0:
        return cond
    if alpha_c == 0.0:
        return uncond
    return uncond + alpha_c * (cond - uncond)


class GrammarState:
    """Tracks which tokens are structurally legal at the next position of one
    generated sequence, mirroring the codec's layout rules.

    Vertex phase: coordinate pairs, EOV only on a pair boundary, EOV forced
    at capacity. Edge phase: triples of (child index, mid x, mid y) per
    parent sub-sequence; candidate children must reference generated vertices
    and must not create a self-loop, a duplicate edge, or a cycle; SPLIT
    closes the current parent; EOE is forced once every parent is closed.
    Capacity is tracked so the closing tokens always fit, which makes masked
    generations parse with zero diagnostics.
    """

    def __init__(self, vocab: VocabSpec, vertex_len: int, edge_len: int):
        self.vocab = vocab
        self.vertex_len = vertex_len
        self.edge_len = edge_len
        self.coords = 0
        self.eov_done = False
        self.max_coords = 2 * min(vocab.max_vertices, (vertex_len - 1) // 2)
        self.n = 0
        self.splits = 0
        self.triple_pos = 0
        self.eoe_done = False
        self.edge_used = 0
        self.children: list[set[int]] = []
        self.succ: list[set[int]] = []

    def enter_edge_phase(self) -> None:
        self.n = self.coords // 2
        self.children = [set() for _ in range(self.n)]
        self.succ = [set() for _ in range(self.n)]

    # -- vertex phase ------------------------------------------------------

    def vertex_mask(self) -> torch.Tensor:
        v = self.vocab
        mask = torch.zeros(v.vocab_size, dtype=torch.bool)
        if self.eov_done:
            mask[v.NA] = True
            return mask
        if self.coords >= self.max_coords:
            mask[v.EOV] = True
            return mask
        mask[v.vertex_coord_base : v.vertex_coord_base + v.num_bins] = True
        if self.coords % 2 == 0:
            mask[v.EOV] = True
        return mask

    def advance_vertex(self, token: int) -> None:
        if token == self.vocab.EOV:
            self.eov_done = True
        elif self.vocab.is_vertex_coord(token):
            self.coords += 1
        # any other token (possible only with the mask off) changes nothing

    # -- edge phase --------------------------------------------------------

    def _would_cycle(self, parent: int, child: int) -> bool:
        # adding parent -> child closes a cycle iff parent is reachable from child
        stack = [child]
        seen = {child}
        while stack:
            u = stack.pop()
            if u == parent:
                return True
            for w in self.succ[u]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return False

    def edge_mask(self) -> torch.Tensor:
        v = self.vocab
        mask = torch.zeros(v.vocab_size, dtype=torch.bool)
        if self.eoe_done:
            mask[v.NA] = True
            return mask
        if self.triple_pos in (1, 2):
            mask[v.mid_coord_base : v.mid_coord_base + v.num_bins] = True
            return mask
        if self.splits >= self.n:
            mask[v.EOE] = True
            return mask
        remaining = self.edge_len - self.edge_used
        mask[v.SPLIT] = True
        # a new triple costs 3 slots and must leave room for the remaining
        # SPLITs plus EOE
        if remaining >= 3 + (self.n - self.splits) + 1:
            parent = self.splits
            for child in range(self.n):
                if child == parent or child in self.children[parent]:
                    continue
                if self._would_cycle(parent, child):
                    continue
                mask[v.index_base + child] = True
        return mask

    def advance_edge(self, token: int) -> None:
        v = self.vocab
        self.edge_used += 1
        if self.eoe_done:
            return
        if self.triple_pos in (1, 2):
            self.triple_pos = (self.triple_pos + 1) % 3
            return
        if token == v.EOE:
            self.eoe_done = True
        elif token == v.SPLIT:
            self.splits += 1
        elif v.is_index(token):
            child = token - v.index_base
            parent = self.splits
            if parent < self.n and child < self.n:
                self.children[parent].add(child)
                self.succ[parent].add(child)
            self.triple_pos = 1


@dataclass
class GenerationResult:
    sequence: TokenSequence
    graph: LaneGraph
    diagnostics: DecodeDiagnostics


def _sample(logits: torch.Tensor, cfg: SamplerConfig, gen: torch.Generator) -> torch.Tensor:
    if cfg.greedy:
        return logits.argmax(dim=-1)
    return nucleus_sample(logits, cfg.nucleus_p, cfg.temperature, gen)


def _force_na(logits: torch.Tensor, done: list[bool], na: int) -> torch.Tensor:
    """With the grammar mask off, rows that already sampled their terminator
    still need padding: force NA for those rows only."""
    if not any(done):
        return logits
    out = logits.clone()
    rows = torch.tensor(done)
    out[rows] = float("-inf")
    out[rows, na] = 0.0
    return out


def generate_batch(
    model: LaneSeqDecoder,
    rasters: torch.Tensor,
    cfg: SamplerConfig,
    extent: BevExtent = DEFAULT_EXTENT,
    mode: str = "cfg",
) -> list[GenerationResult]:
    """Generate one sequence per raster row and decode each into a graph.

    mode selects the phase-2 logit source: "cfg" combines both streams with
    alpha_c, "cond" uses the conditioned stream alone, "uncond" the masked
    stream alone. The audit modes draw from the random generator in exactly
    the same order as "cfg", so fixed seeds are comparable across modes.
    """
    if mode not in ("cfg", "cond", "uncond"):
        raise ValueError(f"unknown mode {mode!r}")
    vocab = model.vocab
    vlen, elen = model.cfg.vertex_len, model.cfg.edge_len
    if rasters.dim() == 2:
        rasters = rasters.unsqueeze(0)
    b = rasters.shape[0]

    was_training = model.training
    model.eval()
    gen = torch.Generator().manual_seed(cfg.seed)

    with torch.no_grad():
        ctx = model.embed_context(rasters)
        cond_cache = model.init_cache(ctx)
        uncond_cache = model.init_cache(ctx) if mode != "cond" else None

        tokens = torch.full((b, 1 + vlen + elen), vocab.NA, dtype=torch.long)
        tokens[:, 0] = vocab.START
        states = [GrammarState(vocab, vlen, elen) for _ in range(b)]
        mask_col = torch.full((b,), vocab.MASK, dtype=torch.long)

        # phase 1: vertex segment, conditioned stream only; the unconditioned
        # cache is fed START + MASKs in lockstep so both prefixes stay aligned
        cur_c = tokens[:, 0]
        cur_u = tokens[:, 0]
        for k in range(vlen):
            logits = model.forward_step(cur_c, cond_cache)
            if uncond_cache is not None:
                model.forward_step(cur_u, uncond_cache)
            if cfg.grammar_mask:
                allow = torch.stack([s.vertex_mask() for s in states])
                logits = logits.masked_fill(~allow, float("-inf"))
            else:
                logits = _force_na(logits, [s.eov_done for s in states], vocab.NA)
            nxt = _sample(logits, cfg, gen)
            for i, s in enumerate(states):
                s.advance_vertex(int(nxt[i]))
            tokens[:, 1 + k] = nxt
            cur_c = nxt
            cur_u = mask_col

        for s in states:
            s.enter_edge_phase()

        # phase 2: edge segment, both streams share the sampled history
        for k in range(elen):
            lc = model.forward_step(cur_c, cond_cache) if mode != "uncond" else None
            lu = model.forward_step(cur_u, uncond_cache) if uncond_cache is not None else None
            if mode == "cfg":
                logits = cfg_logits(lc, lu, cfg.alpha_c)
            elif mode == "cond":
                logits = lc
            else:
                logits = lu
            if cfg.grammar_mask:
                allow = torch.stack([s.edge_mask() for s in states])
                logits = logits.masked_fill(~allow, float("-inf"))
            else:
                logits = _force_na(logits, [s.eoe_done for s in states], vocab.NA)
            nxt = _sample(logits, cfg, gen)
            for i, s in enumerate(states):
                s.advance_edge(int(nxt[i]))
            tokens[:, 1 + vlen + k] = nxt
            cur_c = nxt
            cur_u = nxt

    if was_training:
        model.train()

    out = []
    for i in range(b):
        seq = TokenSequence(tuple(int(t) for t in tokens[i]), vlen, elen)
        graph, diag = decode(seq, vocab, extent)
        out.append(GenerationResult(seq, graph, diag))
    return out


def generate(
    model: LaneSeqDecoder,
    raster: torch.Tensor,
    cfg: SamplerConfig,
    extent: BevExtent = DEFAULT_EXTENT,
) -> GenerationResult:
    """Single-scene convenience wrapper around generate_batch."""
    return generate_batch(model, raster, cfg, extent)[0]


@dataclass
class UnionResult:
    graph: LaneGraph
    samples: tuple[GenerationResult, ...]


def generate_union(
    model: LaneSeqDecoder,
    rasters: torch.Tensor,
    cfg: SamplerConfig,
    extent: BevExtent = DEFAULT_EXTENT,
    num_samples: int = 3,
    mode: str = "cfg",
) -> list[UnionResult]:
    """Multi-hypothesis decoding: sample num_samples sequences per raster
    (seeds cfg.seed, cfg.seed + 1, ...) and merge the decoded graphs of each
    raster into one prediction via their disjoint union.

    A single pass tends to draw a few centerlines just outside the matching
    threshold; independent resamples miss different ones, so the union trades
    output compactness for recall-oriented scores (detection, connectivity
    recall). Downstream consumers that need one curve per lane should keep
    num_samples at 1.
    """
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    runs = [
        generate_batch(model, rasters, replace(cfg, seed=cfg.seed + i), extent, mode)
        for i in range(num_samples)
    ]
    return [
        UnionResult(disjoint_union([r.graph for r in row]), tuple(row))
        for row in zip(*runs)
    ]


# ---------------------------------------------------------------------------
# SVG overlay of predicted vs ground-truth centerlines.
# ---------------------------------------------------------------------------


def render_overlay_svg(pred: LaneGraph, gt: LaneGraph, path, scale: float = 8.0) -> None:
    """Write an SVG with ground truth in solid blue and the prediction in
    dashed red. Quadratic Bezier edges map directly onto SVG Q segments."""
    ext = gt.extent
    w = (ext.x_max - ext.x_min) * scale
    h = (ext.y_max - ext.y_min) * scale

    def sx(x: float) -> float:
        return (x - ext.x_min) * scale

    def sy(y: float) -> float:
        return (ext.y_max - y) * scale  # flip so +y points up

    def paths(g: LaneGraph, style: str) -> list[str]:
        out = []
        for e in g.edges:
            p0, p2 = g.vertices[e.src], g.vertices[e.tgt]
            d = (
                f"M {sx(p0.x):.2f} {sy(p0.y):.2f} "
                f"Q {sx(e.mid.x):.2f} {sy(e.mid.y):.2f} {sx(p2.x):.2f} {sy(p2.y):.2f}"
            )
            out.append(f'<path d="{d}" fill="none" {style}/>')
        for v in g.vertices:
            out.append(f'<circle cx="{sx(v.x):.2f}" cy="{sy(v.y):.2f}" r="2.5" fill="none" {style}/>')
        return out

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0f}" height="{h:.0f}" '
        f'viewBox="0 0 {w:.0f} {h:.0f}">',
        f'<rect width="{w:.0f}" height="{h:.0f}" fill="white"/>',
    ]
    lines += paths(gt, 'stroke="#1f4e9c" stroke-width="2"')
    lines += paths(pred, 'stroke="#c22" stroke-width="2" stroke-dasharray="6 4"')
    lines.append("</svg>")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
