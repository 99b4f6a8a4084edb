"""Centerline matching and the three metric families: match-based
precision/recall, detection ratio, and connectivity precision/recall.

Curves are compared through their arc-length sample points (graph-core
sample_edge), so every distance here is a distance between point sets. The
matching rule is deliberately simple and fully documented: each predicted
edge independently picks the ground-truth edge minimizing the symmetric mean
polyline distance, ties broken by lowest ground-truth edge id. Scores are
comparable between runs of this codebase only, not against published
benchmark tables.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import LaneGraph, sample_edge

DEFAULT_THRESHOLD = 1.0  # meters


@dataclass(frozen=True)
class EdgeMatch:
    pred_id: int
    gt_id: int
    distance: float
    matched: bool  # distance <= threshold


@dataclass(frozen=True)
class EvalReport:
    m_precision: float
    m_recall: float
    m_f1: float
    detect_ratio: float
    c_precision: float
    c_recall: float
    c_f1: float
    match: tuple[EdgeMatch, ...]
    threshold: float
    flags: tuple[str, ...]


def edge_point_sets(g: LaneGraph) -> list[np.ndarray]:
    """Sampled centerline of every edge as an (N_i, 2) float array."""
    return [
        np.asarray([(p.x, p.y) for p in sample_edge(g, e)], dtype=np.float64)
        for e in g.edges
    ]


def _min_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """For each point of a, distance to the nearest point of b."""
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    return np.sqrt(d2.min(axis=1))


def symmetric_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric mean polyline distance between two sampled curves."""
    return 0.5 * (_min_dists(a, b).mean() + _min_dists(b, a).mean())


def match_centerlines(
    pred: LaneGraph, gt: LaneGraph, threshold: float = DEFAULT_THRESHOLD
) -> list[EdgeMatch]:
    """Assign every predicted edge to its nearest ground-truth edge.

    The assignment is recorded even when the distance exceeds the threshold;
    the matched flag tells the two cases apart. Empty prediction or empty
    ground truth yields an empty assignment.
    """
    if not pred.edges or not gt.edges:
        return []
    pred_pts = edge_point_sets(pred)
    gt_pts = edge_point_sets(gt)
    out = []
    for i, a in enumerate(pred_pts):
        dists = np.asarray([symmetric_distance(a, b) for b in gt_pts])
        j = int(dists.argmin())  # argmin returns the lowest index on ties
        out.append(EdgeMatch(i, j, float(dists[j]), bool(dists[j] <= threshold)))
    return out


def precision_recall(
    pred: LaneGraph,
    gt: LaneGraph,
    match: list[EdgeMatch],
    threshold: float = DEFAULT_THRESHOLD,
) -> tuple[float, float, float, bool]:
    """Point-level precision/recall over matched pairs only.

    Precision: fraction of matched predictions' sample points lying within
    threshold of their matched GT curve. Recall: over GT curves that received
    at least one match, the fraction of their sample points within threshold
    of the union of their matched predictions. GT curves nobody matched are
    not penalized here (that is what the detection ratio reports). Returns
    (m_p, m_r, m_f, degenerate_flag).
    """
    pairs = [m for m in match if m.matched]
    if not pairs:
        return 0.0, 0.0, 0.0, True
    pred_pts = edge_point_sets(pred)
    gt_pts = edge_point_sets(gt)

    close = 0
    total = 0
    for m in pairs:
        d = _min_dists(pred_pts[m.pred_id], gt_pts[m.gt_id])
        close += int((d <= threshold).sum())
        total += len(d)
    m_p = close / total

    by_gt: dict[int, list[int]] = {}
    for m in pairs:
        by_gt.setdefault(m.gt_id, []).append(m.pred_id)
    close = 0
    total = 0
    for gt_id, pred_ids in by_gt.items():
        union = np.concatenate([pred_pts[i] for i in pred_ids], axis=0)
        d = _min_dists(gt_pts[gt_id], union)
        close += int((d <= threshold).sum())
        total += len(d)
    m_r = close / total

    m_f = _f1(m_p, m_r)
    return m_p, m_r, m_f, False


def detection_ratio(
    pred: LaneGraph,
    gt: LaneGraph,
    match: list[EdgeMatch],
    threshold: float = DEFAULT_THRESHOLD,
) -> float:
    """Fraction of GT edges matched within threshold by at least one
    prediction; defined as 1 when there is no ground truth at all."""
    if not gt.edges:
        return 1.0
    hit = {m.gt_id for m in match if m.matched}
    return len(hit) / len(gt.edges)


def _connections(g: LaneGraph) -> set[tuple[int, int]]:
    """Ordered pairs (a, b) of edge ids where edge a feeds edge b."""
    by_src: dict[int, list[int]] = {}
    for j, e in enumerate(g.edges):
        by_src.setdefault(e.src, []).append(j)
    out = set()
    for i, e in enumerate(g.edges):
        for j in by_src.get(e.tgt, ()):
            out.add((i, j))
    return out


def connectivity(
    pred: LaneGraph, gt: LaneGraph, match: list[EdgeMatch]
) -> tuple[float, float, float, bool]:
    """Compare edge adjacency through the match.

    A predicted connection (a feeds b) counts for precision iff the matched
    images of a and b form a GT connection. Recall is over GT connections
    whose two members were both matched by some prediction, counting each
    distinct recovered GT connection once. Returns (c_p, c_r, c_f, flag);
    the flag is set when either denominator is zero.
    """
    img = {m.pred_id: m.gt_id for m in match if m.matched}
    pred_conns = _connections(pred)
    gt_conns = _connections(gt)

    eligible_pred = [(a, b) for (a, b) in pred_conns if a in img and b in img]
    tp_pairs = {(img[a], img[b]) for (a, b) in eligible_pred if (img[a], img[b]) in gt_conns}
    tp_count = sum(1 for (a, b) in eligible_pred if (img[a], img[b]) in gt_conns)

    matched_gt = set(img.values())
    eligible_gt = [(a, b) for (a, b) in gt_conns if a in matched_gt and b in matched_gt]

    flag = not eligible_pred or not eligible_gt
    c_p = tp_count / len(eligible_pred) if eligible_pred else 0.0
    c_r = len(tp_pairs) / len(eligible_gt) if eligible_gt else 0.0
    return c_p, c_r, _f1(c_p, c_r), flag


def _f1(p: float, r: float) -> float:
    return 2.0 * p * r / (p + r) if p + r > 0 else 0.0


def evaluate(
    pred: LaneGraph, gt: LaneGraph, threshold: float = DEFAULT_THRESHOLD
) -> EvalReport:
    """Full metric pipeline at one threshold."""
    match = match_centerlines(pred, gt, threshold)
    m_p, m_r, m_f, pr_flag = precision_recall(pred, gt, match, threshold)
    detect = detection_ratio(pred, gt, match, threshold)
    c_p, c_r, c_f, c_flag = connectivity(pred, gt, match)
    flags = []
    if pr_flag:
        flags.append("no-matched-pairs")
    if c_flag:
        flags.append("no-connections")
    return EvalReport(
        m_precision=m_p,
        m_recall=m_r,
        m_f1=m_f,
        detect_ratio=detect,
        c_precision=c_p,
        c_recall=c_r,
        c_f1=c_f,
        match=tuple(match),
        threshold=threshold,
        flags=tuple(flags),
    )
