"""Cross-view mask-consistency graph: build, prune, and re-vote mask labels.

Vertices are (view, mask) pairs; an edge joins two masks from different
views whenever they observe at least ``tau`` common 3D points. A mask whose
neighborhood contains same-view members with conflicting labels is treated
as undersegmented (it straddles a part boundary) and its vote is discarded.
Each surviving vertex's first-order neighborhood then votes on one label
and broadcasts it to every member; a vertex's final label is the most
frequent proposal it received.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import UNLABELED, VoteTally, dominant_label
from .geometry import PixelPointMap
from .masks import MaskPartition


@dataclass
class MaskVertex:
    view: int
    mask: int
    label: int  # part label or -1
    confidence: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass
class MaskConsistencyGraph:
    vertices: list[MaskVertex]
    adjacency: list[set[int]]
    overlap: dict[tuple[int, int], int] = field(default_factory=dict)

    def __post_init__(self):
        seen = set()
        for v in self.vertices:
            key = (v.view, v.mask)
            if key in seen:
                raise ValueError(f"duplicate vertex {key}")
            seen.add(key)
        for i, nbrs in enumerate(self.adjacency):
            for j in nbrs:
                if i not in self.adjacency[j]:
                    raise ValueError(f"edge {i}-{j} is not symmetric")
                if self.vertices[i].view == self.vertices[j].view:
                    raise ValueError(f"edge {i}-{j} joins masks of one view")

    def n_vertices(self) -> int:
        return len(self.vertices)

    def neighborhood(self, v: int, depth: int = 1) -> list[int]:
        """Vertex ids within ``depth`` hops of ``v``, itself included, ascending."""
        seen = {v}
        frontier = [v]
        for _ in range(depth):
            nxt = []
            for u in frontier:
                for w in self.adjacency[u]:
                    if w not in seen:
                        seen.add(w)
                        nxt.append(w)
            frontier = nxt
        return sorted(seen)

    def to_debug_dict(self, discards=frozenset(), final_labels=None) -> dict:
        edges = [
            {"u": i, "v": j, "shared_points": n}
            for (i, j), n in sorted(self.overlap.items())
        ]
        verts = []
        for i, v in enumerate(self.vertices):
            rec = {
                "id": i,
                "view": v.view,
                "mask": v.mask,
                "label": v.label,
                "confidence": v.confidence,
                "discarded": i in discards,
            }
            if final_labels is not None:
                rec["final_label"] = int(final_labels[i])
            verts.append(rec)
        return {"vertices": verts, "edges": edges}


def build_graph(views, tau: int = 5) -> MaskConsistencyGraph:
    """Connect cross-view masks that observe >= tau common 3D points.

    ``views`` is a sequence of (MaskPartition, PixelPointMap, labels,
    confidences) tuples, labels/confidences indexed by mask id (confidences
    may be None for unit confidence).
    """
    if tau < 1:
        raise ValueError("tau must be >= 1")
    vertices: list[MaskVertex] = []
    point_sets: list[np.ndarray] = []
    for vi, entry in enumerate(views):
        partition, pmap, labels, confidences = _unpack_view(entry)
        if partition.resolution != pmap.resolution:
            raise ValueError(
                f"view {vi}: partition {partition.resolution} does not match "
                f"point map {pmap.resolution}"
            )
        if len(labels) != partition.mask_count:
            raise ValueError(
                f"view {vi}: {len(labels)} labels for {partition.mask_count} masks"
            )
        for m in range(partition.mask_count):
            conf = 1.0 if confidences is None else float(confidences[m])
            vertices.append(MaskVertex(vi, m, int(labels[m]), conf))
            pix = partition.id_map == m
            pts = pmap.indices[pix]
            point_sets.append(np.unique(pts[pts >= 0]))

    n = len(vertices)
    adjacency: list[set[int]] = [set() for _ in range(n)]
    overlap: dict[tuple[int, int], int] = {}
    for i in range(n):
        for j in range(i + 1, n):
            if vertices[i].view == vertices[j].view:
                continue
            shared = np.intersect1d(point_sets[i], point_sets[j], assume_unique=True)
            if shared.size >= tau:
                adjacency[i].add(j)
                adjacency[j].add(i)
                overlap[(i, j)] = int(shared.size)
    return MaskConsistencyGraph(vertices, adjacency, overlap)


def _unpack_view(entry):
    if len(entry) == 4:
        return entry
    partition, pmap, labels = entry
    return partition, pmap, labels, None


def detect_undersegmented(g: MaskConsistencyGraph, epsilon: int = 0) -> set[int]:
    """Vertices whose neighborhoods hold conflicting same-view label pairs.

    For each vertex the conflict set collects unordered neighbor pairs that
    live in one view yet carry different non-background labels; the vertex
    is discarded when that set outgrows ``epsilon``.
    """
    discards: set[int] = set()
    for v in range(g.n_vertices()):
        by_view: dict[int, list[int]] = {}
        for u in sorted(g.adjacency[v]):
            by_view.setdefault(g.vertices[u].view, []).append(u)
        conflicts = 0
        for members in by_view.values():
            for a in range(len(members)):
                la = g.vertices[members[a]].label
                if la == UNLABELED:
                    continue
                for b in range(a + 1, len(members)):
                    lb = g.vertices[members[b]].label
                    if lb != UNLABELED and la != lb:
                        conflicts += 1
        if conflicts > epsilon:
            discards.add(v)
    return discards


def aggregate_labels(
    g: MaskConsistencyGraph,
    discards: set[int] | frozenset = frozenset(),
    cutoff: float = 0.6,
    depth: int = 1,
) -> np.ndarray:
    """Two-phase neighborhood voting over mask labels.

    Phase one: every non-discarded vertex gathers its neighborhood (depth-1
    by default), votes over the non-discarded members' labels with the
    dominance cutoff, and broadcasts the winning label to every member,
    discarded ones included — they may not vote, but they can still be
    rescued. Phase two: each vertex takes the most frequent label proposed
    to it (ties to the lowest label id), or keeps its prior label if it
    received no proposal.
    """
    n = g.n_vertices()
    proposals: list[list[int]] = [[] for _ in range(n)]
    for v in range(n):
        if v in discards:
            continue
        members = g.neighborhood(v, depth)
        voters = [
            u for u in members if u not in discards and g.vertices[u].label != UNLABELED
        ]
        if not voters:
            continue
        tally = VoteTally.from_pairs(
            ((g.vertices[u].label, 1.0) for u in voters), cutoff
        )
        winner = dominant_label(tally)
        if winner is None:
            continue
        for u in members:
            proposals[u].append(winner)

    final = np.empty(n, dtype=np.int32)
    for v in range(n):
        if proposals[v]:
            counts: dict[int, int] = {}
            for lab in proposals[v]:
                counts[lab] = counts.get(lab, 0) + 1
            top = max(counts.values())
            final[v] = min(lab for lab, c in counts.items() if c == top)
        else:
            final[v] = g.vertices[v].label
    return final
