"""Skeletonization and backbone extraction.

The binary fringe mask is thinned to one-pixel-wide lines, junction pixels
are removed so only branch-free chains remain, short chains are discarded
as noise, and the survivors are cut into bones of uniform length.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from skimage.morphology import skeletonize as _thin

from .params import ParameterSet

_NEIGH8 = np.ones((3, 3), dtype=np.uint8)

# 8-neighborhood offsets in scan order (keeps chain tracing deterministic).
_OFFSETS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


@dataclass(frozen=True)
class Skeleton:
    """One-pixel-wide thinned representation of a binary mask."""

    bits: np.ndarray  # (H, W) bool

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]


@dataclass(frozen=True)
class Backbone:
    """Ordered, branch-free chain of 8-adjacent skeleton pixels."""

    pixels: np.ndarray  # (n, 2) int, consecutive rows 8-adjacent

    @property
    def length_px(self) -> int:
        return len(self.pixels)


@dataclass
class Bone:
    """Uniform-length backbone segment; node unit of the crystal graph."""

    pixels: np.ndarray  # (n, 2) int
    source_backbone: int
    ellipse: "object | None" = field(default=None)  # EllipseDescriptor, set later


def skeletonize(mask) -> Skeleton:
    """Thin the mask to a 1-px-wide, 8-connected skeleton.

    Uses iterative two-subiteration thinning; the output is a fixed point
    of the thinning pass, so re-skeletonizing a skeleton is the identity.
    """
    return Skeleton(bits=_thin(mask.bits))


def neighbor_counts(bits: np.ndarray) -> np.ndarray:
    """Number of true 8-neighbors for every pixel."""
    counts = ndimage.convolve(bits.astype(np.uint8), _NEIGH8,
                              mode="constant", cval=0)
    return counts - bits.astype(np.uint8)  # kernel includes the center


def break_branches(sk: Skeleton) -> list[Backbone]:
    """Delete junction pixels (>= 3 neighbors) and trace the remaining chains.

    Every surviving pixel lands in exactly one backbone; isolated pixels
    become length-1 chains.  Backbones are ordered by the lexicographically
    smallest pixel of each chain.
    """
    bits = sk.bits
    counts = neighbor_counts(bits)
    chains = bits & (counts < 3)
    labels, n_comp = ndimage.label(chains, structure=_NEIGH8)
    if n_comp == 0:
        return []

    coords = np.argwhere(chains)
    comp_of = labels[coords[:, 0], coords[:, 1]]
    order = np.argsort(comp_of, kind="stable")
    coords = coords[order]
    comp_of = comp_of[order]
    ends = np.searchsorted(comp_of, np.arange(1, n_comp + 1), side="right")
    starts = np.concatenate(([0], ends[:-1]))

    backbones = []
    for s, e in zip(starts, ends):
        pts = [tuple(p) for p in coords[s:e]]
        backbones.append(Backbone(pixels=np.array(_trace_chain(pts), dtype=np.intp)))
    backbones.sort(key=lambda b: tuple(b.pixels.min(axis=0)) + tuple(b.pixels[0]))
    return backbones


def _trace_chain(pts: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Order a degree-<=2 connected pixel set into a chain.

    Open chains start at their smallest endpoint; loops are cut at the
    lexicographically smallest pixel and walk toward its smaller neighbor.
    """
    if len(pts) == 1:
        return pts
    members = set(pts)
    adj = {
        p: [q for dr, dc in _OFFSETS if (q := (p[0] + dr, p[1] + dc)) in members]
        for p in pts
    }
    endpoints = sorted(p for p, nb in adj.items() if len(nb) <= 1)
    start = endpoints[0] if endpoints else min(pts)
    chain = [start]
    prev = None
    cur = start
    while True:
        nxt = [q for q in sorted(adj[cur]) if q != prev and q != start]
        if not nxt:
            break
        prev, cur = cur, nxt[0]
        chain.append(cur)
        if len(chain) == len(pts):
            break
    return chain


def filter_short_backbones(bbs: list[Backbone], p: ParameterSet) -> list[Backbone]:
    """Keep backbones at least ``pixThresh_propCons * dspace_px`` long."""
    threshold = p.backbone_min_px
    return [b for b in bbs if b.length_px >= threshold]


def break_uniform(bbs: list[Backbone], p: ParameterSet) -> list[Bone]:
    """Cut each backbone into consecutive segments of uniform length.

    The final remainder is kept as its own bone when at least half a
    segment long, otherwise it is merged into the previous bone.
    """
    length = p.bone_length_px
    if length < 2:
        raise ValueError(f"bone length must be >= 2 px, got {length}")
    bones: list[Bone] = []
    for idx, bb in enumerate(bbs):
        chain = bb.pixels
        segments = [chain[i:i + length] for i in range(0, len(chain), length)]
        if len(segments) > 1 and len(segments[-1]) < length / 2:
            segments[-2] = np.concatenate([segments[-2], segments[-1]])
            segments.pop()
        bones.extend(Bone(pixels=seg, source_backbone=idx) for seg in segments)
    return bones
