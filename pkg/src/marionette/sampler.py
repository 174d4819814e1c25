"""Motion balancer: hierarchical uniform-over-children clip sampling.

Clip probabilities are the product of 1/|children| along the label path,
with clips bound to a leaf counting as that leaf's children.  The table is
computed once per dataset; draws are a single inverse-CDF lookup, which is
distribution-identical to walking the tree level by level.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class LabelTreeError(ValueError):
    pass


@dataclass
class LabelNode:
    name: str
    children: dict[str, "LabelNode"] = field(default_factory=dict)
    clip_ids: list[str] = field(default_factory=list)

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class LabelTree:
    root: LabelNode

    @classmethod
    def from_label_paths(cls, bindings: dict[str, list[str]]) -> "LabelTree":
        """Build from clip_id -> full label path (starting at 'root')."""
        root = LabelNode("root")
        for clip_id, path in bindings.items():
            if not path or path[0] != "root":
                raise LabelTreeError(f"label path for {clip_id!r} must start at 'root'")
            node = root
            for name in path[1:]:
                node = node.children.setdefault(name, LabelNode(name))
            node.clip_ids.append(clip_id)
        # reject clips hanging off internal nodes: every clip must sit at a leaf
        def check(node: LabelNode):
            if node.clip_ids and node.children:
                raise LabelTreeError(
                    f"clips {node.clip_ids} bound to internal node {node.name!r}"
                )
            if not node.clip_ids and not node.children:
                raise LabelTreeError(f"empty node {node.name!r}")
            for child in node.children.values():
                check(child)

        check(root)
        return cls(root)


@dataclass
class SamplingTable:
    clip_ids: list[str]
    probabilities: np.ndarray  # aligned with clip_ids, sums to 1

    def __post_init__(self):
        self._cdf = np.cumsum(self.probabilities)

    def probability(self, clip_id: str) -> float:
        return float(self.probabilities[self.clip_ids.index(clip_id)])

    def as_dict(self) -> dict[str, float]:
        return {cid: float(p) for cid, p in zip(self.clip_ids, self.probabilities)}


def build_probability_table(tree: LabelTree) -> SamplingTable:
    """Path-product probabilities: descend multiplying 1/|children| per level."""
    ids: list[str] = []
    probs: list[float] = []

    def walk(node: LabelNode, p: float):
        if node.is_leaf:
            share = p / len(node.clip_ids)
            for cid in node.clip_ids:
                ids.append(cid)
                probs.append(share)
            return
        share = p / len(node.children)
        for child in sorted(node.children.values(), key=lambda n: n.name):
            walk(child, share)

    walk(tree.root, 1.0)
    arr = np.array(probs, dtype=np.float64)
    total = arr.sum()
    if abs(total - 1.0) > 1e-12:
        arr = arr / total
    return SamplingTable(ids, arr)


def uniform_table(clip_ids: list[str]) -> SamplingTable:
    """Balancer-off ablation: uniform over clips regardless of labels."""
    n = len(clip_ids)
    return SamplingTable(list(clip_ids), np.full(n, 1.0 / n))


def sample_clip(table: SamplingTable, rng: np.random.Generator) -> str:
    """One inverse-CDF draw from the table."""
    u = rng.random()
    idx = int(np.searchsorted(table._cdf, u, side="right"))
    return table.clip_ids[min(idx, len(table.clip_ids) - 1)]


def sample_clips(table: SamplingTable, rng: np.random.Generator, n: int) -> list[str]:
    """Vectorized draws; same distribution as repeated sample_clip calls."""
    u = rng.random(n)
    idx = np.minimum(np.searchsorted(table._cdf, u, side="right"), len(table.clip_ids) - 1)
    return [table.clip_ids[i] for i in idx]
