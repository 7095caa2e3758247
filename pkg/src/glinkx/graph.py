"""Directed sparse graph in CSR form, node splits, and homophily measures.

A :class:`CsrGraph` stores both the out-adjacency (edges as given) and the
in-adjacency (its exact transpose), since the label-propagation steps need
both directions.  Graphs are immutable after construction; the backing
arrays are marked read-only so they can be shared freely across workers.
"""

from dataclasses import dataclass

import numpy as np

from .errors import GraphError

TRAIN, VALID, TEST = 0, 1, 2
_ROLE_NAMES = {"train": TRAIN, "valid": VALID, "test": TEST}


@dataclass(frozen=True)
class CsrGraph:
    """Directed graph over dense node ids 0..n-1.

    ``out_offsets``/``out_targets`` hold the edges (i, j) grouped by source
    i; ``in_offsets``/``in_sources`` hold the same edges grouped by target.
    """

    n: int
    m: int
    out_offsets: np.ndarray
    out_targets: np.ndarray
    in_offsets: np.ndarray
    in_sources: np.ndarray

    def out_degree(self):
        return np.diff(self.out_offsets)

    def in_degree(self):
        return np.diff(self.in_offsets)

    def out_neighbors(self, i):
        return self.out_targets[self.out_offsets[i] : self.out_offsets[i + 1]]

    def in_neighbors(self, i):
        return self.in_sources[self.in_offsets[i] : self.in_offsets[i + 1]]

    def edges(self):
        """Edge list as (m, 2) int64 array, grouped by source."""
        src = np.repeat(np.arange(self.n, dtype=np.int64), self.out_degree())
        return np.stack([src, self.out_targets], axis=1)


@dataclass(frozen=True)
class SplitMasks:
    """Per-node role assignment: one of train/valid/test."""

    roles: np.ndarray  # uint8, values TRAIN/VALID/TEST

    def __post_init__(self):
        roles = np.ascontiguousarray(self.roles, dtype=np.uint8)
        roles.flags.writeable = False
        object.__setattr__(self, "roles", roles)
        if not np.all(roles <= TEST):
            raise GraphError("split roles must be train, valid or test")
        if not np.any(roles == TRAIN):
            raise GraphError("split has no train nodes")

    @property
    def train(self):
        return self.roles == TRAIN

    @property
    def valid(self):
        return self.roles == VALID

    @property
    def test(self):
        return self.roles == TEST

    @classmethod
    def from_indices(cls, n, train_idx, valid_idx, test_idx):
        roles = np.full(n, 255, dtype=np.uint8)
        roles[np.asarray(train_idx, dtype=np.int64)] = TRAIN
        roles[np.asarray(valid_idx, dtype=np.int64)] = VALID
        roles[np.asarray(test_idx, dtype=np.int64)] = TEST
        if np.any(roles == 255):
            raise GraphError("split roles do not cover every node")
        return cls(roles)


UNKNOWN_LABEL = -1


@dataclass(frozen=True)
class LabelVector:
    """Per-node class ids in 0..c-1; -1 marks an unknown label."""

    y: np.ndarray
    c: int

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=np.int64)
        y.flags.writeable = False
        object.__setattr__(self, "y", y)
        if self.c < 2:
            raise GraphError(f"need at least 2 classes, got {self.c}")
        known = y[y != UNKNOWN_LABEL]
        if known.size and (known.min() < 0 or known.max() >= self.c):
            raise GraphError(f"labels must lie in [0, {self.c})")

    def known_mask(self):
        return self.y != UNKNOWN_LABEL

    def onehot(self):
        out = np.zeros((self.y.shape[0], self.c), dtype=np.float64)
        known = self.known_mask()
        out[np.flatnonzero(known), self.y[known]] = 1.0
        return out


def _csr_from_pairs(src, dst, n):
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.add.at(offsets[1:], src, 1)
    np.cumsum(offsets, out=offsets)
    return offsets, np.ascontiguousarray(dst)


def build_graph(edges, n, symmetrize=False, dedup=True):
    """Construct a :class:`CsrGraph` from an edge list.

    ``symmetrize`` adds the reverse of every edge (and forces dedup, so
    symmetrization never duplicates edges); ``dedup`` removes repeated
    (src, dst) pairs.  Self-loops are kept as given and never added.
    """
    pairs = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges,
                       dtype=np.int64)
    if pairs.size == 0:
        pairs = pairs.reshape(0, 2)
    if pairs.ndim != 2 or pairs.shape[1] != 2:
        raise GraphError(f"edge list must be (m, 2)-shaped, got {pairs.shape}")
    if pairs.size and (pairs.min() < 0 or pairs.max() >= n):
        bad = pairs[(pairs < 0).any(axis=1) | (pairs >= n).any(axis=1)][0]
        raise GraphError(
            f"edge endpoint out of range: ({bad[0]}, {bad[1]}) with n={n}"
        )
    src, dst = pairs[:, 0], pairs[:, 1]
    if symmetrize:
        src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
        dedup = True
    if dedup and src.size:
        keys = src * n + dst
        keep = np.unique(keys)
        src, dst = keep // n, keep % n
    out_offsets, out_targets = _csr_from_pairs(src, dst, n)
    in_offsets, in_sources = _csr_from_pairs(dst, src, n)
    for arr in (out_offsets, out_targets, in_offsets, in_sources):
        arr.flags.writeable = False
    return CsrGraph(
        n=n,
        m=int(src.shape[0]),
        out_offsets=out_offsets,
        out_targets=out_targets,
        in_offsets=in_offsets,
        in_sources=in_sources,
    )


def symmetrized(g):
    """Symmetrized copy of ``g`` (deduplicated; identity on symmetric
    graphs up to edge order)."""
    return build_graph(g.edges(), g.n, symmetrize=True)


def subgraph(g, keep_mask):
    """Graph induced on nodes where ``keep_mask`` is True, ids relabeled
    densely in increasing original order.  Returns (graph, old_ids)."""
    keep_mask = np.asarray(keep_mask, dtype=bool)
    old_ids = np.flatnonzero(keep_mask)
    new_id = np.full(g.n, -1, dtype=np.int64)
    new_id[old_ids] = np.arange(old_ids.shape[0])
    e = g.edges()
    inside = keep_mask[e[:, 0]] & keep_mask[e[:, 1]]
    e = e[inside]
    sub = build_graph(
        np.stack([new_id[e[:, 0]], new_id[e[:, 1]]], axis=1),
        int(old_ids.shape[0]),
        dedup=False,
    )
    return sub, old_ids


def _require_labels_known(y):
    if not np.all(y.known_mask()):
        raise GraphError("homophily metrics need all labels known")


def edge_homophily(g, y):
    """Fraction of edges whose endpoints share a label."""
    _require_labels_known(y)
    if g.m == 0:
        raise GraphError("no edges")
    e = g.edges()
    return float(np.mean(y.y[e[:, 0]] == y.y[e[:, 1]]))


def node_homophily(g, y):
    """Mean over non-isolated nodes of the same-label neighbor fraction.

    Neighbors are out-neighbors; pass a symmetrized graph for undirected
    semantics.
    """
    fracs = per_node_homophily(g, y)
    fracs = fracs[~np.isnan(fracs)]
    if fracs.size == 0:
        raise GraphError("all nodes are isolated")
    return float(fracs.mean())


def per_node_homophily(g, y):
    """Same-label out-neighbor fraction per node; NaN for isolated nodes."""
    _require_labels_known(y)
    e = g.edges()
    same = (y.y[e[:, 0]] == y.y[e[:, 1]]).astype(np.float64)
    agree = np.zeros(g.n)
    np.add.at(agree, e[:, 0], same)
    deg = g.out_degree().astype(np.float64)
    with np.errstate(invalid="ignore"):
        return np.where(deg > 0, agree / np.maximum(deg, 1), np.nan)


def class_insensitive_homophily(g, y):
    """Class-size-adjusted homophily in [0, 1].

    Averages, over classes k, the excess of the class-k edge homophily
    over the class share |C_k|/n, clipped at zero:
    h_hat = (1/(c-1)) * sum_k max(0, h_k - |C_k|/n), where h_k is the
    same-label fraction among edges whose source is in class k.
    """
    _require_labels_known(y)
    if g.m == 0:
        raise GraphError("no edges")
    e = g.edges()
    src_cls = y.y[e[:, 0]]
    same = (src_cls == y.y[e[:, 1]]).astype(np.float64)
    c = y.c
    n_edges = np.bincount(src_cls, minlength=c).astype(np.float64)
    n_same = np.bincount(src_cls, weights=same, minlength=c)
    share = np.bincount(y.y, minlength=c) / g.n
    total = 0.0
    for k in range(c):
        if n_edges[k] == 0:
            continue
        total += max(0.0, n_same[k] / n_edges[k] - share[k])
    return float(total / (c - 1))


def two_hop_label_agreement(g, y, rng=None, samples=20000):
    """Fraction of sampled neighbor pairs (u, w) of a common node that share
    a label; measures how strongly neighborhoods concentrate on one class."""
    _require_labels_known(y)
    rng = rng or np.random.default_rng(0)
    deg = g.out_degree()
    eligible = np.flatnonzero(deg >= 2)
    if eligible.size == 0:
        raise GraphError("no node has two neighbors")
    centers = rng.choice(eligible, size=samples)
    agree = 0
    for i in centers:
        nbrs = g.out_neighbors(i)
        u, w = rng.choice(nbrs, size=2, replace=False)
        agree += y.y[u] == y.y[w]
    return agree / samples
