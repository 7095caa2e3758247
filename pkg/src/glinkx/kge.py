"""Positional embeddings from single-relation knowledge-graph training.

The graph is treated as a knowledge graph with one relation whose vector is
frozen at all-ones, so the DistMult triple product reduces to a plain dot
product between head and tail embeddings.  Training is negative-sampling
SGD over edge minibatches: each positive edge gets ``negatives`` corrupted
pairs (head or tail replaced, rejecting pairs that are actual edges), and
only embedding rows touched by a minibatch are updated in that step.

Embeddings are stored as float32 (the on-disk DMAT1 precision); all update
arithmetic runs in float64.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .dmat import read_dmat, write_dmat
from .errors import ConfigError, DimensionError, GraphError

logger = logging.getLogger(__name__)

# cap on transient gathered-row elements per vectorized negative chunk
_NEG_CHUNK_BUDGET = 1 << 22


@dataclass
class KgeConfig:
    dim: int = 400
    epochs: int = 50
    negatives: int = 1000
    batch: int = 10000
    lr: float = 0.1
    loss: str = "softmax"  # or "margin"
    margin: float = 1.0

    def __post_init__(self):
        if self.negatives < 1:
            raise ConfigError("need at least one negative sample")
        if self.batch < 1:
            raise ConfigError("batch size must be positive")
        if self.loss not in ("softmax", "margin"):
            raise ConfigError(f"unknown loss {self.loss!r}")


@dataclass
class KgeTable:
    """n x dim embedding matrix; the single relation vector is all-ones."""

    P: np.ndarray  # float32

    @property
    def n(self):
        return self.P.shape[0]

    @property
    def dim(self):
        return self.P.shape[1]


def distmult_score(h, t):
    """Triple product with the all-ones relation: sum_i h_i * t_i."""
    h = np.asarray(h, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if h.shape != t.shape:
        raise DimensionError(f"embedding dims differ: {h.shape} vs {t.shape}")
    return float(h @ t)


def _sample_negatives(rng, pos, n, nu, edge_keys):
    """Corrupt one endpoint per negative, uniformly head or tail, rejecting
    pairs that are edges.  After 100 rejection rounds the remaining
    collisions are accepted with a warning (dense-graph degenerate case)."""
    b = pos.shape[0]
    neg_u = np.repeat(pos[:, 0:1], nu, axis=1)
    neg_v = np.repeat(pos[:, 1:2], nu, axis=1)
    pending = np.ones((b, nu), dtype=bool)
    for _ in range(100):
        if not pending.any():
            break
        idx = np.nonzero(pending)
        count = idx[0].shape[0]
        side = rng.integers(0, 2, size=count)
        cand = rng.integers(0, n, size=count)
        u = np.where(side == 0, cand, pos[idx[0], 0])
        v = np.where(side == 0, pos[idx[0], 1], cand)
        keys = u * n + v
        hit = np.searchsorted(edge_keys, keys)
        hit = np.minimum(hit, edge_keys.shape[0] - 1)
        is_edge = edge_keys[hit] == keys
        neg_u[idx[0], idx[1]] = u
        neg_v[idx[0], idx[1]] = v
        pending[idx[0], idx[1]] = is_edge
    if pending.any():
        logger.warning(
            "negative sampling hit the 100-round rejection cap; "
            "%d corruptions may be true edges", int(pending.sum()),
        )
    return neg_u, neg_v


def _batch_step(P, pos, neg_u, neg_v, cfg):
    """Compute the minibatch loss and per-row gradient accumulators.

    Returns (loss, rows, grads) where grads[i] is the gradient w.r.t.
    embedding row rows[i]; duplicates are summed by the caller.
    """
    b, nu = neg_u.shape
    hu = P[pos[:, 0]].astype(np.float64)
    tv = P[pos[:, 1]].astype(np.float64)
    f_pos = np.einsum("ij,ij->i", hu, tv)

    chunk = max(1, _NEG_CHUNK_BUDGET // (b * P.shape[1]))
    f_neg = np.empty((b, nu))
    for lo in range(0, nu, chunk):
        hi = min(nu, lo + chunk)
        f_neg[:, lo:hi] = np.einsum(
            "bkd,bkd->bk",
            P[neg_u[:, lo:hi]].astype(np.float64),
            P[neg_v[:, lo:hi]].astype(np.float64),
        )

    if cfg.loss == "margin":
        # standard ranking orientation: penalize negatives scoring within
        # `margin` of the positive
        active = (cfg.margin - f_pos[:, None] + f_neg) > 0.0
        loss = float(np.maximum(
            cfg.margin - f_pos[:, None] + f_neg, 0.0).mean())
        d_pos = -active.sum(axis=1) / (b * nu)
        d_neg = active / (b * nu)
    else:
        # per positive: -log softmax(f_pos | f_negs)
        all_f = np.concatenate([f_pos[:, None], f_neg], axis=1)
        shift = all_f.max(axis=1, keepdims=True)
        w = np.exp(all_f - shift)
        w /= w.sum(axis=1, keepdims=True)
        loss = float(-np.log(np.maximum(w[:, 0], 1e-300)).mean())
        d_pos = (w[:, 0] - 1.0) / b
        d_neg = w[:, 1:] / b

    rows = [pos[:, 0], pos[:, 1]]
    grads = [d_pos[:, None] * tv, d_pos[:, None] * hu]
    for lo in range(0, nu, chunk):
        hi = min(nu, lo + chunk)
        nu_rows = P[neg_u[:, lo:hi]].astype(np.float64)
        nv_rows = P[neg_v[:, lo:hi]].astype(np.float64)
        coef = d_neg[:, lo:hi, None]
        rows.append(neg_u[:, lo:hi].ravel())
        grads.append((coef * nv_rows).reshape(-1, P.shape[1]))
        rows.append(neg_v[:, lo:hi].ravel())
        grads.append((coef * nu_rows).reshape(-1, P.shape[1]))
    return loss, np.concatenate(rows), np.concatenate(grads)


def _segment_sum(rows, grads, touched):
    """Sum gradient rows that share a destination; ``touched`` is the sorted
    unique row set (every element occurs in ``rows``)."""
    idx = np.searchsorted(touched, rows)
    order = np.argsort(idx, kind="stable")
    starts = np.searchsorted(idx[order], np.arange(touched.shape[0]))
    return np.add.reduceat(grads[order], starts, axis=0)


def kge_train(g, cfg, seed=0):
    """Train embeddings on the edges of ``g``; returns (table, epoch_log).

    Deterministic for a fixed seed.  Plain SGD on embedding rows; per
    minibatch, only rows appearing in the positive or corrupted pairs
    change.
    """
    if g.m < 1:
        raise GraphError("knowledge-graph training needs at least one edge")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE]))
    bound = 1.0 / np.sqrt(cfg.dim)
    P = rng.uniform(-bound, bound, size=(g.n, cfg.dim)).astype(np.float32)
    edges = g.edges()
    edge_keys = np.sort(edges[:, 0] * g.n + edges[:, 1])
    log = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(g.m)
        total = 0.0
        for lo in range(0, g.m, cfg.batch):
            pos = edges[order[lo : lo + cfg.batch]]
            neg_u, neg_v = _sample_negatives(
                rng, pos, g.n, cfg.negatives, edge_keys
            )
            loss, rows, grads = _batch_step(P, pos, neg_u, neg_v, cfg)
            touched = np.unique(rows)
            acc = _segment_sum(rows, grads, touched)
            P[touched] = (
                P[touched].astype(np.float64) - cfg.lr * acc
            ).astype(np.float32)
            total += loss * pos.shape[0]
        log.append({"epoch": epoch, "loss": total / g.m})
    return KgeTable(P=P), log


def export_kge(table, path):
    write_dmat(path, table.P)


def import_kge(path, expected_n=None):
    P = read_dmat(path, expected_rows=expected_n)
    return KgeTable(P=P)
