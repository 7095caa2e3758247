"""Shallow baselines: label-propagation variants, feature-only MLP, and the
two-branch adjacency model.

Label propagation iterates Y <- alpha * S * Y + (1 - alpha) * Y0 where S is
the symmetrically normalized adjacency with self-loops of the hop graph
(hop 1: the graph itself; hop 2: the support of the squared adjacency), and
Y0 holds one-hot train labels.  Predictions are row argmax, ties broken
toward the lowest class id; nodes that never receive mass fall back to the
global train-label majority and are flagged.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import BaselineError, ConfigError
from .graph import build_graph, symmetrized
from .nn import CsrRowsSource, DenseSource
from .pipeline import StageConfig, stage3_train

logger = logging.getLogger(__name__)


@dataclass
class LpConfig:
    alpha: float = 0.5
    hops: int = 1
    iters: int = 50
    clamp: bool = False  # re-impose train one-hots after every iteration

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie strictly between 0 and 1")
        if self.iters < 1:
            raise ConfigError("need at least one iteration")
        if self.hops not in (1, 2):
            raise ConfigError("hops must be 1 or 2")


def ensure_symmetric(g):
    """Symmetrized copy of ``g`` (identity when already symmetric)."""
    return symmetrized(g)


def square_support_graph(g):
    """Graph on the support of the squared adjacency, diagonal removed."""
    indptr, indices, _ = kernels.square_support(g.out_offsets, g.out_targets,
                                                g.n)
    src = np.repeat(np.arange(g.n, dtype=np.int64), np.diff(indptr))
    keep = src != indices
    return build_graph(np.stack([src[keep], indices[keep]], axis=1), g.n,
                       dedup=False)


def strict_two_hop_graph(g):
    """Support of (A^2 - A - I >= 1) on the binary adjacency: pairs reachable
    in two hops beyond their direct edge, diagonal removed."""
    indptr, indices, counts = kernels.square_support(
        g.out_offsets, g.out_targets, g.n
    )
    src = np.repeat(np.arange(g.n, dtype=np.int64), np.diff(indptr))
    edges = g.edges()
    akeys = np.sort(edges[:, 0] * g.n + edges[:, 1])
    keys = src * g.n + indices
    slot = np.searchsorted(akeys, keys)
    slot = np.minimum(slot, akeys.shape[0] - 1)
    a_val = (akeys[slot] == keys).astype(np.int64)
    keep = (src != indices) & (counts - a_val >= 1)
    if not np.any(keep):
        raise BaselineError("no 2-hop-exclusive structure")
    return build_graph(np.stack([src[keep], indices[keep]], axis=1), g.n,
                       dedup=False)


def _normalized_with_loops(g):
    """CSR arrays of D^-1/2 (A + I) D^-1/2 with degrees counting the loop."""
    deg = g.out_degree().astype(np.float64) + 1.0
    inv_sqrt = 1.0 / np.sqrt(deg)
    n = g.n
    counts = g.out_degree() + 1
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    indices = np.empty(int(indptr[-1]), dtype=np.int64)
    data = np.empty(int(indptr[-1]), dtype=np.float64)
    src = np.repeat(np.arange(n, dtype=np.int64), g.out_degree())
    pos = indptr[:-1].copy()
    # neighbors first, then the self-loop slot
    for_all = np.arange(src.shape[0])
    slots = pos[src] + (for_all - g.out_offsets[src])
    indices[slots] = g.out_targets
    data[slots] = inv_sqrt[src] * inv_sqrt[g.out_targets]
    loop_slots = indptr[1:] - 1
    indices[loop_slots] = np.arange(n)
    data[loop_slots] = inv_sqrt * inv_sqrt
    return indptr, indices, data


@dataclass
class LpResult:
    predictions: np.ndarray
    scores: np.ndarray
    fallback: np.ndarray  # nodes predicted by the train-label majority


def label_prop(g, labels, masks, cfg, assume_symmetric=False):
    """Run label propagation; returns per-node predictions.

    The input graph is symmetrized unless ``assume_symmetric`` is set.
    """
    base = g if assume_symmetric else ensure_symmetric(g)
    hop_graph = base if cfg.hops == 1 else square_support_graph(base)
    return label_prop_on(hop_graph, labels, masks, cfg)


def label_prop_on(hop_graph, labels, masks, cfg):
    """Label propagation on an explicit (already symmetric) hop graph."""
    n, c = hop_graph.n, labels.c
    indptr, indices, data = _normalized_with_loops(hop_graph)
    y0 = np.zeros((n, c))
    train_ids = np.flatnonzero(masks.train)
    y0[train_ids, labels.y[train_ids]] = 1.0
    y = y0.copy()
    for _ in range(cfg.iters):
        y = cfg.alpha * kernels.spmm_csr(indptr, indices, data, y)
        y += (1.0 - cfg.alpha) * y0
        if cfg.clamp:
            y[train_ids] = y0[train_ids]
    empty = y.sum(axis=1) == 0.0
    preds = y.argmax(axis=1)
    if np.any(empty):
        majority = int(np.bincount(labels.y[train_ids],
                                   minlength=c).argmax())
        preds[empty] = majority
        logger.warning("%d nodes received no label mass; predicted the "
                       "train majority class %d", int(empty.sum()), majority)
    return LpResult(predictions=preds, scores=y, fallback=empty)


def label_prop_masked(g, labels, masks, cfg, assume_symmetric=False):
    """Label propagation on the strict two-hop-only support."""
    base = g if assume_symmetric else ensure_symmetric(g)
    return label_prop_on(strict_two_hop_graph(base), labels, masks, cfg)


def lp_accuracy(result, labels, mask):
    ids = np.flatnonzero(mask)
    return float(np.mean(result.predictions[ids] == labels.y[ids]))


def label_prop_alpha_family(hop_graph, labels, masks, alphas, iters=50):
    """Label propagation for many alphas at the cost of one.

    Unrolling the recursion Y <- alpha*S*Y + (1-alpha)*Y0 for t iterations
    gives Y_t = alpha^t S^t Y0 + (1-alpha) * sum_{k<t} alpha^k S^k Y0, so
    the Krylov sequence S^k Y0 (computed once) yields every alpha exactly.
    No re-clamping variant here (clamping breaks the unrolling).
    Returns {alpha: LpResult} identical to iterating each alpha.
    """
    n, c = hop_graph.n, labels.c
    indptr, indices, data = _normalized_with_loops(hop_graph)
    y0 = np.zeros((n, c))
    train_ids = np.flatnonzero(masks.train)
    y0[train_ids, labels.y[train_ids]] = 1.0
    powers = [y0]
    for _ in range(iters):
        powers.append(kernels.spmm_csr(indptr, indices, data, powers[-1]))
    majority = int(np.bincount(labels.y[train_ids], minlength=c).argmax())
    out = {}
    for alpha in alphas:
        weights = (1.0 - alpha) * alpha ** np.arange(iters)
        y = (alpha ** iters) * powers[iters]
        for k in range(iters):
            y += weights[k] * powers[k]
        empty = y.sum(axis=1) == 0.0
        preds = y.argmax(axis=1)
        preds[empty] = majority
        out[alpha] = LpResult(predictions=preds, scores=y, fallback=empty)
    return out


def lp_sweep(g, labels, masks, alphas, hops, iters=50, clamp=False,
             assume_symmetric=False):
    """Pick alpha by validation accuracy (per hop count); returns the chosen
    config, its validation accuracy, and its test accuracy."""
    base = g if assume_symmetric else ensure_symmetric(g)
    hop_graph = base if hops == 1 else square_support_graph(base)
    best = None
    for alpha in alphas:
        cfg = LpConfig(alpha=alpha, hops=hops, iters=iters, clamp=clamp)
        result = label_prop_on(hop_graph, labels, masks, cfg)
        val_acc = lp_accuracy(result, labels, masks.valid)
        test_acc = lp_accuracy(result, labels, masks.test)
        if best is None or val_acc > best["val_acc"]:
            best = {"alpha": alpha, "val_acc": val_acc, "test_acc": test_acc}
    return best


def feature_mlp_baseline(x, labels, masks, cfg=None, seed=0):
    """MLP on ego features alone; returns (test accuracy, stage result)."""
    cfg = cfg or StageConfig()
    sources = {"x": DenseSource(x)}
    stage, probs = stage3_train(sources, labels, masks, cfg, seed,
                                branch_layers={"x": cfg.layers_x})
    test_ids = np.flatnonzero(masks.test)
    return float(np.mean(probs[test_ids].argmax(1) == labels.y[test_ids])), stage


def linkx_baseline(g, x, labels, masks, cfg=None, seed=0):
    """Two-branch model on ego features and adjacency rows; returns
    (test accuracy, stage result)."""
    cfg = cfg or StageConfig()
    sym = ensure_symmetric(g)
    sources = {
        "x": DenseSource(x),
        "p": CsrRowsSource(sym.out_offsets, sym.out_targets, sym.n),
    }
    stage, probs = stage3_train(
        sources, labels, masks, cfg, seed,
        branch_layers={"x": cfg.layers_x, "p": cfg.layers_p},
    )
    test_ids = np.flatnonzero(masks.test)
    return float(np.mean(probs[test_ids].argmax(1) == labels.y[test_ids])), stage
