"""The three-stage classification pipeline.

Stage 1 supplies positional embeddings (trained embedding table or raw
adjacency rows).  Stage 2 averages one-hot training labels over each node's
in-neighbors (forward propagation), fits a branch net to those neighbor
distributions, then averages the fitted predictions over out-neighbors
(backward propagation).  Stage 3 trains a final branch net on the node's
own label from ego features, positional embedding, and the propagated
distribution.

Both propagations happen outside all training loops; each traverses the
edge set exactly once, moving c-dimensional messages.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, PipelineError
from .graph import symmetrized
from .nn import (BranchNet, CsrRowsSource, DenseSource, NetConfig,
                 predict_proba, soft_cross_entropy, train_model)

logger = logging.getLogger(__name__)


@dataclass
class SoftLabels:
    """Row-stochastic (n, c) matrix with a per-row validity mask.

    Invalid rows had no contributing neighbors; depending on the operation
    they are zero-filled (forward direction, excluded from losses) or
    uniform-filled (backward direction, maximum-entropy non-signal).
    """

    probs: np.ndarray
    valid: np.ndarray

    @property
    def c(self):
        return self.probs.shape[1]


@dataclass
class StageConfig:
    """Hyperparameters for one training stage."""

    layers_x: int = 1
    layers_p: int = 1
    layers_y: int = 1
    layers_agg: int = 1
    hidden: int = 64
    dropout: float = 0.5
    lr: float = 0.001
    epochs: int = 200
    batch_size: int = 4096
    weight_decay: float = 0.0
    hash_params: bool = False  # fingerprint parameters after every epoch


def mlap_forward(g, labels, train_mask):
    """Mean one-hot label of train in-neighbors, for every node.

    Only edges whose source is a train node with a known label contribute,
    so the result is a pure function of training labels.  Rows with no
    qualifying in-neighbor are invalid (zero-filled).  One edge pass.
    """
    source_mask = np.asarray(train_mask, dtype=bool) & labels.known_mask()
    out, counts = kernels.label_mean_csr(
        g.in_offsets, g.in_sources, labels.y, source_mask, labels.c
    )
    valid = counts > 0
    if not np.any(valid & train_mask):
        raise PipelineError(
            "stage2: no supervised signal (no train node has a train "
            "in-neighbor)"
        )
    return SoftLabels(probs=out, valid=valid)


def mlap_backward(g, ytilde):
    """Mean of predicted neighbor distributions over out-neighbors.

    Nodes with no out-neighbors get a uniform row and are flagged invalid.
    One edge pass.
    """
    out, counts = kernels.row_mean_csr(g.out_offsets, g.out_targets, ytilde)
    valid = counts > 0
    c = ytilde.shape[1]
    out[~valid] = 1.0 / c
    return SoftLabels(probs=out, valid=valid)


def _accuracy(probs, y_true):
    return float(np.mean(probs.argmax(axis=1) == y_true))


@dataclass
class StageResult:
    net: BranchNet
    best_epoch: int
    log: list
    param_count: int


def stage2_train(sources, yhat, masks, cfg, seed, branch_layers=None):
    """Fit the neighbor-distribution model and evaluate it on every node.

    Training rows are train nodes with a valid neighbor distribution.  The
    selection metric is label-leakage-free: agreement between predicted and
    propagated distributions (argmax match) on validation nodes whose
    distribution is computable from train labels, with soft cross-entropy
    as tiebreaker.  Returns (StageResult, ytilde) with ytilde evaluated for
    all nodes under the best parameters.
    """
    n, c = yhat.probs.shape
    train_ids = np.flatnonzero(masks.train & yhat.valid)
    val_ids = np.flatnonzero(masks.valid & yhat.valid)
    if train_ids.size == 0:
        raise PipelineError("stage2: every train row is invalid")
    if branch_layers is None:
        branch_layers = {"x": cfg.layers_x, "p": cfg.layers_p}
    net = BranchNet(
        NetConfig(
            branch_layers=branch_layers, out_dim=c, hidden=cfg.hidden,
            agg_layers=cfg.layers_agg, dropout=cfg.dropout, seed=seed,
        ),
        sources,
    )
    val_targets = yhat.probs[val_ids]
    val_argmax = val_targets.argmax(axis=1)

    def val_fn(model):
        probs = predict_proba(model, sources, val_ids)
        acc = float(np.mean(probs.argmax(axis=1) == val_argmax))
        ce = soft_cross_entropy(probs, val_targets)
        return (acc, -ce), {"val_acc": acc, "val_ce": ce}

    result = train_model(
        net, sources, yhat.probs, train_ids, epochs=cfg.epochs,
        batch_size=cfg.batch_size, lr=cfg.lr, weight_decay=cfg.weight_decay,
        seed=seed, val_fn=val_fn if val_ids.size else None,
        hash_params=cfg.hash_params,
    )
    net.load_state(result.best_state)
    ytilde = predict_proba(net, sources, np.arange(n))
    stage = StageResult(net=net, best_epoch=result.best_epoch,
                        log=result.log, param_count=result.param_count)
    return stage, ytilde


def stage3_train(sources, labels, masks, cfg, seed, branch_layers=None):
    """Train the final model on one-hot own labels; select by validation
    accuracy; return (StageResult, probabilities for all nodes)."""
    n = labels.y.shape[0]
    train_ids = np.flatnonzero(masks.train)
    val_ids = np.flatnonzero(masks.valid)
    if branch_layers is None:
        branch_layers = {"x": cfg.layers_x, "p": cfg.layers_p,
                         "y": cfg.layers_y}
    net = BranchNet(
        NetConfig(
            branch_layers=branch_layers, out_dim=labels.c, hidden=cfg.hidden,
            agg_layers=cfg.layers_agg, dropout=cfg.dropout, seed=seed,
        ),
        sources,
    )
    y_val = labels.y[val_ids]

    def val_fn(model):
        probs = predict_proba(model, sources, val_ids)
        acc = _accuracy(probs, y_val)
        return acc, {"val_acc": acc}

    result = train_model(
        net, sources, labels.onehot(), train_ids, epochs=cfg.epochs,
        batch_size=cfg.batch_size, lr=cfg.lr, weight_decay=cfg.weight_decay,
        seed=seed, val_fn=val_fn if val_ids.size else None,
        hash_params=cfg.hash_params,
    )
    net.load_state(result.best_state)
    probs = predict_proba(net, sources, np.arange(n))
    stage = StageResult(net=net, best_epoch=result.best_epoch,
                        log=result.log, param_count=result.param_count)
    return stage, probs


@dataclass
class PipelineArtifacts:
    """Everything a full run produces, sufficient for inductive prediction."""

    stage2: StageResult
    stage3: StageResult
    ytilde: np.ndarray
    yprime: SoftLabels
    probs: np.ndarray
    test_accuracy: float
    edge_passes: int
    message_width: int
    pe_mode: str
    pe_matrix: np.ndarray = None  # dense PEs when pe_mode == "kge"
    stage2_dropped: bool = False
    logs: dict = field(default_factory=dict)


def _pe_source(g, pe_mode, pe_matrix):
    if pe_mode == "adjacency":
        # the embedding branch always sees symmetrized rows, whatever the
        # propagation direction convention
        sym = symmetrized(g)
        return CsrRowsSource(sym.out_offsets, sym.out_targets, sym.n)
    if pe_mode == "kge":
        if pe_matrix is None:
            raise ConfigError("kge mode needs an embedding matrix")
        if pe_matrix.shape[0] != g.n:
            raise ConfigError(
                f"embedding table has {pe_matrix.shape[0]} rows, graph has "
                f"{g.n} nodes"
            )
        return DenseSource(pe_matrix)
    raise ConfigError(f"unknown positional-embedding mode {pe_mode!r}")


def run_glinkx(g, x, labels, masks, *, pe_mode="adjacency", pe_matrix=None,
               stage2_cfg=None, stage3_cfg=None, seed=0, drop=None,
               drop_scope="all"):
    """Full pipeline run; returns :class:`PipelineArtifacts`.

    ``drop``/``drop_scope`` implement the component ablations: ``drop`` is
    one of None, "ego", "pe", "propagation"; scope "all" removes the
    component everywhere, "stage3" only from the final model.  Dropping the
    propagation skips stage 2 entirely (its output would be unused).
    """
    if drop not in (None, "ego", "pe", "propagation"):
        raise ConfigError(f"unknown ablation {drop!r}")
    if drop_scope not in ("all", "stage3"):
        raise ConfigError(f"unknown ablation scope {drop_scope!r}")
    stage2_cfg = stage2_cfg or StageConfig()
    stage3_cfg = stage3_cfg or StageConfig()
    if x.shape[0] != g.n:
        raise ConfigError(f"feature matrix has {x.shape[0]} rows, graph has "
                          f"{g.n} nodes")
    if labels.y.shape[0] != g.n or masks.roles.shape[0] != g.n:
        raise ConfigError("labels and splits must cover every node")
    x_source = DenseSource(x)
    p_source = _pe_source(g, pe_mode, pe_matrix)

    s2_branches = {}
    if not (drop == "ego" and drop_scope == "all"):
        s2_branches["x"] = stage2_cfg.layers_x
    if not (drop == "pe" and drop_scope == "all"):
        s2_branches["p"] = stage2_cfg.layers_p
    if not s2_branches:
        raise ConfigError("ablation removed every stage-2 branch")

    with kernels.count_edge_passes() as window:
        stage2 = None
        ytilde = None
        yprime = None
        if drop == "propagation":
            logger.info("ablation: skipping stage 2 and the propagations")
        else:
            try:
                yhat = mlap_forward(g, labels, masks.train)
                sources2 = {"x": x_source, "p": p_source}
                sources2 = {k: sources2[k] for k in s2_branches}
                stage2, ytilde = stage2_train(
                    sources2, yhat, masks, stage2_cfg, seed,
                    branch_layers=s2_branches,
                )
                yprime = mlap_backward(g, ytilde)
            except PipelineError:
                raise
            except Exception as exc:
                raise PipelineError(f"stage2: {exc}") from exc

        s3_branches = {}
        if drop != "ego":
            s3_branches["x"] = stage3_cfg.layers_x
        if drop != "pe":
            s3_branches["p"] = stage3_cfg.layers_p
        if drop != "propagation":
            s3_branches["y"] = stage3_cfg.layers_y
        if not s3_branches:
            raise ConfigError("ablation removed every stage-3 branch")
        sources3 = {"x": x_source, "p": p_source}
        if yprime is not None:
            sources3["y"] = DenseSource(yprime.probs)
        sources3 = {k: sources3[k] for k in s3_branches}
        try:
            stage3, probs = stage3_train(
                sources3, labels, masks, stage3_cfg, seed,
                branch_layers=s3_branches,
            )
        except Exception as exc:
            raise PipelineError(f"stage3: {exc}") from exc

    test_ids = np.flatnonzero(masks.test)
    test_acc = _accuracy(probs[test_ids], labels.y[test_ids])
    return PipelineArtifacts(
        stage2=stage2,
        stage3=stage3,
        ytilde=ytilde,
        yprime=yprime,
        probs=probs,
        test_accuracy=test_acc,
        edge_passes=window.delta,
        message_width=labels.c,
        pe_mode=pe_mode,
        pe_matrix=pe_matrix,
        stage2_dropped=drop == "propagation",
        logs={
            "stage2": stage2.log if stage2 else [],
            "stage3": stage3.log,
        },
    )


@dataclass
class InductiveResult:
    probs: np.ndarray
    pe_fallback: np.ndarray  # new nodes that got a zero positional embedding
    yprime_fallback: np.ndarray  # new nodes with no out-neighbors


def infer_new_pes(artifacts, full_g, n_old, new_ids):
    """Positional embeddings for unseen nodes after the full graph is
    revealed.

    Embedding mode: the unweighted mean of trained-node embeddings over the
    revealed (undirected) neighborhood, zero vector when none exists.
    Adjacency mode: the node's revealed adjacency row restricted to trained
    columns.
    """
    if artifacts.pe_mode == "kge":
        table = artifacts.pe_matrix.astype(np.float64)
        out = np.zeros((new_ids.shape[0], table.shape[1]))
        fallback = np.zeros(new_ids.shape[0], dtype=bool)
        for pos, i in enumerate(new_ids):
            nbrs = np.concatenate([full_g.out_neighbors(i),
                                   full_g.in_neighbors(i)])
            nbrs = np.unique(nbrs[nbrs < n_old])
            if nbrs.size:
                out[pos] = table[nbrs].mean(axis=0)
            else:
                fallback[pos] = True
        return DenseSource(out), fallback
    # symmetrized adjacency rows over the trained column space
    cols = []
    fallback = np.zeros(new_ids.shape[0], dtype=bool)
    for pos, i in enumerate(new_ids):
        nbrs = np.concatenate([full_g.out_neighbors(i),
                               full_g.in_neighbors(i)])
        nbrs = np.unique(nbrs[nbrs < n_old])
        cols.append(nbrs)
        fallback[pos] = nbrs.size == 0
    indptr = np.zeros(new_ids.shape[0] + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([c.shape[0] for c in cols])
    indices = (np.concatenate(cols) if cols else
               np.zeros(0, dtype=np.int64)).astype(np.int64)
    source = CsrRowsSource(indptr, indices, n_old)
    return source, fallback


def inductive_predict(artifacts, full_g, x_new, new_ids=None):
    """Predict labels for nodes unseen at training time.

    The training-time artifacts cover nodes 0..n_old-1 of ``full_g``; the
    remaining nodes (or ``new_ids``) are new.  ``x_new`` holds their ego
    features, row-aligned with the new ids.  Follows the revealed-graph
    protocol: infer positional embeddings, predict neighbor distributions
    with the stage-2 model, propagate them backward over the revealed
    edges, then apply the stage-3 model.
    """
    needs_stage2 = "y" in artifacts.stage3.net.branch_names
    if needs_stage2 and (artifacts.stage2 is None or artifacts.ytilde is None):
        raise PipelineError("inductive prediction needs a stage-2 model")
    if artifacts.ytilde is not None:
        n_old = artifacts.ytilde.shape[0]
    else:
        n_old = full_g.n - np.asarray(x_new).shape[0]
    if new_ids is None:
        new_ids = np.arange(n_old, full_g.n, dtype=np.int64)
    else:
        new_ids = np.ascontiguousarray(new_ids, dtype=np.int64)
    if x_new.shape[0] != new_ids.shape[0]:
        raise ConfigError("x_new rows must align with the new node ids")
    c = artifacts.message_width

    p_new, pe_fallback = infer_new_pes(artifacts, full_g, n_old, new_ids)
    local = np.arange(new_ids.shape[0])
    x_source = DenseSource(x_new)

    ytilde_new = None
    if artifacts.stage2 is not None and artifacts.ytilde is not None:
        s2_sources = {}
        if "x" in artifacts.stage2.net.branch_names:
            s2_sources["x"] = x_source
        if "p" in artifacts.stage2.net.branch_names:
            s2_sources["p"] = p_new
        ytilde_new = predict_proba(artifacts.stage2.net, s2_sources, local)

    # neighbor-distribution lookup over the revealed graph: old nodes keep
    # their training-time predictions, new nodes use the fresh ones
    yprime_fallback = np.zeros(new_ids.shape[0], dtype=bool)
    y_new = None
    if ytilde_new is not None:
        ytilde_all = np.zeros((full_g.n, c))
        ytilde_all[:n_old] = artifacts.ytilde
        ytilde_all[new_ids] = ytilde_new
        y_new = np.empty((new_ids.shape[0], c))
        for pos, i in enumerate(new_ids):
            nbrs = full_g.out_neighbors(i)
            if nbrs.size:
                y_new[pos] = ytilde_all[nbrs].mean(axis=0)
            else:
                y_new[pos] = 1.0 / c
                yprime_fallback[pos] = True

    s3_sources = {}
    names = artifacts.stage3.net.branch_names
    if "x" in names:
        s3_sources["x"] = x_source
    if "p" in names:
        s3_sources["p"] = p_new
    if "y" in names:
        s3_sources["y"] = DenseSource(y_new)
    probs = predict_proba(artifacts.stage3.net, s3_sources, local)
    return InductiveResult(probs=probs, pe_fallback=pe_fallback,
                           yprime_fallback=yprime_fallback)
