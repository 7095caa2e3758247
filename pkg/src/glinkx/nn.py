"""Shallow branch networks with manual reverse-mode gradients.

The model family used everywhere in this package: one MLP per input branch
(ego features, positional embeddings, optionally propagated soft labels),
a residual combiner (concat -> linear -> add branch skips -> ReLU), and an
aggregation MLP ending in a c-way linear head with softmax.

Everything is plain float64 NumPy with explicit forward caches and
hand-written backward passes; AdamW is the optimizer.  ``finite_diff_check``
verifies any configuration against central finite differences.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DimensionError, TrainingError

logger = logging.getLogger(__name__)

LOG_CLAMP = 1e-12  # floor inside log() to avoid -inf loss on underflow


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def soft_cross_entropy(probs, targets):
    """Mean over rows of -sum_l target_l * log(prob_l), log clamped."""
    logp = np.log(np.maximum(probs, LOG_CLAMP))
    return float(-(targets * logp).sum(axis=1).mean())


@dataclass
class SparseBatch:
    """A minibatch of binary sparse rows: ``row_ids`` select rows of the
    CSR structure (indptr, indices) whose columns live in [0, n_cols)."""

    indptr: np.ndarray
    indices: np.ndarray
    row_ids: np.ndarray
    n_cols: int


class DenseSource:
    """Per-node dense input matrix."""

    def __init__(self, arr):
        self.arr = np.ascontiguousarray(arr, dtype=np.float64)
        if not np.all(np.isfinite(self.arr)):
            raise DimensionError("non-finite values in dense input")
        self.dim = self.arr.shape[1]
        self.kind = "dense"

    def take(self, ids):
        return self.arr[ids]


class CsrRowsSource:
    """Per-node binary sparse rows (e.g. adjacency rows used as inputs)."""

    def __init__(self, indptr, indices, n_cols):
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        self.dim = int(n_cols)
        self.kind = "csr"

    def take(self, ids):
        return SparseBatch(self.indptr, self.indices,
                           np.ascontiguousarray(ids, dtype=np.int64), self.dim)


class Linear:
    def __init__(self, d_in, d_out, rng):
        bound = 1.0 / np.sqrt(d_in)
        self.W = rng.uniform(-bound, bound, size=(d_in, d_out))
        self.b = rng.uniform(-bound, bound, size=d_out)

    def forward(self, x):
        return x @ self.W + self.b

    def backward(self, x, g):
        dW = x.T @ g
        db = g.sum(axis=0)
        dx = g @ self.W.T
        return dx, dW, db


class SparseLinear(Linear):
    """Linear layer whose input is a batch of binary sparse rows."""

    def forward(self, batch):
        if batch.n_cols != self.W.shape[0]:
            raise DimensionError(
                f"sparse input has {batch.n_cols} columns, layer expects "
                f"{self.W.shape[0]}"
            )
        out = kernels.csr_rows_matmul(batch.indptr, batch.indices,
                                      batch.row_ids, self.W)
        return out + self.b

    def backward(self, batch, g):
        dW = np.zeros_like(self.W)
        kernels.csr_rows_matmul_t_add(batch.indptr, batch.indices,
                                      batch.row_ids, g, dW)
        db = g.sum(axis=0)
        return None, dW, db  # no gradient w.r.t. the data rows


class Mlp:
    """``n_layers`` linear layers with ReLU between them (none after the
    last).  The first layer may consume sparse rows."""

    def __init__(self, d_in, d_out, hidden, n_layers, rng, sparse_input=False):
        if n_layers < 1:
            raise DimensionError("an MLP needs at least one layer")
        dims = [d_in] + [hidden] * (n_layers - 1) + [d_out]
        self.layers = []
        for i in range(n_layers):
            cls = SparseLinear if (sparse_input and i == 0) else Linear
            self.layers.append(cls(dims[i], dims[i + 1], rng))

    def forward(self, x):
        cache = []
        for i, layer in enumerate(self.layers):
            z = layer.forward(x)
            cache.append((x, z))
            x = np.maximum(z, 0.0) if i < len(self.layers) - 1 else z
        return x, cache

    def backward(self, g, cache, grads, prefix):
        for i in range(len(self.layers) - 1, -1, -1):
            x, z = cache[i]
            if i < len(self.layers) - 1:
                g = g * (z > 0.0)
            g, dW, db = self.layers[i].backward(x, g)
            grads[f"{prefix}.{i}.W"] = dW
            grads[f"{prefix}.{i}.b"] = db
        return g


@dataclass
class NetConfig:
    """Architecture of a branch network.

    ``branch_layers`` maps branch name -> layer count; branch inputs are
    supplied at construction as sources.  ``agg_layers`` counts the layers
    of the aggregation MLP (its last layer outputs ``out_dim``).
    """

    branch_layers: dict
    out_dim: int
    hidden: int = 64
    agg_layers: int = 1
    dropout: float = 0.5
    seed: int = 0


class BranchNet:
    def __init__(self, cfg, sources):
        if not cfg.branch_layers:
            raise DimensionError("network needs at least one input branch")
        unknown = set(cfg.branch_layers) - set(sources)
        if unknown:
            raise DimensionError(f"no input source for branches {sorted(unknown)}")
        self.cfg = cfg
        self.branch_names = sorted(cfg.branch_layers)
        rng = np.random.default_rng(cfg.seed)
        self.branches = {}
        for name in self.branch_names:
            src = sources[name]
            self.branches[name] = Mlp(
                src.dim, cfg.hidden, cfg.hidden, cfg.branch_layers[name],
                rng, sparse_input=(src.kind == "csr"),
            )
        self.combine = Linear(cfg.hidden * len(self.branch_names), cfg.hidden, rng)
        self.agg = Mlp(cfg.hidden, cfg.out_dim, cfg.hidden, cfg.agg_layers, rng)

    # -- parameter plumbing ------------------------------------------------

    def _layers(self):
        for name in self.branch_names:
            for i, layer in enumerate(self.branches[name].layers):
                yield f"branch_{name}.{i}", layer
        yield "combine", self.combine
        for i, layer in enumerate(self.agg.layers):
            yield f"agg.{i}", layer

    def params(self):
        """Ordered (name, array) pairs; arrays are the live parameters."""
        out = []
        for prefix, layer in self._layers():
            out.append((f"{prefix}.W", layer.W))
            out.append((f"{prefix}.b", layer.b))
        return out

    def param_count(self):
        return int(sum(arr.size for _, arr in self.params()))

    def state(self):
        return {name: arr.copy() for name, arr in self.params()}

    def load_state(self, state):
        for name, arr in self.params():
            arr[...] = state[name]

    # -- forward / backward ------------------------------------------------

    def forward(self, inputs, training=False, dropout_rng=None):
        """Run the network on a batch.

        ``inputs`` maps branch name -> dense batch matrix or SparseBatch.
        Returns (logits, probs, cache); the cache carries everything the
        backward pass needs.
        """
        outs = {}
        caches = {}
        batch_rows = None
        for name in self.branch_names:
            x = inputs[name]
            if isinstance(x, np.ndarray):
                if not np.all(np.isfinite(x)):
                    raise DimensionError(f"non-finite input to branch {name}")
                rows = x.shape[0]
            else:
                rows = x.row_ids.shape[0]
            if batch_rows is None:
                batch_rows = rows
            elif rows != batch_rows:
                raise DimensionError("branch inputs disagree on batch size")
            outs[name], caches[name] = self.branches[name].forward(x)
        concat = np.concatenate([outs[n] for n in self.branch_names], axis=1)
        mask = None
        if training and self.cfg.dropout > 0.0:
            if dropout_rng is None:
                raise TrainingError("training-mode forward needs a dropout rng")
            keep = 1.0 - self.cfg.dropout
            mask = (dropout_rng.random(concat.shape) < keep) / keep
            dropped = concat * mask
        else:
            dropped = concat
        pre = self.combine.forward(dropped)
        for n in self.branch_names:
            pre = pre + outs[n]
        z = np.maximum(pre, 0.0)
        logits, agg_cache = self.agg.forward(z)
        probs = softmax(logits)
        cache = {
            "inputs": inputs, "branch_caches": caches, "concat": concat,
            "mask": mask, "dropped": dropped, "pre": pre, "z": z,
            "agg_cache": agg_cache, "probs": probs,
        }
        return logits, probs, cache

    def loss_and_grads(self, cache, targets):
        """Soft-target cross-entropy of the cached batch and exact gradients
        for every parameter."""
        probs = cache["probs"]
        if targets.shape != probs.shape:
            raise DimensionError(
                f"targets shape {targets.shape} != probs shape {probs.shape}"
            )
        batch = probs.shape[0]
        loss = soft_cross_entropy(probs, targets)
        grads = {}
        dlogits = (probs - targets) / batch
        dz = self.agg.backward(dlogits, cache["agg_cache"], grads, "agg")
        dpre = dz * (cache["pre"] > 0.0)
        ddropped, dWc, dbc = self.combine.backward(cache["dropped"], dpre)
        grads["combine.W"] = dWc
        grads["combine.b"] = dbc
        dconcat = ddropped if cache["mask"] is None else ddropped * cache["mask"]
        h = self.cfg.hidden
        for k, name in enumerate(self.branch_names):
            g_branch = dconcat[:, k * h : (k + 1) * h] + dpre
            self.branches[name].backward(
                g_branch, cache["branch_caches"][name], grads, f"branch_{name}"
            )
        return loss, grads


class AdamW:
    """Decoupled-weight-decay Adam over a net's (name, array) parameters."""

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {name: np.zeros_like(arr) for name, arr in self.params}
        self.v = {name: np.zeros_like(arr) for name, arr in self.params}

    def step(self, grads):
        self.t += 1
        for name, arr in self.params:
            g = grads[name]
            if not np.all(np.isfinite(g)):
                raise TrainingError(
                    f"non-finite gradient in {name} at step {self.t}",
                    param=name, step=self.t,
                )
            if self.weight_decay:
                arr *= 1.0 - self.lr * self.weight_decay
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            mhat = m / (1.0 - self.beta1 ** self.t)
            vhat = v / (1.0 - self.beta2 ** self.t)
            arr -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class TrainResult:
    best_state: dict
    best_epoch: int
    best_score: object
    log: list = field(default_factory=list)
    param_count: int = 0


def _take_batch(sources, inputs_names, ids):
    return {name: sources[name].take(ids) for name in inputs_names}


def predict_proba(net, sources, node_ids, batch_size=16384):
    """Eval-mode class probabilities for the given node ids."""
    node_ids = np.ascontiguousarray(node_ids, dtype=np.int64)
    out = np.empty((node_ids.shape[0], net.cfg.out_dim))
    for lo in range(0, node_ids.shape[0], batch_size):
        ids = node_ids[lo : lo + batch_size]
        _, probs, _ = net.forward(_take_batch(sources, net.branch_names, ids))
        out[lo : lo + ids.shape[0]] = probs
    return out


def param_fingerprint(net):
    """sha256 over the raw bytes of every parameter, in declaration order."""
    import hashlib

    digest = hashlib.sha256()
    for name, arr in net.params():
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(arr).tobytes())
    return digest.hexdigest()


def train_model(net, sources, targets, train_ids, *, epochs=200,
                batch_size=4096, lr=0.001, weight_decay=0.0,
                betas=(0.9, 0.999), eps=1e-8, seed=0, val_fn=None,
                hash_params=False):
    """Minibatch-train a :class:`BranchNet` with AdamW.

    ``targets`` is the full (n, c) soft-target matrix (one-hot rows for hard
    labels); only rows of ``train_ids`` are used for updates.  ``val_fn``
    is called after every epoch with the net in eval mode and must return
    ``(score, metrics_dict)``; the parameters of the epoch with the highest
    score are returned (ties keep the earlier epoch).  Without a ``val_fn``
    the final-epoch parameters are returned with a warning.

    Deterministic for a fixed seed: one rng drives batch shuffling, another
    the dropout masks.
    """
    train_ids = np.ascontiguousarray(train_ids, dtype=np.int64)
    if train_ids.size == 0:
        raise TrainingError("empty training set")
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    dropout_rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    opt = AdamW(net.params(), lr=lr, betas=betas, eps=eps,
                weight_decay=weight_decay)
    best = TrainResult(best_state=net.state(), best_epoch=-1, best_score=None,
                       param_count=net.param_count())
    for epoch in range(epochs):
        order = shuffle_rng.permutation(train_ids)
        epoch_loss = 0.0
        for lo in range(0, order.shape[0], batch_size):
            ids = order[lo : lo + batch_size]
            batch = _take_batch(sources, net.branch_names, ids)
            _, _, cache = net.forward(batch, training=True,
                                      dropout_rng=dropout_rng)
            loss, grads = net.loss_and_grads(cache, targets[ids])
            opt.step(grads)
            epoch_loss += loss * ids.shape[0]
        row = {"epoch": epoch, "train_loss": epoch_loss / order.shape[0]}
        if hash_params:
            row["param_hash"] = param_fingerprint(net)
        if val_fn is not None:
            score, metrics = val_fn(net)
            row.update(metrics)
            if best.best_score is None or score > best.best_score:
                best.best_score = score
                best.best_epoch = epoch
                best.best_state = net.state()
        best.log.append(row)
    if val_fn is None:
        logger.warning("no validation set: keeping final-epoch parameters")
        best.best_state = net.state()
        best.best_epoch = epochs - 1
    return best


def finite_diff_check(net, inputs, targets, step=1e-5):
    """Max relative error between analytic and central-difference gradients.

    Relative error per parameter entry is |a - f| / max(1, |a|, |f|); the
    maximum over all entries of all parameters is returned.  The check runs
    the eval-mode path (no dropout), which shares all code with training
    except the dropout mask.
    """
    _, _, cache = net.forward(inputs, training=False)
    _, grads = net.loss_and_grads(cache, targets)
    worst = 0.0
    for name, arr in net.params():
        analytic = grads[name]
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            _, probs_p, _ = net.forward(inputs, training=False)
            lp = soft_cross_entropy(probs_p, targets)
            flat[i] = orig - step
            _, probs_m, _ = net.forward(inputs, training=False)
            lm = soft_cross_entropy(probs_m, targets)
            flat[i] = orig
            fd = (lp - lm) / (2.0 * step)
            a = analytic.reshape(-1)[i]
            err = abs(a - fd) / max(1.0, abs(a), abs(fd))
            worst = max(worst, err)
    return worst
