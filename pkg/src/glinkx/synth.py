"""Synthetic planted graphs and instances for the error-bound harnesses.

Two generator families:

* :func:`generate_planted` builds near-K-regular labeled graphs whose
  neighbor classes follow a per-class mixing row, with Gaussian class-blob
  features.  Presets cover homophilous, heterophilous-but-monophilous
  (classes paired so a node's neighbors concentrate on its partner class),
  and mixed regimes (two subpopulations with opposite mixing, which makes
  the per-node homophily distribution bimodal).

* :func:`generate_theory_instance` builds the setting of the error-bound
  experiments: an exactly K-regular undirected graph, per-node class
  likelihoods P_i on the simplex, neighbor likelihoods Q_i equal to the
  neighborhood average of P by construction, features that make both the
  neighbor model and the label model softmax-linear well-specified, and
  labels sampled from P.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, GraphError
from .graph import LabelVector, SplitMasks, build_graph

logger = logging.getLogger(__name__)


def mixing_homophilous(c, self_weight=0.9):
    """Mostly-diagonal mixing: self_weight on the own class, rest uniform."""
    return self_weight * np.eye(c) + (1.0 - self_weight) / c * np.ones((c, c))


def mixing_paired(c):
    """Perfect monophilous heterophily: classes paired 2k <-> 2k+1, every
    neighbor drawn from the partner class."""
    if c % 2:
        raise ConfigError("paired mixing needs an even class count")
    m = np.zeros((c, c))
    for k in range(0, c, 2):
        m[k, k + 1] = 1.0
        m[k + 1, k] = 1.0
    return m


@dataclass
class PlantedConfig:
    n: int = 2000
    c: int = 4
    k: int = 10  # stubs drawn per node; symmetrization roughly doubles degree
    regime: str = "homophilous"  # homophilous | heterophilous | mixed
    mixing: np.ndarray = None  # custom mixing rows; overrides regime
    feat_dim: int = 16
    noise: float = 1.0
    centroid_scale: float = 1.0
    train_frac: float = 0.5
    valid_frac: float = 0.25
    seed: int = 0


def _mixing_for(cfg):
    if cfg.mixing is not None:
        m = np.asarray(cfg.mixing, dtype=np.float64)
        if m.shape != (cfg.c, cfg.c) or not np.allclose(m.sum(axis=1), 1.0):
            raise ConfigError("mixing must be a row-stochastic c x c matrix")
        return m
    if cfg.regime == "homophilous":
        return mixing_homophilous(cfg.c)
    if cfg.regime == "heterophilous":
        return mixing_paired(cfg.c)
    if cfg.regime == "mixed":
        return None  # handled per subpopulation
    raise ConfigError(f"unknown regime {cfg.regime!r}")


def _draw_edges(rng, nodes, y, mixing, k, class_members):
    """k neighbor stubs per node; target class from the node's mixing row,
    target node uniform in that class (avoiding self)."""
    src = np.repeat(nodes, k)
    tgt_classes = np.concatenate([
        rng.choice(len(mixing), size=k, p=mixing[y[i]]) for i in nodes
    ])
    dst = np.empty_like(src)
    for cls in range(len(mixing)):
        where = np.flatnonzero(tgt_classes == cls)
        members = class_members[cls]
        if members.size == 0:
            raise GraphError(f"mixing targets empty class {cls}")
        dst[where] = members[rng.integers(0, members.size, size=where.size)]
    for _ in range(100):
        self_loop = src == dst
        if not np.any(self_loop):
            break
        for i in np.flatnonzero(self_loop):
            members = class_members[tgt_classes[i]]
            dst[i] = members[rng.integers(0, members.size)]
    else:
        raise GraphError("could not avoid self-loops; classes too small")
    return np.stack([src, dst], axis=1)


def generate_planted(cfg):
    """Build (graph, features, labels, masks) for a planted configuration.

    The graph is undirected (symmetrized) with roughly 2k average degree.
    Features are the class centroid plus Gaussian noise.
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5]))
    if cfg.k >= cfg.n:
        raise ConfigError(f"degree {cfg.k} infeasible for n={cfg.n}")
    if cfg.k < 1:
        raise ConfigError("degree must be at least 1")
    y = np.arange(cfg.n) % cfg.c
    rng.shuffle(y)
    class_members = [np.flatnonzero(y == cls) for cls in range(cfg.c)]
    for cls, members in enumerate(class_members):
        if members.size == 0:
            raise GraphError(f"class {cls} has no nodes")

    if cfg.regime == "mixed" and cfg.mixing is None:
        half = cfg.n // 2
        groups = [np.arange(half), np.arange(half, cfg.n)]
        mixings = [mixing_homophilous(cfg.c), mixing_paired(cfg.c)]
        edges = []
        for nodes, mixing in zip(groups, mixings):
            members = [np.intersect1d(m, nodes) for m in class_members]
            edges.append(_draw_edges(rng, nodes, y, mixing, cfg.k, members))
        edges = np.concatenate(edges)
    else:
        mixing = _mixing_for(cfg)
        edges = _draw_edges(rng, np.arange(cfg.n), y, mixing, cfg.k,
                            class_members)
    g = build_graph(edges, cfg.n, symmetrize=True)

    centroids = rng.normal(size=(cfg.c, cfg.feat_dim))
    centroids *= cfg.centroid_scale / np.linalg.norm(centroids, axis=1,
                                                     keepdims=True)
    x = centroids[y] + cfg.noise * rng.normal(size=(cfg.n, cfg.feat_dim))

    order = rng.permutation(cfg.n)
    n_train = int(cfg.train_frac * cfg.n)
    n_valid = int(cfg.valid_frac * cfg.n)
    masks = SplitMasks.from_indices(
        cfg.n, order[:n_train], order[n_train : n_train + n_valid],
        order[n_train + n_valid :],
    )
    return g, x, LabelVector(y=y, c=cfg.c), masks


@dataclass
class TheoryConfig:
    n: int = 1000  # rounded up to a whole number of blocks
    c: int = 3
    k: int = 10
    logit_scale: float = 1.5  # spread of the ground-truth likelihood logits
    seed: int = 0
    enforce_min_degree: bool = True  # require K > c^2


@dataclass
class TheoryInstance:
    """Ground truth for the estimation-error experiments.

    The graph is a disjoint union of complete bipartite blocks with K nodes
    per side (so it is exactly K-regular), and every node carries its
    side's class likelihood.  This gives both neighbor-mean identities
    exactly: ``q_target`` (neighbor likelihood) is the neighborhood mean of
    ``p_target``, and the neighborhood mean of ``q_target`` recovers
    ``p_target`` (the two-hop structure the smoothed surrogate relies on).
    Features make both likelihoods softmax-linear well-specified: the
    selector matrices ``theta_star`` / ``w_star`` recover them exactly.
    """

    g: object
    p_target: np.ndarray  # (n, c) own-class likelihoods P_i
    q_target: np.ndarray  # (n, c) neighbor likelihoods Q_i
    xi: np.ndarray  # (n, 2c) features
    y: np.ndarray  # labels sampled from P
    theta_star: np.ndarray  # (c, 2c) selector: softmax(xi @ theta_star.T) == Q
    w_star: np.ndarray  # (c, 2c) selector: softmax(xi @ w_star.T) == P
    config: TheoryConfig = None

    def resample_labels(self, rng):
        return _sample_labels(rng, self.p_target)


def _bipartite_blocks(n, k):
    """Disjoint complete bipartite blocks, k nodes per side; exactly
    k-regular.  Returns (graph, side id per node) with n rounded up to a
    multiple of 2k."""
    if k < 1:
        raise ConfigError("degree must be at least 1")
    blocks = max(1, -(-n // (2 * k)))
    n_eff = blocks * 2 * k
    left = np.arange(n_eff).reshape(blocks, 2 * k)[:, :k]
    right = np.arange(n_eff).reshape(blocks, 2 * k)[:, k:]
    src = np.repeat(left, k, axis=1).ravel()
    dst = np.tile(right, (1, k)).ravel()
    g = build_graph(np.stack([src, dst], axis=1), n_eff, symmetrize=True)
    sides = np.zeros(n_eff, dtype=np.int64)
    sides[right.ravel()] = 1
    sides += 2 * (np.arange(n_eff) // (2 * k))  # unique id per block side
    return g, sides


def _sample_labels(rng, p):
    u = rng.random(p.shape[0])
    cdf = np.cumsum(p, axis=1)
    return (u[:, None] < cdf).argmax(axis=1).astype(np.int64)


def generate_theory_instance(cfg):
    if cfg.enforce_min_degree and cfg.k <= cfg.c ** 2:
        raise ConfigError(
            f"minimum degree must exceed c^2={cfg.c ** 2}, got K={cfg.k}; "
            "pass enforce_min_degree=False to run outside that regime"
        )
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7]))
    g, sides = _bipartite_blocks(cfg.n, cfg.k)
    n_sides = int(sides.max()) + 1
    logits = cfg.logit_scale * rng.normal(size=(n_sides, cfg.c))
    side_p = np.exp(logits - logits.max(axis=1, keepdims=True))
    side_p /= side_p.sum(axis=1, keepdims=True)
    p = side_p[sides]
    partner = sides ^ 1  # the opposite side of the same block
    q = side_p[partner]
    xi = np.concatenate([np.log(q), np.log(p)], axis=1)
    c = cfg.c
    theta_star = np.concatenate([np.eye(c), np.zeros((c, c))], axis=1)
    w_star = np.concatenate([np.zeros((c, c)), np.eye(c)], axis=1)
    y = _sample_labels(rng, p)
    return TheoryInstance(g=g, p_target=p, q_target=q, xi=xi, y=y,
                          theta_star=theta_star, w_star=w_star, config=cfg)
