import numpy as np
import pytest

from conftest import dense_adjacency, random_graph, random_labeled
from glinkx.errors import ConfigError, PipelineError
from glinkx.graph import LabelVector, SplitMasks, build_graph
from glinkx.nn import DenseSource
from glinkx.pipeline import (SoftLabels, StageConfig, inductive_predict,
                             mlap_backward, mlap_forward, run_glinkx,
                             stage2_train)
from glinkx.synth import PlantedConfig, generate_planted

FAST = StageConfig(epochs=25, dropout=0.0, lr=0.01)


class TestForwardProp:
    def test_neighbor_label_distribution(self):
        # five labeled in-neighbors: three of class 0, one of 1, one of 2
        edges = [(j, 5) for j in range(5)]
        g = build_graph(edges, 6)
        labels = LabelVector(y=np.array([0, 0, 0, 1, 2, 0]), c=3)
        train = np.ones(6, dtype=bool)
        yhat = mlap_forward(g, labels, train)
        assert np.allclose(yhat.probs[5], [0.6, 0.2, 0.2])

    def test_single_neighbor_one_hot(self):
        g = build_graph([(0, 1)], 2)
        labels = LabelVector(y=np.array([2, 0]), c=3)
        yhat = mlap_forward(g, labels, np.ones(2, dtype=bool))
        assert np.allclose(yhat.probs[1], [0.0, 0.0, 1.0])
        assert yhat.valid[1] and not yhat.valid[0]

    def test_only_train_sources_count(self):
        g = build_graph([(0, 2), (1, 2)], 3)
        labels = LabelVector(y=np.array([0, 1, 1]), c=2)
        train = np.array([True, False, True])
        yhat = mlap_forward(g, labels, train)
        assert np.allclose(yhat.probs[2], [1.0, 0.0])

    def test_matches_dense_oracle(self, rng):
        g, labels, masks = random_labeled(rng, 40)
        yhat = mlap_forward(g, labels, masks.train)
        a = dense_adjacency(g)
        onehot = np.eye(labels.c)[labels.y] * masks.train[:, None]
        counts = (a.T * masks.train[None, :]).sum(axis=1)
        expect = a.T @ onehot
        nz = counts > 0
        expect[nz] /= counts[nz, None]
        assert np.allclose(yhat.probs, expect, atol=1e-12)
        assert np.array_equal(yhat.valid, counts > 0)

    def test_no_signal_error(self):
        g = build_graph([], 3)
        labels = LabelVector(y=np.array([0, 1, 0]), c=2)
        with pytest.raises(PipelineError, match="no supervised"):
            mlap_forward(g, labels, np.ones(3, dtype=bool))


class TestBackwardProp:
    def test_star_center_mean(self, rng):
        edges = [(0, j) for j in range(1, 5)]
        g = build_graph(edges, 5)
        ytilde = rng.dirichlet(np.ones(3), size=5)
        yprime = mlap_backward(g, ytilde)
        assert np.allclose(yprime.probs[0], ytilde[1:5].mean(axis=0))

    def test_uniform_fixed_point(self):
        g = build_graph([(0, 1), (1, 2), (2, 0)], 3)
        uniform = np.full((3, 4), 0.25)
        yprime = mlap_backward(g, uniform)
        assert np.allclose(yprime.probs, 0.25)

    def test_zero_out_degree_uniform_flagged(self):
        g = build_graph([(0, 1)], 2)
        ytilde = np.array([[0.9, 0.1], [0.3, 0.7]])
        yprime = mlap_backward(g, ytilde)
        assert not yprime.valid[1]
        assert np.allclose(yprime.probs[1], 0.5)

    def test_matches_dense_oracle(self, rng):
        g = random_graph(rng, 40)
        ytilde = rng.dirichlet(np.ones(3), size=40)
        yprime = mlap_backward(g, ytilde)
        a = dense_adjacency(g)
        deg = a.sum(axis=1)
        expect = a @ ytilde
        nz = deg > 0
        expect[nz] /= deg[nz, None]
        expect[~nz] = 1 / 3
        assert np.allclose(yprime.probs, expect, atol=1e-12)

    def test_linearity_on_valid_rows(self, rng):
        g = random_graph(rng, 30)
        a = rng.dirichlet(np.ones(3), size=30)
        b = rng.dirichlet(np.ones(3), size=30)
        alpha = 0.3
        left = mlap_backward(g, alpha * a + (1 - alpha) * b)
        right_a = mlap_backward(g, a)
        right_b = mlap_backward(g, b)
        mix = alpha * right_a.probs + (1 - alpha) * right_b.probs
        valid = left.valid
        assert np.allclose(left.probs[valid], mix[valid], atol=1e-12)


class TestStage2:
    def test_uniform_targets_converge_to_log_c(self, rng):
        # no validation nodes: final-epoch parameters, the fitted net's
        # last-state cross entropy must settle at the uniform entropy
        n, c = 120, 3
        yhat = SoftLabels(probs=np.full((n, c), 1 / c),
                          valid=np.ones(n, dtype=bool))
        roles = np.zeros(n, dtype=np.uint8)
        roles[100:] = 2
        masks = SplitMasks(roles)
        sources = {"x": DenseSource(rng.normal(size=(n, 4))),
                   "p": DenseSource(rng.normal(size=(n, 3)))}
        cfg = StageConfig(epochs=200, dropout=0.0, lr=0.02)
        stage, ytilde = stage2_train(sources, yhat, masks, cfg, seed=0)
        from glinkx.nn import soft_cross_entropy

        ce = soft_cross_entropy(ytilde[masks.train], yhat.probs[masks.train])
        assert abs(ce - np.log(c)) < 1e-2

    def test_identifiable_targets_hit_entropy_floor(self, rng):
        # two feature groups, each with its own fixed target distribution
        n = 200
        group = rng.integers(0, 2, n)
        x = np.eye(2)[group]
        dists = np.array([[0.7, 0.2, 0.1], [0.1, 0.3, 0.6]])
        yhat = SoftLabels(probs=dists[group], valid=np.ones(n, dtype=bool))
        roles = np.zeros(n, dtype=np.uint8)
        roles[150:175] = 1
        roles[175:] = 2
        masks = SplitMasks(roles)
        sources = {"x": DenseSource(x),
                   "p": DenseSource(np.zeros((n, 2)))}
        cfg = StageConfig(epochs=250, dropout=0.0, lr=0.02)
        stage, ytilde = stage2_train(sources, yhat, masks, cfg, seed=0)
        from glinkx.nn import soft_cross_entropy

        floor = float(-(dists * np.log(dists)).sum(1)[group]
                      [masks.train].mean())
        ce = soft_cross_entropy(ytilde[masks.train], yhat.probs[masks.train])
        assert abs(ce - floor) < 0.05

    def test_deterministic(self, rng):
        g, labels, masks = random_labeled(rng, 60, symmetrize=True)
        outs = []
        for _ in range(2):
            yhat = mlap_forward(g, labels, masks.train)
            sources = {"x": DenseSource(np.eye(60)[labels.y % 60]),
                       "p": DenseSource(np.ones((60, 2)))}
            _, ytilde = stage2_train(sources, yhat, masks, FAST, seed=7)
            outs.append(ytilde)
        assert np.array_equal(outs[0], outs[1])


def _planted_monophilous(n=600, seed=0, noise=2.4):
    return generate_planted(PlantedConfig(
        n=n, c=4, k=10, regime="heterophilous", feat_dim=8, noise=noise,
        seed=seed,
    ))


class TestStage3AndRuns:
    def test_oracle_leak_features_reach_high_accuracy(self, rng):
        g, x, labels, masks = _planted_monophilous(seed=1)
        from glinkx.pipeline import stage3_train

        sources = {
            "x": DenseSource(x),
            "p": DenseSource(np.zeros((g.n, 2))),
            "y": DenseSource(labels.onehot()),
        }
        stage, probs = stage3_train(sources, labels, masks, FAST, seed=0)
        test_ids = np.flatnonzero(masks.test)
        acc = float(np.mean(probs[test_ids].argmax(1) == labels.y[test_ids]))
        assert acc >= 0.99

    def test_uniform_yprime_matches_ablation(self):
        # information-free propagated labels perform like the two-branch
        # ablation, within noise across seeds
        g, x, labels, masks = generate_planted(PlantedConfig(
            n=800, c=4, k=10, regime="heterophilous", feat_dim=8, noise=2.0,
            seed=2,
        ))
        from glinkx.pipeline import stage3_train

        cfg = StageConfig(epochs=60, dropout=0.0, lr=0.01)
        accs_uniform, accs_ablate = [], []
        test_ids = np.flatnonzero(masks.test)
        for seed in range(5):
            uniform = np.full((g.n, labels.c), 1 / labels.c)
            sources = {"x": DenseSource(x), "y": DenseSource(uniform)}
            _, probs = stage3_train(
                sources, labels, masks, cfg, seed=seed,
                branch_layers={"x": 1, "y": 1},
            )
            accs_uniform.append(
                np.mean(probs[test_ids].argmax(1) == labels.y[test_ids])
            )
            sources2 = {"x": DenseSource(x)}
            _, probs2 = stage3_train(
                sources2, labels, masks, cfg, seed=seed,
                branch_layers={"x": 1},
            )
            accs_ablate.append(
                np.mean(probs2[test_ids].argmax(1) == labels.y[test_ids])
            )
        assert abs(np.mean(accs_uniform) - np.mean(accs_ablate)) <= 0.02

    def test_monophilous_propagation_beats_ablation(self):
        from glinkx.kge import KgeConfig, kge_train

        g, x, labels, masks = generate_planted(PlantedConfig(
            n=800, c=4, k=12, regime="heterophilous", feat_dim=16, noise=1.5,
            seed=3,
        ))
        table, _ = kge_train(
            g, KgeConfig(dim=16, epochs=15, negatives=5, batch=8192, lr=0.2),
            seed=3,
        )
        pe = table.P.astype(np.float64)
        cfg = StageConfig(epochs=50, dropout=0.5, lr=0.01)
        full = run_glinkx(g, x, labels, masks, pe_mode="kge", pe_matrix=pe,
                          stage2_cfg=cfg, stage3_cfg=cfg, seed=0)
        dropped = run_glinkx(g, x, labels, masks, pe_mode="kge",
                             pe_matrix=pe, stage2_cfg=cfg, stage3_cfg=cfg,
                             seed=0, drop="propagation")
        assert full.test_accuracy - dropped.test_accuracy >= 0.10

    def test_exactly_two_edge_passes_regardless_of_epochs(self):
        g, x, labels, masks = _planted_monophilous(n=200, seed=4)
        for epochs in (3, 9):
            cfg = StageConfig(epochs=epochs, dropout=0.0)
            art = run_glinkx(g, x, labels, masks, pe_mode="adjacency",
                             stage2_cfg=cfg, stage3_cfg=cfg, seed=0)
            assert art.edge_passes == 2
            assert art.message_width == labels.c
            assert art.ytilde.shape[1] == labels.c
            assert art.yprime.probs.shape[1] == labels.c

    def test_same_seed_identical_reports(self):
        g, x, labels, masks = _planted_monophilous(n=200, seed=5)
        a1 = run_glinkx(g, x, labels, masks, pe_mode="adjacency",
                        stage2_cfg=FAST, stage3_cfg=FAST, seed=0)
        a2 = run_glinkx(g, x, labels, masks, pe_mode="adjacency",
                        stage2_cfg=FAST, stage3_cfg=FAST, seed=0)
        assert a1.test_accuracy == a2.test_accuracy
        assert np.array_equal(a1.probs, a2.probs)

    def test_homophilous_beats_one_hop_label_prop(self):
        from glinkx.synth import mixing_homophilous

        g, x, labels, masks = generate_planted(PlantedConfig(
            n=500, c=3, k=8, mixing=mixing_homophilous(3, 0.5), feat_dim=8,
            noise=0.8, seed=6,
        ))
        cfg = StageConfig(epochs=60, dropout=0.0, lr=0.01)
        art = run_glinkx(g, x, labels, masks, pe_mode="adjacency",
                         stage2_cfg=cfg, stage3_cfg=cfg, seed=0)
        from glinkx.baselines import LpConfig, label_prop, lp_accuracy

        best_lp = max(
            lp_accuracy(label_prop(g, labels, masks, LpConfig(alpha=a),
                                   assume_symmetric=True),
                        labels, masks.test)
            for a in (0.25, 0.5, 0.75, 0.9)
        )
        assert art.test_accuracy >= best_lp

    def test_kge_mode_requires_matrix(self):
        g, x, labels, masks = _planted_monophilous(n=200, seed=7)
        with pytest.raises(ConfigError):
            run_glinkx(g, x, labels, masks, pe_mode="kge",
                       stage2_cfg=FAST, stage3_cfg=FAST)


class TestAblations:
    def _tiny(self):
        return _planted_monophilous(n=200, seed=8)

    def test_remove_ego_stage3_only_structure(self):
        g, x, labels, masks = self._tiny()
        art = run_glinkx(g, x, labels, masks, pe_mode="adjacency",
                         stage2_cfg=FAST, stage3_cfg=FAST, seed=0,
                         drop="ego", drop_scope="stage3")
        assert "x" in art.stage2.net.branch_names
        assert "x" not in art.stage3.net.branch_names
        assert set(art.stage3.net.branch_names) == {"p", "y"}

    def test_remove_ego_all_structure(self):
        g, x, labels, masks = self._tiny()
        art = run_glinkx(g, x, labels, masks, pe_mode="adjacency",
                         stage2_cfg=FAST, stage3_cfg=FAST, seed=0,
                         drop="ego", drop_scope="all")
        assert art.stage2.net.branch_names == ["p"]
        assert set(art.stage3.net.branch_names) == {"p", "y"}

    def test_remove_propagation_drops_stage2(self):
        g, x, labels, masks = self._tiny()
        art = run_glinkx(g, x, labels, masks, pe_mode="adjacency",
                         stage2_cfg=FAST, stage3_cfg=FAST, seed=0,
                         drop="propagation")
        assert art.stage2 is None
        assert art.edge_passes == 0
        assert set(art.stage3.net.branch_names) == {"p", "x"}

    def test_remove_pe_smoke(self):
        g, x, labels, masks = self._tiny()
        art = run_glinkx(g, x, labels, masks, pe_mode="adjacency",
                         stage2_cfg=FAST, stage3_cfg=FAST, seed=0,
                         drop="pe", drop_scope="all")
        assert art.stage2.net.branch_names == ["x"]
        assert 0.0 <= art.test_accuracy <= 1.0

    def test_unknown_ablation_rejected(self):
        g, x, labels, masks = self._tiny()
        with pytest.raises(ConfigError):
            run_glinkx(g, x, labels, masks, drop="everything")


class TestLeakageGuard:
    def test_poisoned_eval_labels_leave_training_untouched(self):
        g, x, labels, masks = _planted_monophilous(n=200, seed=9)
        cfg = StageConfig(epochs=8, dropout=0.0, hash_params=True)

        def run(label_vec):
            return run_glinkx(g, x, label_vec, masks, pe_mode="adjacency",
                              stage2_cfg=cfg, stage3_cfg=cfg, seed=0)

        clean = run(labels)
        poisoned_y = labels.y.copy()
        eval_ids = ~masks.train
        rng = np.random.default_rng(0)
        poisoned_y[eval_ids] = rng.integers(0, labels.c, eval_ids.sum())
        poisoned = run(LabelVector(y=poisoned_y, c=labels.c))

        hashes = lambda art, stage: [r["param_hash"] for r in
                                     art.logs[stage]]
        assert hashes(clean, "stage2") == hashes(poisoned, "stage2")
        assert hashes(clean, "stage3") == hashes(poisoned, "stage3")
        # stage-2 selection is label-free, so its outputs match bitwise
        assert clean.stage2.best_epoch == poisoned.stage2.best_epoch
        assert np.array_equal(clean.ytilde, poisoned.ytilde)
        assert np.array_equal(clean.yprime.probs, poisoned.yprime.probs)


class TestInductive:
    def _trained(self, seed=10):
        g, x, labels, masks = generate_planted(PlantedConfig(
            n=300, c=4, k=8, regime="heterophilous", feat_dim=6, noise=1.5,
            seed=seed,
        ))
        art = run_glinkx(g, x, labels, masks, pe_mode="adjacency",
                         stage2_cfg=FAST, stage3_cfg=FAST, seed=0)
        return g, x, labels, masks, art

    def test_clone_of_train_node_matches_transductive(self):
        g, x, labels, masks, art = self._trained()
        train_ids = np.flatnonzero(masks.train)
        target = int(train_ids[0])
        nbrs = g.out_neighbors(target)
        clone = g.n
        new_edges = np.array([[clone, j] for j in nbrs] +
                             [[j, clone] for j in nbrs])
        all_edges = np.concatenate([g.edges(), new_edges])
        full = build_graph(all_edges, g.n + 1)
        result = inductive_predict(art, full, x[target][None, :])
        assert np.allclose(result.probs[0], art.probs[target], atol=1e-6)

    def test_isolated_new_node_falls_back(self):
        g, x, labels, masks, art = self._trained(seed=11)
        full = build_graph(g.edges(), g.n + 1)
        result = inductive_predict(art, full, np.zeros((1, x.shape[1])))
        assert result.pe_fallback[0]
        assert result.yprime_fallback[0]
        assert np.isfinite(result.probs).all()
        assert result.probs[0].sum() == pytest.approx(1.0)

    def test_inductive_close_to_transductive(self):
        cfg = PlantedConfig(n=400, c=4, k=10, regime="heterophilous",
                            feat_dim=8, noise=1.2, seed=12)
        g, x, labels, masks = generate_planted(cfg)
        rng = np.random.default_rng(0)
        held = np.zeros(g.n, dtype=bool)
        held[rng.choice(g.n, size=40, replace=False)] = True
        # transductive reference on the full graph
        art_full = run_glinkx(g, x, labels, masks, pe_mode="adjacency",
                              stage2_cfg=FAST, stage3_cfg=FAST, seed=0)
        trans_acc = float(np.mean(
            art_full.probs[held].argmax(1) == labels.y[held]
        ))
        # inductive: train on the rest, reveal the full graph
        from glinkx.graph import subgraph

        keep = ~held
        sub, old_ids = subgraph(g, keep)
        sub_labels = LabelVector(y=labels.y[old_ids], c=labels.c)
        roles = masks.roles[old_ids].copy()
        sub_masks = SplitMasks(roles)
        art = run_glinkx(sub, x[old_ids], sub_labels, sub_masks,
                         pe_mode="adjacency", stage2_cfg=FAST,
                         stage3_cfg=FAST, seed=0)
        # relabel the full graph so trained nodes come first
        order = np.concatenate([old_ids, np.flatnonzero(held)])
        pos = np.empty(g.n, dtype=np.int64)
        pos[order] = np.arange(g.n)
        e = g.edges()
        full = build_graph(np.stack([pos[e[:, 0]], pos[e[:, 1]]], 1), g.n)
        result = inductive_predict(art, full, x[held])
        ind_acc = float(np.mean(result.probs.argmax(1) == labels.y[held]))
        assert ind_acc >= trans_acc - 0.05


def test_forward_prop_skips_unknown_labels():
    g = build_graph([(0, 2), (1, 2)], 3)
    labels = LabelVector(y=np.array([0, -1, 1]), c=2)
    train = np.array([True, True, True])
    yhat = mlap_forward(g, labels, train)
    # node 1 is train but unlabeled: only node 0 contributes
    assert np.allclose(yhat.probs[2], [1.0, 0.0])
    assert yhat.valid[2]


def test_inductive_with_embedding_table():
    from glinkx.kge import KgeConfig, kge_train
    from glinkx.pipeline import infer_new_pes

    g, x, labels, masks = generate_planted(PlantedConfig(
        n=200, c=4, k=6, regime="heterophilous", feat_dim=6, noise=1.5,
        seed=13,
    ))
    table, _ = kge_train(g, KgeConfig(dim=8, epochs=5, negatives=4,
                                      batch=1024, lr=0.2), seed=0)
    pe = table.P.astype(np.float64)
    art = run_glinkx(g, x, labels, masks, pe_mode="kge", pe_matrix=pe,
                     stage2_cfg=FAST, stage3_cfg=FAST, seed=0)
    # attach a new node to three old ones
    new_edges = np.array([[200, 0], [0, 200], [200, 1], [1, 200],
                          [200, 2], [2, 200]])
    full = build_graph(np.concatenate([g.edges(), new_edges]), 201)
    result = inductive_predict(art, full, x[:1])
    assert result.probs.shape == (1, 4)
    assert not result.pe_fallback[0]
    # the inferred embedding is the mean of the revealed neighbors' rows
    p_src, _ = infer_new_pes(art, full, 200, np.array([200]))
    assert np.allclose(p_src.arr[0], pe[[0, 1, 2]].mean(axis=0))
