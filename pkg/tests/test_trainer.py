import json

import numpy as np
import pytest

from s2rcgcn.errors import ConfigError
from s2rcgcn.numkit import make_rng, no_grad
from s2rcgcn.trainer import (
    LOG_HEADER,
    TrainConfig,
    forward_full,
    init_state,
    predict,
    prepare,
    run_experiment,
    run_seeds,
    train,
    train_epoch,
)
from s2rcgcn.synth import SynthSpec, generate_synthetic
from small import end_to_end_grad_error, small_config, small_cube


@pytest.fixture(scope="module")
def setup():
    cfg = small_config()
    cube = small_cube()
    rng = make_rng(cfg.seed)
    prep = prepare(cfg, cube, rng)
    return cfg, cube, prep, rng


def fresh_state(cfg, cube, seed=0):
    return init_state(cfg, cube.bands, cube.n_classes, make_rng(seed))


# ---------------------------------------------------------------- config


def test_config_defaults():
    cfg = TrainConfig()
    assert (cfg.k, cfg.w, cfg.p, cfg.tau, cfg.T, cfg.lr, cfg.epochs) == (10, 9, 8, 0.99, 1.0, 1e-3, 200)


@pytest.mark.parametrize(
    "key,value", [("k", 0), ("w", 4), ("tau", 1.0), ("T", 0.0), ("lr", -1.0), ("R", 0), ("no_se", 1), ("epochs", 2.5)]
)
def test_config_rejects_with_key_name(key, value):
    with pytest.raises(ConfigError, match=f"'{key}'"):
        TrainConfig.from_dict({key: value})


def test_config_unknown_key(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"k": 5, "bogus": 1}))
    with pytest.raises(ConfigError, match="bogus"):
        TrainConfig.load(path)


def test_config_file_round_trip(tmp_path):
    cfg = small_config(tau=0.95, lr=2)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert TrainConfig.load(path) == cfg


# ---------------------------------------------------------------- forward


def test_forward_shapes(setup):
    cfg, cube, prep, _ = setup
    state = fresh_state(cfg, cube)
    out = forward_full(state.model, prep.train_batch, cfg.k, training=False)
    n = len(prep.train_batch)
    assert out.logits.shape == (n, cube.n_classes)
    assert out.H_p.shape == (n, cfg.hidden) and out.H_j.shape == (n, cfg.hidden)
    np.testing.assert_allclose(out.pseudo_probs.sum(axis=1), 1.0)
    assert out.graphs.spatial.n_nodes == n


def test_no_fusion_joint_branch_consumes_spectral(setup):
    cfg, cube, prep, _ = setup
    state = fresh_state(small_config(no_fusion=True), cube)
    assert state.model.branch_j.layers[0].lin.weight.shape[0] == cfg.l_b
    z_p, z_in = state.model.encode(prep.train_batch, training=False)
    z_b = state.model.spectral(prep.train_batch.X_b, False)
    np.testing.assert_array_equal(z_in.data, z_b.data)
    fused = fresh_state(cfg, cube)
    assert fused.model.branch_j.layers[0].lin.weight.shape[0] == cfg.l_b + cfg.l_p


def test_no_se_removes_gates(setup):
    cfg, cube, _, _ = setup
    with_se = {n for n, _ in fresh_state(cfg, cube).model.named_parameters()}
    without = {n for n, _ in fresh_state(small_config(no_se=True), cube).model.named_parameters()}
    assert without < with_se
    assert all(".se." in n for n in with_se - without)


def test_eval_forward_idempotent(setup):
    cfg, cube, prep, _ = setup
    state = fresh_state(cfg, cube)
    with no_grad():
        a = forward_full(state.model, prep.train_batch, cfg.k, training=False).logits.data
        b = forward_full(state.model, prep.train_batch, cfg.k, training=False).logits.data
    assert a.tobytes() == b.tobytes()


# ---------------------------------------------------------------- training


def test_loss_strictly_decreases_first_ten_epochs():
    # default scene and config; tiny models are too noisy for a strict ordering
    cube = generate_synthetic(SynthSpec())
    cfg = TrainConfig(epochs=10)
    state, _, lines, _ = train(cfg, cube)
    losses = [float(line.split(",")[3]) for line in lines]
    assert all(b < a for a, b in zip(losses, losses[1:])), losses


def test_lr_zero_leaves_parameters(setup):
    cfg, cube, prep, _ = setup
    state = fresh_state(small_config(lr=0), cube)
    before = {n: p.data.copy() for n, p in state.model.named_parameters()}
    for _ in range(2):
        train_epoch(state, prep.train_batch)
    for n, p in state.model.named_parameters():
        assert np.array_equal(before[n], p.data), n


def test_identical_seed_identical_losses():
    cube = small_cube()
    a = train(small_config(epochs=4), cube)[2]
    b = train(small_config(epochs=4), cube)[2]
    assert a == b
    c = train(small_config(epochs=4, seed=1), cube)[2]
    assert a != c


def test_no_contrast_drops_contrastive_term(setup):
    cfg, cube, prep, _ = setup
    state = fresh_state(small_config(no_contrast=True), cube)
    terms, diag = train_epoch(state, prep.train_batch)
    l_c, l_ce, l_total = terms.values()
    assert l_c == 0.0 and l_total == l_ce and diag["pseudo_accepted"] == 0


def test_graph_cached_between_refresh_epochs(setup):
    _, cube, prep, _ = setup
    state = fresh_state(small_config(R=3), cube)
    flags = [train_epoch(state, prep.train_batch)[1]["graph_rebuilt"] for _ in range(7)]
    assert flags == [True, False, False, True, False, False, True]


def test_rebuild_with_frozen_parameters_is_noop(setup):
    cfg, cube, prep, _ = setup
    state = fresh_state(small_config(lr=0), cube)
    train_epoch(state, prep.train_batch)
    first = state.graph_cache
    state.epoch = 0  # force a refresh
    train_epoch(state, prep.train_batch)
    for a, b in zip(first, state.graph_cache):
        assert (a.adjacency != b.adjacency).nnz == 0


# ---------------------------------------------------------------- inference


def test_predict_on_training_nodes_matches_eval_forward(setup):
    cfg, cube, prep, _ = setup
    state = fresh_state(cfg, cube)
    for _ in range(3):
        train_epoch(state, prep.train_batch)
    with no_grad():
        expect = forward_full(state.model, prep.train_batch, cfg.k, training=False).logits.data.argmax(axis=1) + 1
    np.testing.assert_array_equal(predict(state, prep.train_batch, prep.train_batch), expect)


def test_predict_permutation_invariant(setup):
    cfg, cube, prep, _ = setup
    from s2rcgcn.preprocess import extract_patches

    state = fresh_state(cfg, cube)
    q = extract_patches(prep.cube, prep.pca, prep.test_coords[:40], cfg.w)
    base = predict(state, prep.train_batch, q)
    perm = np.random.default_rng(1).permutation(len(q))
    np.testing.assert_array_equal(predict(state, prep.train_batch, q.subset(perm)), base[perm])


def test_predict_empty_query(setup):
    cfg, cube, prep, _ = setup
    state = fresh_state(cfg, cube)
    assert predict(state, prep.train_batch, prep.train_batch.subset([])).shape == (0,)


def test_split_excludes_training_and_pool(setup):
    _, cube, prep, _ = setup
    used = {tuple(c) for c in np.concatenate([prep.train_coords, prep.unlabeled_coords]).tolist()}
    test = {tuple(c) for c in prep.test_coords.tolist()}
    assert not used & test
    assert len(used) + len(test) == int((cube.labels > 0).sum())
    assert (prep.train_batch.y[len(prep.train_coords):] == 0).all()


# ---------------------------------------------------------------- end-to-end gradient


def test_end_to_end_gradient_twelve_nodes():
    assert end_to_end_grad_error() < 1e-3


# ---------------------------------------------------------------- experiments


def test_run_experiment_report(setup):
    cfg, cube, prep, _ = setup
    result = run_experiment(cfg, cube)
    r = result.report
    assert r.confusion.sum(axis=1).tolist() == [int((prep.cube.labels[tuple(prep.test_coords.T)] == c).sum()) for c in (1, 2, 3)]
    assert 0.0 <= r.oa <= 1.0
    assert result.log_text.splitlines()[0] == LOG_HEADER
    assert len(result.log_lines) == cfg.epochs


def test_run_seeds_mean_std():
    reports, summary = run_seeds(small_config(epochs=1), small_cube(), [1, 2, 3, 4, 5])
    assert len(reports) == 5
    oas = [r.oa for r in reports]
    assert summary["oa"] == pytest.approx((np.mean(oas), np.std(oas, ddof=1)))


def test_impossible_split_reports_class():
    with pytest.raises(Exception, match="class"):
        run_experiment(small_config(per_class=500), small_cube())
