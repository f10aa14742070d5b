"""Tiny scenes and configs that train in well under a second per epoch."""

from s2rcgcn.synth import SynthSpec, generate_synthetic
from s2rcgcn.trainer import TrainConfig

SMALL = dict(k=4, w=5, p=4, l_b=8, l_p=8, L=2, hidden=8, per_class=5, n_unlabeled=10, epochs=3, se_reduction=4)


def small_cube(seed=0, classes=3, sigma=0.05):
    return generate_synthetic(SynthSpec(height=16, width=16, bands=12, classes=classes, regions_per_class=2, noise_sigma=sigma, seed=seed))


def small_config(**over):
    return TrainConfig.from_dict({**SMALL, **over})


def end_to_end_grad_error(n_checks=20, seed=7):
    """Worst relative error of backprop vs central differences on a 12-node model.

    Graphs and the reliable set are frozen so the loss is a smooth function of
    the parameters away from ReLU/max-pool kinks. A probe whose estimates at
    two step sizes disagree straddles a kink and is redrawn.
    """
    import numpy as np

    from s2rcgcn.contrast import build_reliable_set, contrastive_total, cross_entropy, total_loss
    from s2rcgcn.numkit import make_rng, numeric_grad, ops
    from s2rcgcn.trainer import forward_full, init_state, prepare

    cube = small_cube(seed=2)
    cfg = small_config(per_class=3, n_unlabeled=3, k=3, tau=0.4)
    rng = make_rng(0)
    prep = prepare(cfg, cube, rng)
    batch = prep.train_batch
    assert len(batch) == 12
    model = init_state(cfg, cube.bands, cube.n_classes, rng).model
    graphs = forward_full(model, batch, cfg.k, training=True).graphs
    probs = np.full((12, cube.n_classes), 0.1)
    probs[:, 0] = 0.8
    rs = build_reliable_set(batch.y, probs / probs.sum(axis=1, keepdims=True), cfg.tau)
    assert rs.n_pseudo == 3
    lab = np.flatnonzero(batch.y > 0)

    def loss():
        out = forward_full(model, batch, cfg.k, training=True, graphs=graphs)
        ce = cross_entropy(ops.take_rows(out.logits, lab), batch.y[lab] - 1)
        return total_loss(contrastive_total(out.H_j, out.H_p, rs), ce).L_total

    params = model.named_parameters()
    model.zero_grad()
    loss().backward()
    pick = np.random.default_rng(seed)
    checked, worst = 0, 0.0
    while checked < n_checks:
        _, p = params[pick.integers(len(params))]
        i = int(pick.integers(p.data.size))
        n1 = numeric_grad(loss, p, 1e-6, index=i)[0]
        n2 = numeric_grad(loss, p, 1e-7, index=i)[0]
        if abs(n1 - n2) > 1e-4 * max(1.0, abs(n1)):
            continue
        worst = max(worst, abs(p.grad.reshape(-1)[i] - n1) / max(1.0, abs(n1)))
        checked += 1
    return worst
