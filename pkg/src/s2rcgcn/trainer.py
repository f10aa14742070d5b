"""Model assembly, full-batch training, transductive inference and experiments."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .contrast import LossTerms, build_reliable_set, contrastive_total, cross_entropy, drop_nodes, total_loss
from .encoders import EncoderConfig, SpatialEncoder, SpectralEncoder, fuse
from .errors import ConfigError, ContractError
from .graph import GcnBranch, GraphData, build_graph
from .metrics import MetricsReport, compute_metrics, summarize
from .numkit import Adam, Affine, Module, Tensor, make_rng, no_grad, ops
from .preprocess import HsiCube, PcaModel, SampleBatch, extract_patches, fit_pca, normalize_bands, split_samples

log = logging.getLogger(__name__)

LOG_HEADER = "epoch,L_C,L_ce,L_total,pseudo_accepted,OA_train"


@dataclass
class TrainConfig:
    k: int = 10
    w: int = 9
    p: int = 8
    l_b: int = 64
    l_p: int = 64
    L: int = 2
    tau: float = 0.99
    T: float = 1.0
    lr: float = 1e-3
    epochs: int = 200
    R: int = 5
    per_class: int = 20
    seed: int = 0
    no_fusion: bool = False
    no_se: bool = False
    no_contrast: bool = False
    # not named by the model description; artifact-level knobs
    hidden: int = 64
    se_reduction: int = 8
    n_unlabeled: int = 140
    block_size: int = 512

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(ok, key, why):
            if not ok:
                raise ConfigError(f"config key '{key}'={getattr(self, key)!r}: {why}")

        for f in fields(self):
            v = getattr(self, f.name)
            if f.type in ("bool", bool):
                need(isinstance(v, (bool, np.bool_)), f.name, "must be a boolean")
            elif f.type in ("int", int):
                need(isinstance(v, (int, np.integer)) and not isinstance(v, bool), f.name, "must be an integer")
            else:
                need(isinstance(v, (int, float)) and not isinstance(v, bool), f.name, "must be a number")
        need(self.k >= 1, "k", "must be >= 1")
        need(self.w >= 3 and self.w % 2 == 1, "w", "must be odd and >= 3")
        need(self.p >= 1, "p", "must be >= 1")
        need(self.l_b >= 1, "l_b", "must be >= 1")
        need(self.l_p >= 1, "l_p", "must be >= 1")
        need(self.L >= 0, "L", "must be >= 0")
        need(0.0 < self.tau < 1.0, "tau", "must lie in (0, 1)")
        need(self.T > 0, "T", "must be positive")
        need(self.lr >= 0, "lr", "must be >= 0")
        need(self.epochs >= 0, "epochs", "must be >= 0")
        need(self.R >= 1, "R", "must be >= 1")
        need(self.per_class >= 1, "per_class", "must be >= 1")
        need(0 <= self.seed < 2**64, "seed", "must be a 64-bit unsigned integer")
        need(self.hidden >= 1, "hidden", "must be >= 1")
        need(self.se_reduction >= 1, "se_reduction", "must be >= 1")
        need(self.n_unlabeled >= 0, "n_unlabeled", "must be >= 0")
        need(self.block_size >= 1, "block_size", "must be >= 1")

    @classmethod
    def from_dict(cls, d: Dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        for key in d:
            if key not in known:
                raise ConfigError(f"unknown config key '{key}'")
        clean = {}
        for key, v in d.items():
            if known[key].type in ("float", float) and isinstance(v, int) and not isinstance(v, bool):
                v = float(v)
            clean[key] = v
        return cls(**clean)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must be a flat key/value object")
        return cls.from_dict(data)

    def to_dict(self) -> Dict:
        return asdict(self)

    def encoder_config(self, bands: int) -> EncoderConfig:
        return EncoderConfig(
            bands=bands,
            pca_dim=self.p,
            patch=self.w,
            l_b=self.l_b,
            l_p=self.l_p,
            se_reduction=self.se_reduction,
            use_se=not self.no_se,
        )


class S2RCModel(Module):
    """Encoders, two graph-convolution branches and the linear classifier."""

    def __init__(self, cfg: TrainConfig, bands: int, n_classes: int, rng: np.random.Generator):
        enc = cfg.encoder_config(bands)
        self.spectral = SpectralEncoder(enc, rng)
        self.spatial = SpatialEncoder(enc, rng)
        joint_in = cfg.l_b if cfg.no_fusion else cfg.l_b + cfg.l_p
        self.branch_p = GcnBranch(cfg.l_p, cfg.hidden, cfg.L, rng)
        self.branch_j = GcnBranch(joint_in, cfg.hidden, cfg.L, rng)
        self.classifier = Affine(self.branch_p.out_dim + self.branch_j.out_dim, n_classes, rng)
        self._no_fusion = cfg.no_fusion

    def encode(self, batch: SampleBatch, training: bool) -> Tuple[Tensor, Tensor]:
        """Returns ``(Z_p, joint-branch input)``; the latter is Z_j, or Z_b without fusion."""
        z_b = self.spectral(batch.X_b, training)
        z_p = self.spatial(batch.X_p, training)
        return z_p, (z_b if self._no_fusion else fuse(z_b, z_p))


class Graphs(NamedTuple):
    spatial: GraphData
    joint: GraphData


class ForwardOutput(NamedTuple):
    H_p: Tensor
    H_j: Tensor
    logits: Tensor
    pseudo_probs: np.ndarray
    graphs: Graphs


def build_graphs(z_p: Tensor, z_j: Tensor, k: int) -> Graphs:
    return Graphs(build_graph(z_p, k), build_graph(z_j, k))


def propagate(model: S2RCModel, z_p: Tensor, z_j: Tensor, k: int, training: bool,
              graphs: Optional[Graphs] = None) -> ForwardOutput:
    if graphs is None:
        graphs = build_graphs(z_p, z_j, k)
    h_p = model.branch_p(z_p, graphs.spatial, training)
    h_j = model.branch_j(z_j, graphs.joint, training)
    logits = model.classifier(ops.concat_cols([h_p, h_j]))
    with no_grad():
        probs = ops.softmax_rows(Tensor(logits.data)).data
    return ForwardOutput(h_p, h_j, logits, probs, graphs)


def forward_full(model: S2RCModel, batch: SampleBatch, k: int, training: bool,
                 graphs: Optional[Graphs] = None) -> ForwardOutput:
    """Encode, (re)build both kNN graphs unless given, propagate and classify."""
    z_p, z_j = model.encode(batch, training)
    return propagate(model, z_p, z_j, k, training, graphs)


@dataclass
class ModelState:
    config: TrainConfig
    bands: int
    n_classes: int
    model: S2RCModel
    optimizer: Adam
    epoch: int = 0
    pca: Optional[PcaModel] = None
    train_coords: Optional[np.ndarray] = None
    unlabeled_coords: Optional[np.ndarray] = None
    class_names: List[str] = field(default_factory=list)
    rng: Optional[np.random.Generator] = field(default=None, repr=False)
    graph_cache: Optional[Graphs] = field(default=None, repr=False)


def init_state(cfg: TrainConfig, bands: int, n_classes: int, rng: np.random.Generator) -> ModelState:
    model = S2RCModel(cfg, bands, n_classes, rng)
    return ModelState(cfg, bands, n_classes, model, Adam(model.parameters(), lr=cfg.lr), rng=rng)


def pseudo_probabilities(state: ModelState, batch: SampleBatch) -> np.ndarray:
    """Class probabilities from an eval-mode pass with no graph recording."""
    with no_grad():
        return forward_full(state.model, batch, state.config.k, training=False).pseudo_probs


def train_epoch(state: ModelState, batch: SampleBatch) -> Tuple[LossTerms, Dict]:
    """One full-batch Adam step on L_C + L_ce; mutates ``state``."""
    cfg = state.config
    labeled = np.flatnonzero(batch.y > 0)
    if len(labeled) == 0:
        raise ContractError("training batch has no labeled nodes")
    diag: Dict = {"epoch": state.epoch}
    if cfg.no_contrast:
        rs = None
        diag["pseudo_accepted"] = 0
    else:
        probs = pseudo_probabilities(state, batch)
        rs = build_reliable_set(batch.y, probs, cfg.tau, cfg.T)
        diag.update(
            pseudo_probs=probs,
            pseudo_accepted=rs.n_pseudo,
            accepted_per_class=rs.accepted_per_class.tolist(),
            skipped_anchors=rs.skipped_anchors,
        )
    rebuild = state.graph_cache is None or state.epoch % cfg.R == 0
    out = forward_full(state.model, batch, cfg.k, training=True, graphs=None if rebuild else state.graph_cache)
    state.graph_cache = out.graphs
    diag["graph_rebuilt"] = rebuild
    if rs is None:
        l_c = Tensor(0.0)
    else:
        # all-zero ReLU outputs have no direction; leave them out of this epoch's contrast
        dead = ~(out.H_j.data.any(axis=1) & out.H_p.data.any(axis=1))
        if dead.any():
            rs = drop_nodes(rs, dead)
        diag["zero_feature_nodes"] = int(dead.sum())
        diag["skipped_anchors"] = rs.skipped_anchors
        l_c = contrastive_total(out.H_j, out.H_p, rs)
    l_ce = cross_entropy(ops.take_rows(out.logits, labeled), batch.y[labeled] - 1)
    terms = total_loss(l_c, l_ce)
    pred = out.logits.data[labeled].argmax(axis=1) + 1
    diag["oa_train"] = float((pred == batch.y[labeled]).mean())
    state.optimizer.zero_grad()
    terms.L_total.backward()
    state.optimizer.step()
    state.epoch += 1
    return terms, diag


def format_log_line(epoch: int, terms: LossTerms, diag: Dict) -> str:
    l_c, l_ce, l_total = terms.values()
    return f"{epoch},{l_c:.12g},{l_ce:.12g},{l_total:.12g},{diag['pseudo_accepted']},{diag['oa_train']:.12g}"


def predict(state: ModelState, train_batch: SampleBatch, query_batch: SampleBatch,
            block_size: Optional[int] = None) -> np.ndarray:
    """Labels (1..C) for the query nodes by transductive block inference.

    Each block of queries is appended to the training nodes and both graphs
    are rebuilt over the union. A query whose coordinate coincides with a
    training node reuses that node instead of being duplicated.
    """
    if len(query_batch) == 0:
        return np.zeros(0, dtype=np.int64)
    cfg = state.config
    block_size = block_size or cfg.block_size
    model = state.model
    n_train = len(train_batch)
    train_index = {tuple(c): i for i, c in enumerate(np.asarray(train_batch.coords).tolist())}
    out = np.zeros(len(query_batch), dtype=np.int64)
    with no_grad():
        zp_train, zj_train = model.encode(train_batch, training=False)
        for start in range(0, len(query_batch), block_size):
            idx = np.arange(start, min(start + block_size, len(query_batch)))
            known = np.array([train_index.get(tuple(c), -1) for c in query_batch.coords[idx].tolist()], dtype=np.int64)
            fresh = idx[known < 0]
            if len(fresh):
                zp_q, zj_q = model.encode(query_batch.subset(fresh), training=False)
                z_p = Tensor(np.concatenate([zp_train.data, zp_q.data]))
                z_j = Tensor(np.concatenate([zj_train.data, zj_q.data]))
            else:
                z_p, z_j = zp_train, zj_train
            fwd = propagate(model, z_p, z_j, cfg.k, training=False)
            labels = fwd.logits.data.argmax(axis=1) + 1
            pos = known.copy()
            pos[known < 0] = n_train + np.arange(len(fresh))
            out[idx] = labels[pos]
    return out


# ---------------------------------------------------------------- experiments


@dataclass
class Prepared:
    cube: HsiCube  # band-normalized
    pca: PcaModel
    train_coords: np.ndarray
    unlabeled_coords: np.ndarray
    test_coords: np.ndarray
    train_batch: SampleBatch


def remaining_test_coords(cube: HsiCube, *used: np.ndarray) -> np.ndarray:
    taken = np.zeros(cube.labels.shape, dtype=bool)
    for coords in used:
        if len(coords):
            taken[coords[:, 0], coords[:, 1]] = True
    return np.argwhere((cube.labels > 0) & ~taken)


def make_train_batch(cube: HsiCube, pca: PcaModel, train_coords, unlabeled_coords, w: int) -> SampleBatch:
    parts = [extract_patches(cube, pca, train_coords, w)]
    if len(unlabeled_coords):
        parts.append(extract_patches(cube, pca, unlabeled_coords, w, hide_labels=True))
    return SampleBatch.concat(parts)


def prepare(cfg: TrainConfig, raw: HsiCube, rng: np.random.Generator) -> Prepared:
    """Normalize, split, draw the unlabeled pool, fit PCA on training pixels, cut patches."""
    cube = normalize_bands(raw)
    train_coords, rest = split_samples(cube, cfg.per_class, rng)
    if cfg.n_unlabeled > len(rest):
        raise ConfigError(f"config key 'n_unlabeled'={cfg.n_unlabeled}: only {len(rest)} non-training pixels")
    pick = np.sort(rng.choice(len(rest), size=cfg.n_unlabeled, replace=False))
    unlabeled = rest[pick].reshape(-1, 2)
    test = remaining_test_coords(cube, train_coords, unlabeled)
    fit_coords = np.concatenate([train_coords, unlabeled])
    if cfg.p > min(len(fit_coords), cube.bands):
        raise ConfigError(f"config key 'p'={cfg.p}: exceeds min(training pixels, bands)")
    pca = fit_pca(cube.values[fit_coords[:, 0], fit_coords[:, 1]], cfg.p)
    batch = make_train_batch(cube, pca, train_coords, unlabeled, cfg.w)
    if cfg.k > len(batch) - 1:
        raise ConfigError(f"config key 'k'={cfg.k}: needs more than {len(batch)} training nodes")
    return Prepared(cube, pca, train_coords, unlabeled, test, batch)


@dataclass
class ExperimentResult:
    report: MetricsReport
    state: ModelState
    log_lines: List[str]
    prepared: Prepared
    prob_snapshots: Dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def log_text(self) -> str:
        return "\n".join([LOG_HEADER] + self.log_lines) + "\n"


def train(cfg: TrainConfig, raw: HsiCube, snapshot_epochs: Sequence[int] = ()) -> Tuple[ModelState, Prepared, List[str], Dict]:
    rng = make_rng(cfg.seed)
    prep = prepare(cfg, raw, rng)
    state = init_state(cfg, raw.bands, raw.n_classes, rng)
    state.pca = prep.pca
    state.train_coords = prep.train_coords
    state.unlabeled_coords = prep.unlabeled_coords
    state.class_names = list(raw.class_names)
    lines: List[str] = []
    snaps: Dict[int, np.ndarray] = {}
    for _ in range(cfg.epochs):
        epoch = state.epoch
        terms, diag = train_epoch(state, prep.train_batch)
        if epoch in snapshot_epochs and "pseudo_probs" in diag:
            snaps[epoch] = diag["pseudo_probs"]
        lines.append(format_log_line(epoch, terms, diag))
        log.debug(lines[-1])
    return state, prep, lines, snaps


def evaluate(state: ModelState, prep: Prepared) -> MetricsReport:
    t0 = time.perf_counter()
    queries = extract_patches(prep.cube, prep.pca, prep.test_coords, state.config.w)
    pred = predict(state, prep.train_batch, queries)
    return compute_metrics(pred, queries.y, state.n_classes, seconds=time.perf_counter() - t0)


def run_experiment(cfg: TrainConfig, raw: HsiCube, out_dir=None, snapshot_epochs: Sequence[int] = (),
                   render: bool = False) -> ExperimentResult:
    """Split, train, evaluate on the held-out labeled pixels and optionally write artifacts."""
    t0 = time.perf_counter()
    state, prep, lines, snaps = train(cfg, raw, snapshot_epochs)
    report = evaluate(state, prep)
    report.seconds = time.perf_counter() - t0
    result = ExperimentResult(report, state, lines, prep, snaps)
    if out_dir is not None:
        write_artifacts(result, Path(out_dir), render=render)
    return result


def write_artifacts(result: ExperimentResult, out: Path, render: bool = False) -> None:
    from .checkpoint import save_checkpoint
    from .dataio import atomic_write

    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.state, out / "model.ckpt")
    atomic_write(out / "train_log.csv", result.log_text.encode())
    report = result.report.to_dict()
    report.pop("seconds")
    atomic_write(out / "report.json", (json.dumps(report, indent=2, sort_keys=True) + "\n").encode())
    if render:
        from .render import default_palette, render_map

        pred = predict_scene(result.state, result.prepared)
        atomic_write(out / "map.ppm", render_map(pred, default_palette(result.state.n_classes)))


def predict_scene(state: ModelState, prep: Prepared) -> np.ndarray:
    """H x W label map; pixels unlabeled in the ground truth stay 0."""
    coords = np.argwhere(prep.cube.labels > 0)
    queries = extract_patches(prep.cube, prep.pca, coords, state.config.w)
    labels = np.zeros(prep.cube.labels.shape, dtype=np.int64)
    labels[coords[:, 0], coords[:, 1]] = predict(state, prep.train_batch, queries)
    return labels


def prepare_from_state(state: ModelState, raw: HsiCube) -> Prepared:
    """Rebuild the training batch and test split recorded in a restored state."""
    if raw.n_classes != state.n_classes or raw.bands != state.bands:
        raise ConfigError(
            f"checkpoint expects {state.n_classes} classes x {state.bands} bands, "
            f"dataset has {raw.n_classes} x {raw.bands}"
        )
    cube = normalize_bands(raw)
    for coords in (state.train_coords, state.unlabeled_coords):
        if len(coords) and (coords[:, 0].max() >= cube.height or coords[:, 1].max() >= cube.width):
            raise ConfigError("checkpoint coordinates fall outside the dataset")
    test = remaining_test_coords(cube, state.train_coords, state.unlabeled_coords)
    batch = make_train_batch(cube, state.pca, state.train_coords, state.unlabeled_coords, state.config.w)
    return Prepared(cube, state.pca, state.train_coords, state.unlabeled_coords, test, batch)


def run_seeds(cfg: TrainConfig, raw: HsiCube, seeds: Sequence[int]) -> Tuple[List[MetricsReport], Dict]:
    reports = [run_experiment(replace(cfg, seed=int(s)), raw).report for s in seeds]
    return reports, summarize(reports)


ABLATIONS = (
    ("full", {}),
    ("(I)", {"no_fusion": True}),
    ("(II)", {"no_se": True}),
    ("(III)", {"no_contrast": True}),
)


def run_ablation(cfg: TrainConfig, raw: HsiCube, seeds: Sequence[int]) -> List[Tuple[str, Dict]]:
    rows = []
    for name, flags in ABLATIONS:
        _, summary = run_seeds(replace(cfg, **flags), raw, seeds)
        rows.append((name, summary))
    return rows


def format_table(rows: List[Tuple[str, Dict]]) -> str:
    lines = ["variant,OA,AA,F1,Kappa"]
    for name, s in rows:
        cells = [f"{s[m][0] * 100:.2f} ± {s[m][1] * 100:.2f}" for m in ("oa", "aa", "f1", "kappa")]
        lines.append(",".join([name] + cells))
    return "\n".join(lines) + "\n"


def sweep_sensitivity(cfg: TrainConfig, raw: HsiCube, ks: Sequence[int], ws: Sequence[int]) -> Dict[Tuple[int, int], float]:
    """Test OA for every (k, w) pair."""
    grid = {}
    for k in ks:
        for w in ws:
            grid[(k, w)] = run_experiment(replace(cfg, k=int(k), w=int(w)), raw).report.oa
            log.info("k=%d w=%d OA=%.4f", k, w, grid[(k, w)])
    return grid
