"""Experiment orchestration: training runs, grid search, alignment and
equilibrium experiments, with reproducible seeded configs and CSV/JSON output.

Config files are flat ``key = value`` text (``#`` comments allowed); CLI
flags override file values. Every run record embeds the fully resolved
config, which is sufficient to reproduce the run.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import __version__, linalg
from .data import Dataset, batches, load_idx, one_hot_batch, synthetic_teacher
from .diagnostics import AlignmentReport, align, ortho_drift, \
    write_alignment_csv, write_scatter_csv
from .dynamics import CircuitConfig, Divergence, equilibria, simulate
from .network import Activation, Network, build_network, forward, save_checkpoint
from .optim import AdamState, adam_step
from .rules import IncrementalConfig, bp_updates, gait_targets, gait_updates, \
    itp_targets, itp_updates, ortho_reg_grad, tp_targets, tp_updates

RULES = ("bp", "tp", "itp", "gait")

# Grid-search cells that were stable across depths, per rule. itp is not a
# reported rule; it borrows the gait cell.
BOLD_CELLS = {
    "bp": (1e-4, 0.0),
    "gait": (1e-4, 0.1),
    "itp": (1e-4, 0.1),
    "tp": (1e-5, 1000.0),
}

DEFAULT_ETAS = (1e-3, 1e-4, 1e-5)
DEFAULT_LAMBDAS = (0.0, 0.1, 10.0, 1000.0)


class ConfigError(Exception):
    """Invalid or inconsistent experiment configuration."""


class TrainingDiverged(Exception):
    """Loss became non-finite during training."""


@dataclass(frozen=True)
class ExperimentConfig:
    rule: str = "gait"
    arch: str = "fixed"            # fixed | halving (ignored when widths given)
    width: int = 784
    depth: int = 5
    widths: tuple[int, ...] | None = None
    classes: int = 10
    activation: str = "leaky_relu"
    alpha: float = 0.01
    init: str = "auto"             # auto | orthogonal | xavier
    eta: float | None = None       # None -> per-rule stable cell
    lam: float | None = None
    gamma: float = 1e-3
    scale_updates: bool = True
    reg_mode: str = "mask"
    batch_size: int = 64
    epochs: int = 50
    seed: int = 0
    data_seed: int = 1234
    dataset: str = "synthetic"     # synthetic | idx
    teacher_depth: int = 2
    train_samples: int = 2000
    test_samples: int = 500
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    allow_init_mismatch: bool = False
    save_checkpoint: str | None = None

    def resolved_widths(self) -> tuple[int, ...]:
        if self.widths is not None:
            return tuple(self.widths)
        if self.arch == "fixed":
            return (self.width,) * self.depth
        if self.arch == "halving":
            w, out = [], self.width
            for _ in range(self.depth):
                w.append(max(out, self.classes))
                out = max(out // 2, self.classes)
            return tuple(w)
        raise ConfigError(f"unknown arch {self.arch!r}")

    def resolved_eta(self) -> float:
        return self.eta if self.eta is not None else BOLD_CELLS[self.rule][0]

    def resolved_lam(self) -> float:
        return self.lam if self.lam is not None else BOLD_CELLS[self.rule][1]

    def resolved_init(self) -> str:
        lam = self.resolved_lam()
        if self.init == "auto":
            return "xavier" if lam == 0.0 else "orthogonal"
        paired = "xavier" if lam == 0.0 else "orthogonal"
        if self.init != paired and not self.allow_init_mismatch:
            raise ConfigError(
                f"init={self.init} with lam={lam} breaks the lam/init pairing "
                "(xavier iff lam == 0); set allow_init_mismatch to override"
            )
        return self.init

    def validate(self) -> None:
        if self.rule not in RULES:
            raise ConfigError(f"unknown rule {self.rule!r}; choose from {RULES}")
        if self.dataset not in ("synthetic", "idx"):
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        if self.dataset == "idx":
            missing = [k for k in ("train_images", "train_labels",
                                   "test_images", "test_labels")
                       if getattr(self, k) is None]
            if missing:
                raise ConfigError(f"dataset=idx needs paths: {', '.join(missing)}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        widths = self.resolved_widths()
        if not 1 <= self.classes <= widths[-1]:
            raise ConfigError("classes must fit in the last layer width")
        self.resolved_init()

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["widths"] = list(self.resolved_widths())
        out["eta"] = self.resolved_eta()
        out["lam"] = self.resolved_lam()
        out["init"] = self.resolved_init()
        return out


_BOOL_KEYS = {"scale_updates", "allow_init_mismatch"}
_INT_KEYS = {"width", "depth", "classes", "batch_size", "epochs", "seed",
             "data_seed", "teacher_depth", "train_samples", "test_samples"}
_FLOAT_KEYS = {"alpha", "gamma"}
_OPT_FLOAT_KEYS = {"eta", "lam"}
_STR_KEYS = {"rule", "arch", "activation", "init", "reg_mode", "dataset",
             "train_images", "train_labels", "test_images", "test_labels",
             "save_checkpoint"}


def parse_config_text(text: str) -> dict[str, str]:
    """Parse flat ``key = value`` lines; '#' starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip().lower()] = value.strip()
    return out


def config_from_mapping(mapping: dict[str, str],
                        base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Build a config from string values, type-checking every key."""
    cfg = base or ExperimentConfig()
    updates: dict = {}
    for key, value in mapping.items():
        if key == "widths":
            updates[key] = tuple(int(v) for v in value.replace(" ", "").split(","))
        elif key in _BOOL_KEYS:
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ConfigError(f"{key}: expected a boolean, got {value!r}")
            updates[key] = low in ("true", "1", "yes")
        elif key in _INT_KEYS:
            updates[key] = int(value)
        elif key in _FLOAT_KEYS:
            updates[key] = float(value)
        elif key in _OPT_FLOAT_KEYS:
            updates[key] = None if value.lower() == "auto" else float(value)
        elif key in _STR_KEYS:
            updates[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    cfg = replace(cfg, **updates)
    cfg.validate()
    return cfg


def load_config(path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    with open(path) as fh:
        mapping = parse_config_text(fh.read())
    if overrides:
        mapping.update(overrides)
    return config_from_mapping(mapping)


@dataclass
class RunRecord:
    config: dict
    epochs: list[dict] = field(default_factory=list)
    peak_train_acc: float = 0.0
    peak_test_acc: float = 0.0
    final_train_acc: float = 0.0
    final_test_acc: float = 0.0
    wall_clock_s: float = 0.0
    version: str = __version__

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "epochs": self.epochs,
            "peak_train_acc": self.peak_train_acc,
            "peak_test_acc": self.peak_test_acc,
            "final_train_acc": self.final_train_acc,
            "final_test_acc": self.final_test_acc,
            "wall_clock_s": self.wall_clock_s,
            "version": self.version,
        }


def _load_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    if cfg.dataset == "idx":
        train = load_idx(cfg.train_images, cfg.train_labels, cfg.classes)
        test = load_idx(cfg.test_images, cfg.test_labels, cfg.classes)
        if cfg.train_samples and cfg.train_samples < len(train):
            train = Dataset(train.inputs[:cfg.train_samples],
                            train.labels[:cfg.train_samples], cfg.classes)
        if cfg.test_samples and cfg.test_samples < len(test):
            test = Dataset(test.inputs[:cfg.test_samples],
                           test.labels[:cfg.test_samples], cfg.classes)
        return train, test
    n_in = cfg.resolved_widths()[0]
    total = cfg.train_samples + cfg.test_samples
    # One draw for train and test together, so both come from the same teacher.
    ds = synthetic_teacher(n_in, cfg.teacher_depth, cfg.classes, total,
                           linalg.make_rng(cfg.data_seed))
    train = Dataset(ds.inputs[:cfg.train_samples], ds.labels[:cfg.train_samples],
                    cfg.classes)
    test = Dataset(ds.inputs[cfg.train_samples:], ds.labels[cfg.train_samples:],
                   cfg.classes)
    return train, test


def build_from_config(cfg: ExperimentConfig) -> Network:
    act = Activation(cfg.activation, cfg.alpha) if cfg.activation == "leaky_relu" \
        else Activation("linear")
    return build_network(list(cfg.resolved_widths()), cfg.classes, act,
                         cfg.resolved_init(), cfg.seed)


def rule_updates(rule: str, net: Network, trace, t_out, inc: IncrementalConfig):
    if rule == "bp":
        return bp_updates(net, trace, t_out)
    if rule == "tp":
        return tp_updates(trace, tp_targets(net, trace, t_out))
    if rule == "itp":
        return itp_updates(trace, itp_targets(net, trace, t_out, inc), inc)
    if rule == "gait":
        return gait_updates(trace, gait_targets(net, trace, t_out, inc), inc)
    raise ConfigError(f"unknown rule {rule!r}")


def evaluate(net: Network, ds: Dataset, chunk: int = 2048) -> tuple[float, float]:
    """(accuracy, mean quadratic loss) over a dataset; argmax ties go to the
    lowest class index."""
    if len(ds) == 0:
        return 0.0, 0.0
    hits = 0
    loss_sum = 0.0
    for start in range(0, len(ds), chunk):
        block = ds.inputs[start:start + chunk]
        labels = ds.labels[start:start + chunk]
        out = forward(net, block.T).output()
        hits += int(np.sum(np.argmax(out, axis=0) == labels))
        t = one_hot_batch(labels, ds.n_classes)
        loss_sum += float(0.5 * np.sum((out - t) ** 2))
    return hits / len(ds), loss_sum / len(ds)


def train(cfg: ExperimentConfig) -> RunRecord:
    """Full training run; deterministic under (config, seed)."""
    cfg.validate()
    started = time.perf_counter()
    train_ds, test_ds = _load_datasets(cfg)
    net = build_from_config(cfg)
    state = AdamState(net, eta=cfg.resolved_eta())
    inc = IncrementalConfig(gamma=cfg.gamma, scale_updates=cfg.scale_updates)
    lam = cfg.resolved_lam()
    # labeled derivation keeps the shuffle stream disjoint from the layer
    # init streams, which are spawned children of the bare seed
    shuffle_rng = linalg.make_rng(_derived_seed(cfg.seed, 1))
    record = RunRecord(config=cfg.to_dict())

    for epoch in range(cfg.epochs):
        for x, t in batches(train_ds, cfg.batch_size, shuffle=True, rng=shuffle_rng):
            trace = forward(net, x)
            batch_loss = 0.5 * np.sum((trace.output() - t) ** 2) / x.shape[1]
            if not np.isfinite(batch_loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, rule {cfg.rule}"
                )
            updates = rule_updates(cfg.rule, net, trace, t, inc)
            if lam > 0.0:
                for i, layer in enumerate(net.layers):
                    updates.deltas[i] = updates.deltas[i] - ortho_reg_grad(
                        layer.weight, lam, cfg.reg_mode)
            adam_step(state, net, updates)
        train_acc, train_loss = evaluate(net, train_ds)
        test_acc, _ = evaluate(net, test_ds)
        record.epochs.append({
            "epoch": epoch,
            "train_acc": train_acc,
            "test_acc": test_acc,
            "mean_loss": train_loss,
            "ortho_errors": ortho_drift(net),
        })

    if record.epochs:
        record.peak_train_acc = max(e["train_acc"] for e in record.epochs)
        record.peak_test_acc = max(e["test_acc"] for e in record.epochs)
        record.final_train_acc = record.epochs[-1]["train_acc"]
        record.final_test_acc = record.epochs[-1]["test_acc"]
    record.wall_clock_s = time.perf_counter() - started
    if cfg.save_checkpoint:
        save_checkpoint(net, cfg.save_checkpoint)
    return record


def write_run_outputs(record: RunRecord, out_dir) -> None:
    """run.json with the full record, epochs.csv with the per-epoch table."""
    import os
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "run.json"), "w") as fh:
        json.dump(record.to_dict(), fh, indent=2)
    n_layers = len(record.epochs[0]["ortho_errors"]) if record.epochs else 0
    with open(os.path.join(out_dir, "epochs.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_acc", "test_acc", "mean_loss"]
                        + [f"ortho_err_{i}" for i in range(n_layers)])
        for e in record.epochs:
            writer.writerow([e["epoch"], f"{e['train_acc']:.6f}",
                             f"{e['test_acc']:.6f}", f"{e['mean_loss']:.9g}"]
                            + [f"{v:.6g}" for v in e["ortho_errors"]])


def _derived_seed(seed: int, label: int) -> int:
    return int(np.random.SeedSequence([seed, label]).generate_state(1)[0])


def _cell_seed(seed: int, i: int, j: int) -> int:
    return int(np.random.SeedSequence([seed, i, j]).generate_state(1)[0])


@dataclass
class GridResult:
    etas: list[float]
    lambdas: list[float]
    records: dict = field(default_factory=dict)   # (eta, lam) -> RunRecord
    failures: dict = field(default_factory=dict)  # (eta, lam) -> error string


def gridsearch(base: ExperimentConfig, etas, lambdas) -> GridResult:
    """Cross-product sweep over learning rate and regularizer strength.

    Cells are seeded independently but reproducibly from the base seed; a
    failing run is recorded and the sweep continues.
    """
    etas = list(etas)
    lambdas = list(lambdas)
    if not etas or not lambdas:
        raise ConfigError("gridsearch needs non-empty eta and lambda lists")
    result = GridResult(etas=etas, lambdas=lambdas)
    for i, eta in enumerate(etas):
        for j, lam in enumerate(lambdas):
            cfg = replace(base, eta=eta, lam=lam, seed=_cell_seed(base.seed, i, j))
            try:
                result.records[(eta, lam)] = train(cfg)
            except (TrainingDiverged, linalg.SingularMatrix) as exc:
                result.failures[(eta, lam)] = f"{type(exc).__name__}: {exc}"
    return result


def write_grid_csv(result: GridResult, path) -> None:
    """Peak/final train-accuracy table: one row per eta, one column per lambda."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["eta"] + [f"lambda={lam:g}" for lam in result.lambdas])
        for eta in result.etas:
            row = [f"{eta:g}"]
            for lam in result.lambdas:
                if (eta, lam) in result.records:
                    rec = result.records[(eta, lam)]
                    row.append(f"{100 * rec.peak_train_acc:.2f} / "
                               f"{100 * rec.final_train_acc:.2f}")
                else:
                    row.append(f"failed: {result.failures[(eta, lam)]}")
            writer.writerow(row)


def align_experiment(cfg: ExperimentConfig, n_samples: int, out_dir=None
                     ) -> dict[str, dict[str, AlignmentReport]]:
    """Alignment of TP and GAIT updates against BP on an untrained network,
    for both init modes. Returns reports keyed [init][rule]; optionally
    writes summary and scatter CSVs per comparison."""
    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    train_ds, _ = _load_datasets(cfg)
    if n_samples > len(train_ds):
        raise ConfigError(f"only {len(train_ds)} samples available")
    x = train_ds.inputs[:n_samples].T
    t = one_hot_batch(train_ds.labels[:n_samples], train_ds.n_classes)
    inc = IncrementalConfig(gamma=cfg.gamma, scale_updates=True)
    reports: dict[str, dict[str, AlignmentReport]] = {}
    for init in ("orthogonal", "xavier"):
        net = build_from_config(replace(cfg, init=init, allow_init_mismatch=True))
        trace = forward(net, x)
        bp = bp_updates(net, trace, t)
        comparisons = {
            "tp": tp_updates(trace, tp_targets(net, trace, t)),
            "gait": gait_updates(trace, gait_targets(net, trace, t, inc), inc),
        }
        reports[init] = {}
        for rule, upd in comparisons.items():
            rep = align(upd, bp, rng=linalg.make_rng(cfg.seed))
            rep.ortho_errors = ortho_drift(net)
            reports[init][rule] = rep
            if out_dir is not None:
                import os
                os.makedirs(out_dir, exist_ok=True)
                stem = os.path.join(out_dir, f"align_{init}_{rule}_vs_bp")
                write_alignment_csv(rep, stem + ".csv")
                write_scatter_csv(rep, stem + "_scatter.csv")
    return reports


def equilibrium_sweep(nus, seed: int = 0, size: int = 4, tau: float = 1.0,
                      dt: float = 0.01, onset: float = 50.0,
                      duration: float = 130.0) -> list[dict]:
    """Simulated vs analytic equilibria of the feedback circuit per coupling.

    The weight is a random invertible matrix with singular values in
    [0.5, 2]; x and t2 are standard normal draws, all pinned by the seed.
    """
    rng = linalg.make_rng(seed)
    u = linalg.orthogonal_init(size, rng)
    v = linalg.orthogonal_init(size, rng)
    w = u @ np.diag(rng.uniform(0.5, 2.0, size)) @ v
    x = rng.standard_normal(size)
    t2 = rng.standard_normal(size)
    rows = []
    for nu in nus:
        cfg = CircuitConfig(weight=w, coupling=float(nu), tau=tau, x=x, t2=t2,
                            dt=dt, duration=duration, onset=onset)
        y1, y1_shifted, gamma = equilibria(cfg)
        row = {"nu": float(nu), "gamma": gamma, "diverged": False,
               "err_before_onset": float("nan"), "err_after_onset": float("nan")}
        try:
            traj = simulate(cfg)
            k_onset = int(round(onset / dt))
            row["err_before_onset"] = float(np.abs(traj.u1[k_onset - 1] - y1).max())
            row["err_after_onset"] = float(np.abs(traj.u1[-1] - y1_shifted).max())
        except Divergence:
            row["diverged"] = True
        rows.append(row)
    return rows


def write_equilibrium_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["nu", "gamma", "err_before_onset", "err_after_onset",
                         "diverged"])
        for r in rows:
            writer.writerow([f"{r['nu']:g}", f"{r['gamma']:.12g}",
                             f"{r['err_before_onset']:.6g}",
                             f"{r['err_after_onset']:.6g}",
                             int(r["diverged"])])
