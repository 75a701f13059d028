"""Experiment orchestration: config files, split x init matrices, sweeps, timing, export.

Output files (TSV, LF line endings, header row, columns in this order):

    runs.tsv     split init status test_accuracy val_accuracy best_epoch epochs_run tau lambda epsilon error
    summary.tsv  dataset model regularized similarity num_runs num_failed mean_accuracy std_accuracy
    timing.tsv   split init seconds_per_epoch
    sweep.tsv    tau0 lambda0 epsilon0 num_runs num_failed mean_accuracy std_accuracy

Timing lives in its own file so that runs.tsv and summary.tsv are
byte-identical across repeated runs with the same config and master seed.
"""

from __future__ import annotations

import dataclasses
import itertools
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import SplitSpec, load_dataset, make_split, row_normalize_features
from .graph import Graph, ideal_similarity, similarity
from .models import ModelConfig
from .regsoftmax import InvariantError
from .training import Runner, Split, TrainConfig, TrainingDiverged, train_run

logger = logging.getLogger(__name__)

FAILURE_BUDGET = 0.10


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    dataset: str = ""
    model: str = "gcn"
    regularized: bool = True
    similarity: str = "normalized-adjacency"
    num_splits: int = 5
    num_inits: int = 3
    master_seed: int = 0
    split_protocol: str = "citation"
    train_per_class: int = 20
    val_per_class: int = 30
    train_fraction: float = 0.6
    val_fraction: float = 0.2
    normalize_features: bool = False
    workers: int = 1
    # model
    hidden_dim: int = 0  # 0 picks the per-model default
    dropout: float = 0.5
    weight_decay: float = 5e-4
    l2_normalize: bool = False
    # training
    max_epochs: int = 10000
    patience: int = 50
    lr: float = 0.01
    tau0: float = 1.0
    lambda0: float = 3.0
    epsilon0: float = 1.0
    lr_tau: float = 0.01
    lr_lambda: float = 0.001
    lr_epsilon: float = 0.01
    learn_tau: bool = True
    learn_lambda: bool = True
    learn_epsilon: bool = True
    t_steps: int = 1
    projection: str = "row"
    stopping: str = "either"
    check_every: int = 10
    # sweep grid; empty means "the single initial value"
    sweep_tau: list = field(default_factory=list)
    sweep_lambda: list = field(default_factory=list)
    sweep_epsilon: list = field(default_factory=list)
    sweep_splits: int = 5
    sweep_inits: int = 5
    # timing
    timing_epochs: int = 100
    timing_warmup: int = 5

    def __post_init__(self):
        if self.num_splits < 1 or self.num_inits < 1:
            raise ConfigError("num_splits and num_inits must be at least 1")
        if self.similarity not in ("normalized-adjacency", "ideal"):
            raise ConfigError(f"similarity must be normalized-adjacency or ideal, got {self.similarity!r}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.model, self.hidden_dim or None, self.dropout, self.weight_decay, self.l2_normalize)

    def train_config(self, seed: int = 0, **overrides) -> TrainConfig:
        names = {f.name for f in dataclasses.fields(TrainConfig)}
        kw = {k: v for k, v in dataclasses.asdict(self).items() if k in names}
        kw.update(seed=seed, **overrides)
        return TrainConfig(**kw)

    def split_spec(self) -> SplitSpec:
        rest = 1.0 - self.train_fraction - self.val_fraction
        return SplitSpec(self.split_protocol, self.train_per_class, self.val_per_class,
                         (self.train_fraction, self.val_fraction, rest))


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_ALIASES = {"T": "t_steps", "seed": "master_seed", "lambda": "lambda0", "tau": "tau0", "epsilon": "epsilon0"}


def _coerce(name: str, raw: str, lineno: int):
    default = ExperimentConfig.__dataclass_fields__[name]
    kind = type(default.default) if default.default is not dataclasses.MISSING else list
    try:
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is list:
            return [float(v) for v in raw.replace(",", " ").split()]
        return raw
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value {raw!r} for {name}") from None


def parse_config(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key = _ALIASES.get(key.strip(), key.strip())
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw.strip(), lineno)
    if base_dir is not None and values.get("dataset") and not Path(values["dataset"]).is_absolute():
        values["dataset"] = str((base_dir / values["dataset"]).resolve())
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    return parse_config(p.read_text(encoding="utf-8"), p.parent)


def load_graph(cfg: ExperimentConfig) -> Graph:
    if not cfg.dataset or not Path(cfg.dataset).is_dir():
        raise ConfigError(f"dataset directory {cfg.dataset!r} does not exist")
    g = load_dataset(cfg.dataset).graph
    return row_normalize_features(g) if cfg.normalize_features else g


def split_seed(master: int, s: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([master, s])


def init_seed(master: int, s: int, i: int) -> int:
    return int(np.random.SeedSequence([master, s, i]).generate_state(1, dtype=np.uint64)[0])


def similarity_for(cfg: ExperimentConfig, g: Graph):
    return ideal_similarity(g.labels, g.k) if cfg.similarity == "ideal" else similarity(g)


# ---------------------------------------------------------------- experiment


@dataclass
class RunRecord:
    split: int
    init: int
    status: str
    test_accuracy: float = float("nan")
    val_accuracy: float = float("nan")
    best_epoch: int = 0
    epochs_run: int = 0
    tau: float = float("nan")
    lam: float = float("nan")
    epsilon: float = float("nan")
    seconds_per_epoch: float = float("nan")
    error: str = ""


@dataclass
class ExperimentSummary:
    records: list[RunRecord]
    mean_accuracy: float
    std_accuracy: float
    mean_seconds_per_epoch: float
    num_failed: int

    @property
    def failure_rate(self) -> float:
        return self.num_failed / max(len(self.records), 1)


def _one_run(job):
    cfg, g, s_mat, s, i = job
    split = make_split(g.labels, cfg.split_spec(), split_seed(cfg.master_seed, s))
    tcfg = cfg.train_config(init_seed(cfg.master_seed, s, i))
    try:
        r = train_run(g, split, cfg.model_config(), tcfg, s_mat)
    except (TrainingDiverged, InvariantError) as exc:
        logger.warning("split %d init %d failed: %s", s, i, exc)
        return RunRecord(s, i, "failed", error=str(exc).replace("\t", " ").replace("\n", " "))
    return RunRecord(s, i, "ok", r.test_accuracy, r.val_accuracy, r.best_epoch, r.epochs_run,
                     r.tau, r.lam, r.epsilon, r.seconds_per_epoch)


def summarize(records: list[RunRecord]) -> ExperimentSummary:
    ok = [r for r in records if r.status == "ok"]
    acc = np.array([r.test_accuracy for r in ok])
    sec = np.array([r.seconds_per_epoch for r in ok])
    return ExperimentSummary(
        records=records,
        mean_accuracy=float(acc.mean()) if ok else float("nan"),
        std_accuracy=float(acc.std(ddof=0)) if ok else float("nan"),  # population std
        mean_seconds_per_epoch=float(sec.mean()) if ok else float("nan"),
        num_failed=len(records) - len(ok),
    )


def run_experiment(cfg: ExperimentConfig, g: Graph | None = None, out_dir=None) -> ExperimentSummary:
    g = load_graph(cfg) if g is None else g
    s_mat = similarity_for(cfg, g) if cfg.regularized else None
    jobs = [(cfg, g, s_mat, s, i) for s in range(cfg.num_splits) for i in range(cfg.num_inits)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            records = list(pool.map(_one_run, jobs))
    else:
        records = [_one_run(j) for j in jobs]
    records.sort(key=lambda r: (r.split, r.init))
    summary = summarize(records)
    if out_dir is not None:
        write_experiment(cfg, summary, Path(out_dir))
    return summary


def _fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if np.isnan(x) else repr(x)
    return str(x)


def _write_tsv(path: Path, header: list[str], rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(v) for v in row) + "\n")


RUN_COLUMNS = ["split", "init", "status", "test_accuracy", "val_accuracy", "best_epoch",
               "epochs_run", "tau", "lambda", "epsilon", "error"]
SUMMARY_COLUMNS = ["dataset", "model", "regularized", "similarity", "num_runs", "num_failed",
                   "mean_accuracy", "std_accuracy"]


def write_experiment(cfg: ExperimentConfig, summary: ExperimentSummary, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    _write_tsv(out / "runs.tsv", RUN_COLUMNS, (
        (r.split, r.init, r.status, r.test_accuracy, r.val_accuracy, r.best_epoch, r.epochs_run,
         r.tau, r.lam, r.epsilon, r.error) for r in summary.records))
    _write_tsv(out / "summary.tsv", SUMMARY_COLUMNS, [(
        Path(cfg.dataset).name, cfg.model, cfg.regularized, cfg.similarity, len(summary.records),
        summary.num_failed, summary.mean_accuracy, summary.std_accuracy)])
    _write_tsv(out / "timing.tsv", ["split", "init", "seconds_per_epoch"],
               ((r.split, r.init, r.seconds_per_epoch) for r in summary.records))


def read_tsv(path) -> list[dict[str, str]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = lines[0].split("\t")
    return [dict(zip(header, line.split("\t"))) for line in lines[1:]]


# --------------------------------------------------------------------- sweep


def sweep(cfg: ExperimentConfig, g: Graph | None = None, out_dir=None) -> list[tuple]:
    """Grid over (tau0, lambda0, epsilon0); each point is a sweep_splits x sweep_inits experiment."""
    g = load_graph(cfg) if g is None else g
    grid = itertools.product(cfg.sweep_tau or [cfg.tau0], cfg.sweep_lambda or [cfg.lambda0],
                             cfg.sweep_epsilon or [cfg.epsilon0])
    rows = []
    for tau0, lam0, eps0 in grid:
        point = dataclasses.replace(cfg, tau0=tau0, lambda0=lam0, epsilon0=eps0,
                                    num_splits=cfg.sweep_splits, num_inits=cfg.sweep_inits)
        s = run_experiment(point, g)
        rows.append((tau0, lam0, eps0, len(s.records), s.num_failed, s.mean_accuracy, s.std_accuracy))
        logger.info("tau0=%g lambda0=%g epsilon0=%g -> %.4f", tau0, lam0, eps0, s.mean_accuracy)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_tsv(out / "sweep.tsv", ["tau0", "lambda0", "epsilon0", "num_runs", "num_failed",
                                       "mean_accuracy", "std_accuracy"], rows)
    return rows


# -------------------------------------------------------------------- timing


def time_epochs(cfg: ExperimentConfig, g: Graph | None = None, variants=(False, True)) -> dict[str, float]:
    """Median wall-clock seconds per training epoch after a short warm-up.

    Epochs of the variants are interleaved so that slow drift of the machine
    (thermal, other load) hits all of them alike.
    """
    g = load_graph(cfg) if g is None else g
    split = make_split(g.labels, cfg.split_spec(), split_seed(cfg.master_seed, 0))
    runners = {}
    for regularized in variants:
        tcfg = cfg.train_config(init_seed(cfg.master_seed, 0, 0), regularized=regularized)
        name = ("r" if regularized else "") + cfg.model
        runners[name] = Runner(g, cfg.model_config(), tcfg, similarity_for(cfg, g) if regularized else None)
    for runner in runners.values():
        for _ in range(cfg.timing_warmup):
            runner.train_step(split.train)
    samples = {name: [] for name in runners}
    for _ in range(cfg.timing_epochs):
        for name, runner in runners.items():
            t0 = time.perf_counter()
            runner.train_step(split.train)
            samples[name].append(time.perf_counter() - t0)
    return {name: float(np.median(v)) for name, v in samples.items()}


# ------------------------------------------------------------- train/export


def train_single(cfg: ExperimentConfig, out_dir, seed: int | None = None, g: Graph | None = None):
    """One run on split 0; saves what `export` needs to rebuild the model."""
    g = load_graph(cfg) if g is None else g
    master = cfg.master_seed if seed is None else seed
    split = make_split(g.labels, cfg.split_spec(), split_seed(master, 0))
    tcfg = cfg.train_config(init_seed(master, 0, 0))
    s_mat = similarity_for(cfg, g) if cfg.regularized else None
    result = train_run(g, split, cfg.model_config(), tcfg, s_mat)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg_dict = dataclasses.asdict(cfg)
    cfg_dict["master_seed"] = master
    (out / "config.json").write_text(json.dumps(cfg_dict, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    np.savez(out / "params.npz", **result.params)
    np.savez(out / "split.npz", train=split.train, val=split.val, test=split.test)
    summary = {k: getattr(result, k) for k in ("test_accuracy", "val_accuracy", "best_epoch", "epochs_run",
                                               "tau", "lam", "epsilon", "seconds_per_epoch")}
    (out / "result.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return result


def export_run(run_dir, out_dir, g: Graph | None = None) -> float:
    """Write predictions.tsv (test nodes) and embeddings.tsv (all nodes); returns test accuracy."""
    run = Path(run_dir)
    cfg = ExperimentConfig(**json.loads((run / "config.json").read_text(encoding="utf-8")))
    g = load_graph(cfg) if g is None else g
    params = dict(np.load(run / "params.npz"))
    split_arr = np.load(run / "split.npz")
    split = Split(split_arr["train"], split_arr["val"], split_arr["test"])
    tcfg = cfg.train_config(init_seed(cfg.master_seed, 0, 0))
    runner = Runner(g, cfg.model_config(), tcfg, similarity_for(cfg, g) if cfg.regularized else None)
    runner.restore(params)
    logits, probs = runner.evaluate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pred = probs.argmax(axis=1)
    header = ["node", "true", "pred"] + [f"p{c}" for c in range(g.k)]
    _write_tsv(out / "predictions.tsv", header,
               ((int(i), int(g.labels[i]), int(pred[i]), *map(float, probs[i])) for i in split.test))
    _write_tsv(out / "embeddings.tsv", ["node"] + [f"o{c}" for c in range(logits.shape[1])],
               ((i, *map(float, logits[i])) for i in range(g.n)))
    return float(np.mean(pred[split.test] == g.labels[split.test]))
