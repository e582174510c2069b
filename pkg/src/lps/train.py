"""Experiment configuration and the training loop."""
from __future__ import annotations

import csv
import dataclasses
import io
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from lps.data import AugmentConfig, ConfigError, Dataset, EpochSampler, SyntheticConfig, generate_synthetic, load_dataset
from lps.evaluation import MetricsRecord, evaluate_predictions
from lps.model import ModelParams, OptimState, backward, forward, init_params, save_checkpoint, sgd_step
from lps.numeric import softmax
from lps.objective import (
    Ablation,
    ClassDistribution,
    Hyperparams,
    TrainSchedule,
    class_thresholds,
    estimate_class_distribution,
    partition,
    total_loss,
)

log = logging.getLogger(__name__)

HP_KEYS = tuple(f.name for f in fields(Hyperparams))
ABLATION_KEYS = ("no_am", "no_pc", "no_uc", "no_entropy")
SWEEP_KEYS = ("C", "tau", "eta1", "eta2", "lambda_novel_ramp")
TERM_NAMES = ("am", "pc", "uc", "entropy", "total")

# independent RNG streams derived from the explicit seeds
_STREAM_INIT = 0x1417
_STREAM_BATCH = 0xBA7C


@dataclass
class ExperimentConfig:
    source: str = "synthetic"
    data_path: str = ""
    K: int = 8
    D: int = 16
    samples_per_class: int = 200
    seen_fraction: float = 0.5
    labeled_fraction: float = 0.5
    cluster_separation: float = 4.0
    C: float = 10.0
    tau: float = 0.4
    eta1: float = 1.0
    eta2: float = 1.0
    lambda_seen: float = 0.95
    lambda_novel_base: float = 0.4
    lambda_novel_ramp: float = 0.4
    normalize_logits_for_similarity: bool = True
    ema_decay: float = 0.0
    entropy_population: str = "unlabeled"
    hidden: int = 0
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 200
    batch_size: int = 128
    labeled_fraction_in_batch: float = 0.5
    sigma_weak: float = 0.1
    sigma_strong: float = 0.25
    p_mask: float = 0.1
    data_seed: int = 0
    init_seed: int = 0
    batch_seed: int = 0
    no_am: bool = False
    no_pc: bool = False
    no_uc: bool = False
    no_entropy: bool = False
    pin_seen: bool = True

    def validate(self):
        if self.source not in ("synthetic", "file"):
            raise ConfigError(f"source must be 'synthetic' or 'file', got {self.source!r}")
        if self.source == "file" and not self.data_path:
            raise ConfigError("source=file needs data_path")
        if self.source == "synthetic" and self.data_path:
            raise ConfigError("data_path given but source=synthetic; pick exactly one dataset source")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.hidden < 0:
            raise ConfigError("hidden must be >= 0 (0 means a linear head)")
        self.hyperparams()

    def hyperparams(self) -> Hyperparams:
        try:
            return Hyperparams(**{k: getattr(self, k) for k in HP_KEYS})
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def ablation(self) -> Ablation:
        return Ablation(**{k: getattr(self, k) for k in ABLATION_KEYS})

    def synthetic(self) -> SyntheticConfig:
        return SyntheticConfig(self.K, self.D, self.samples_per_class, self.seen_fraction,
                               self.labeled_fraction, self.cluster_separation, self.data_seed)

    def augment(self) -> AugmentConfig:
        return AugmentConfig(self.sigma_weak, self.sigma_strong, self.p_mask)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def echo(self) -> str:
        return "".join(f"{f.name}={_format_value(getattr(self, f.name))}\n" for f in fields(self))


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _coerce(name: str, raw: str, kind):
    raw = raw.strip()
    try:
        if kind in (bool, "bool"):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def set_option(cfg: ExperimentConfig, key: str, raw: str) -> ExperimentConfig:
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    return cfg.replace(**{key: _coerce(key, raw, _FIELD_TYPES[key])})


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse flat ``key=value`` lines; ``#`` starts a comment."""
    cfg = base or ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        cfg = set_option(cfg, key.strip(), value)
    return cfg


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.source == "file":
        return load_dataset(cfg.data_path)
    return generate_synthetic(cfg.synthetic())


def training_distribution(params: ModelParams, ds: Dataset, sched: TrainSchedule, hp: Hyperparams) -> ClassDistribution:
    """Class-distribution estimate over the whole training pool at clean inputs."""
    lab = softmax(forward(params, ds.features[ds.indices("labeled")]))
    unl = softmax(forward(params, ds.features[ds.indices("unlabeled")]))
    return estimate_class_distribution(lab, unl, ds.seen_classes, sched, hp, K=ds.K)


def evaluate(params: ModelParams, ds: Dataset, epoch: int, sched: TrainSchedule, hp: Hyperparams,
             losses: dict | None = None, pin_seen: bool = True) -> MetricsRecord:
    test = ds.indices("test")
    preds = np.argmax(forward(params, ds.features[test]), axis=1)
    kl = training_distribution(params, ds, sched, hp).kl
    return evaluate_predictions(epoch, preds, ds.labels[test], ds.seen_classes, ds.novel_classes, kl,
                                losses, pin_seen=pin_seen)


def batch_labeled_fraction(cfg: ExperimentConfig, ds: Dataset) -> float:
    """Configured labeled share per batch; 0 means the dataset's labeled share n / (n + m)."""
    if cfg.labeled_fraction_in_batch > 0:
        return cfg.labeled_fraction_in_batch
    return ds.n / (ds.n + ds.m)


@dataclass
class ExperimentResult:
    records: list[MetricsRecord]
    params: ModelParams
    config: ExperimentConfig
    batch_distributions: list[ClassDistribution] = field(default_factory=list)

    @property
    def final(self) -> MetricsRecord:
        return self.records[-1]


def run_experiment(cfg: ExperimentConfig, out_dir=None, dataset: Dataset | None = None,
                   on_epoch: Callable[[MetricsRecord], None] | None = None) -> ExperimentResult:
    """Train one model and evaluate it after every epoch.

    Writes ``metrics.jsonl``, ``summary.csv``, ``checkpoint.bin`` and
    ``config.echo`` to ``out_dir`` when given.
    """
    cfg.validate()
    hp = cfg.hyperparams()
    ablation = cfg.ablation()
    ds = dataset if dataset is not None else build_dataset(cfg)
    params = init_params(ds.D, ds.K, cfg.hidden or None, np.random.default_rng([cfg.init_seed, _STREAM_INIT]))
    sampler = EpochSampler(ds, cfg.batch_size, batch_labeled_fraction(cfg, ds),
                           np.random.default_rng([cfg.batch_seed, _STREAM_BATCH]), cfg.augment())
    T = max(cfg.epochs * sampler.batches_per_epoch, 1)
    opt = OptimState(lr0=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay, T=T)

    records = [evaluate(params, ds, 0, TrainSchedule(0, T), hp, pin_seen=cfg.pin_seen)]
    if on_epoch:
        on_epoch(records[-1])
    batch_dists = []
    ema_pi = None
    for epoch in range(1, cfg.epochs + 1):
        sums = dict.fromkeys(TERM_NAMES, 0.0)
        n_batches = 0
        for batch in sampler.epoch():
            sched = TrainSchedule(min(opt.t, T), T)
            zw = forward(params, batch.weak)
            zs = forward(params, batch.strong)
            thresholds = class_thresholds(ds.K, ds.seen_classes, sched, hp)
            batch = partition(batch, zw, thresholds)
            pw = softmax(zw)
            dist = estimate_class_distribution(pw[batch.is_labeled], pw[~batch.is_labeled],
                                               ds.seen_classes, sched, hp, K=ds.K)
            if hp.ema_decay > 0:
                ema_pi = dist.pi_hat if ema_pi is None else hp.ema_decay * ema_pi + (1 - hp.ema_decay) * dist.pi_hat
                dist = ClassDistribution(ema_pi / ema_pi.sum())
            batch_dists.append(dist)
            res = total_loss(batch, zw, zs, dist, hp, ablation)
            gw = backward(params, batch.weak, res.grad[0])
            gs = backward(params, batch.strong, res.grad[1])
            grads = {k: gw[k] + gs[k] for k in gw}
            params = sgd_step(params, grads, opt)
            for k in TERM_NAMES:
                sums[k] += res.terms[k]
            n_batches += 1
        losses = {k: v / n_batches for k, v in sums.items()}
        if not all(math.isfinite(v) for v in losses.values()):
            raise FloatingPointError(f"non-finite loss at epoch {epoch}: {losses}")
        rec = evaluate(params, ds, epoch, TrainSchedule(min(opt.t, T), T), hp, losses, pin_seen=cfg.pin_seen)
        records.append(rec)
        if on_epoch:
            on_epoch(rec)

    result = ExperimentResult(records, params, cfg, batch_dists)
    if out_dir is not None:
        write_outputs(result, Path(out_dir))
    return result


SUMMARY_FIELDS = ("epoch", "seen_acc", "novel_acc", "all_acc", "nmi_novel", "kl_to_prior")


def write_outputs(result: ExperimentResult, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "metrics.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for rec in result.records:
            fh.write(rec.to_json() + "\n")
    with open(out_dir / "summary.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        w.writerow([repr(getattr(result.final, k)) for k in SUMMARY_FIELDS])
    save_checkpoint(result.params, out_dir / "checkpoint.bin")
    (out_dir / "config.echo").write_text(result.config.echo(), encoding="utf-8")


def read_metrics(path) -> list[MetricsRecord]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [MetricsRecord.from_json(line) for line in lines if line.strip()]


# -- sweeps and ablations -------------------------------------------------------


def parse_grid(spec: str) -> dict[str, list[str]]:
    """Parse ``"C=1,5,10;tau=0.2,0.4"`` into ``{"C": [...], "tau": [...]}``."""
    grid = {}
    for part in spec.split(";"):
        part = part.strip()
        if not part:
            continue
        key, sep, values = part.partition("=")
        key = key.strip()
        vals = [v.strip() for v in values.split(",") if v.strip()]
        if not sep or not vals:
            raise ConfigError(f"bad grid entry {part!r}; expected key=v1,v2,...")
        if key not in SWEEP_KEYS:
            raise ConfigError(f"cannot sweep {key!r}; choose from {', '.join(SWEEP_KEYS)}")
        grid[key] = vals
    if not grid:
        raise ConfigError("empty parameter grid")
    return grid


def _final_row(cfg: ExperimentConfig) -> dict:
    try:
        rec = run_experiment(cfg).final
        return {"seen_acc": rec.seen_acc, "novel_acc": rec.novel_acc, "all_acc": rec.all_acc, "status": "ok"}
    except Exception as exc:  # noqa: BLE001 - a failed grid point must not stop the sweep
        log.warning("run failed: %s", exc)
        return {"seen_acc": math.nan, "novel_acc": math.nan, "all_acc": math.nan,
                "status": f"failed: {type(exc).__name__}: {exc}"}


def _run_all(cfgs: list[ExperimentConfig], jobs: int) -> list[dict]:
    if jobs <= 1:
        return [_final_row(c) for c in cfgs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_final_row, cfgs))


def run_sweep(base: ExperimentConfig, grid: dict[str, list], jobs: int = 1) -> list[dict]:
    """One run per grid point, all sharing the base seeds."""
    if not grid:
        raise ConfigError("empty parameter grid")
    keys = list(grid)
    points, cfgs = [], []
    for combo in itertools.product(*(grid[k] for k in keys)):
        cfg = base
        for k, v in zip(keys, combo):
            cfg = set_option(cfg, k, str(v))
        points.append(dict(zip(keys, combo)))
        cfgs.append(cfg)
    return [{**p, **r} for p, r in zip(points, _run_all(cfgs, jobs))]


ABLATIONS = {
    "full": {},
    "no_am": {"no_am": True},
    "no_pc": {"no_pc": True},
    "no_uc": {"no_uc": True},
    "no_entropy": {"no_entropy": True},
}


def run_ablation(base: ExperimentConfig, seeds, jobs: int = 1) -> list[dict]:
    """Full objective and each single-term ablation for every seed.

    A seed sets the data, init and batching seeds together.
    """
    points, cfgs = [], []
    for seed in seeds:
        for name, flags in ABLATIONS.items():
            points.append({"seed": seed, "variant": name})
            cfgs.append(base.replace(data_seed=seed, init_seed=seed, batch_seed=seed, **flags))
    return [{**p, **r} for p, r in zip(points, _run_all(cfgs, jobs))]


def write_table(rows: list[dict], path_or_buf) -> None:
    if not rows:
        raise ValueError("no rows to write")
    cols = list(rows[0])
    own = isinstance(path_or_buf, (str, Path))
    fh = open(path_or_buf, "w", encoding="utf-8", newline="") if own else path_or_buf
    try:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    finally:
        if own:
            fh.close()


def dump_embeddings(params: ModelParams, ds: Dataset, split: str | None = None) -> str:
    """CSV of id, true label, predicted label and all logits for each sample."""
    if params.D != ds.D or params.K != ds.K:
        raise ValueError(f"checkpoint expects D={params.D}, K={params.K}; dataset has D={ds.D}, K={ds.K}")
    idx = np.arange(len(ds.labels)) if split is None else ds.indices(split)
    logits = forward(params, ds.features[idx])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "label", "pred"] + [f"z{k}" for k in range(ds.K)])
    for row, i in enumerate(idx):
        z = logits[row]
        w.writerow([int(ds.ids[i]), int(ds.labels[i]), int(np.argmax(z))] + [repr(float(v)) for v in z])
    return buf.getvalue()
