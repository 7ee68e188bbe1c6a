"""Experiment orchestration: data loading, seeded trials, reports.

Every run resolves to (config echo, per-trial histories, aggregates) written
as a JSON report plus a long-format CSV of (trial, epoch, metric, value).
The CSV is flushed after every epoch so interrupted runs keep partial data.
Image subsets are the first N images of the training set in file order.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .. import hybrid, preprocess, varfit
from ..biophys import SimConfig, secondary_spike_experiment
from ..hybrid import CutoffNoise, EstimatorConfig, TrainConfig
from ..preprocess import BinaryDataset, PoolSpec, RawDataset
from .presets import ExperimentConfig

TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"
TEST_IMAGES = "t10k-images-idx3-ubyte"
TEST_LABELS = "t10k-labels-idx1-ubyte"


class DatasetNotFoundError(FileNotFoundError):
    pass


def _find(data_dir: Path, stem: str) -> Path:
    for cand in (data_dir / stem, data_dir / (stem + ".gz")):
        if cand.exists():
            return cand
    raise DatasetNotFoundError(
        f"MNIST file {stem}[.gz] not found in {data_dir}; download the "
        "official IDX files into that directory")


def load_mnist(data_dir, train: bool = True) -> RawDataset:
    data_dir = Path(data_dir)
    stems = (TRAIN_IMAGES, TRAIN_LABELS) if train else (TEST_IMAGES, TEST_LABELS)
    return preprocess.load_idx(_find(data_dir, stems[0]), _find(data_dir, stems[1]))


def mnist_available(data_dir) -> bool:
    try:
        for stem in (TRAIN_IMAGES, TRAIN_LABELS, TEST_IMAGES, TEST_LABELS):
            _find(Path(data_dir), stem)
        return True
    except DatasetNotFoundError:
        return False


@dataclass
class RunReport:
    config: dict
    histories: list            # per trial: list of per-epoch dicts
    final_accuracies: list
    mean_accuracy: float
    std_accuracy: float
    extras: dict
    wall_clock_s: float

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, default=_jsonable)


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if dataclasses.is_dataclass(o):
        return dataclasses.asdict(o)
    if isinstance(o, float) and not np.isfinite(o):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o)}")


def config_echo(cfg: ExperimentConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["seeds"] = list(cfg.seeds)
    d["sweep_values"] = [list(v) if isinstance(v, tuple) else v
                         for v in cfg.sweep_values]
    return json.loads(json.dumps(d, default=_jsonable))


def prepare_datasets(cfg: ExperimentConfig, raw_train: RawDataset,
                     raw_test: RawDataset | None):
    """Pool + binarize per config; Adpp tunes the threshold on the train subset."""
    subset = raw_train if cfg.n_images is None else raw_train.subset(cfg.n_images)
    pooled = preprocess.avg_pool_batch(subset.images, cfg.pool)
    if cfg.nin_b is not None:
        thr = preprocess.threshold_for_target_ninb(pooled, cfg.nin_b)
    else:
        thr = cfg.pool.binarize_threshold
    train_data = BinaryDataset(preprocess.binarize_batch(pooled, thr),
                               np.asarray(subset.labels).copy())
    if cfg.train_equals_test:
        return train_data, train_data, thr
    if raw_test is None:
        raise DatasetNotFoundError("config needs a test split but no test set "
                                   "was provided")
    test = raw_test if cfg.n_test is None else raw_test.subset(cfg.n_test)
    pooled_t = preprocess.avg_pool_batch(test.images, cfg.pool)
    test_data = BinaryDataset(preprocess.binarize_batch(pooled_t, thr),
                              np.asarray(test.labels).copy())
    return train_data, test_data, thr


def build_model(cfg: ExperimentConfig, seed: int) -> hybrid.HybridModel:
    return hybrid.init_model(cfg.n_in, cfg.n_hidden, cfg.n_out, cfg.sparsity,
                             cfg.init_w, cfg.vth, cfg.hw_init,
                             cfg.negative_weight_policy, seed)


def train_config(cfg: ExperimentConfig, seed: int) -> TrainConfig:
    return TrainConfig(
        lr_bio=cfg.lr_bio, lr_hw=cfg.lr_hw, epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        estimator=cfg.estimator or hybrid.PLAIN_STE,
        adlr=cfg.adlr, seed=seed,
        negative_weight_policy=cfg.negative_weight_policy,
        hidden_noise=cfg.noise if cfg.kind == "cutoff-study" else None,
    )


class _CsvWriter:
    """Long-format metrics CSV, flushed per epoch for durability."""

    def __init__(self, path: Path | None):
        self.file = None
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            self.file = open(path, "w", newline="")
            self.writer = csv.writer(self.file)
            self.writer.writerow(["trial", "epoch", "metric", "value"])

    def epoch(self, trial: int, epoch: int, record: dict):
        if self.file is None:
            return
        for key, val in record.items():
            if key == "epoch" or val is None:
                continue
            self.writer.writerow([trial, epoch, key, val])
        self.file.flush()

    def close(self):
        if self.file is not None:
            self.file.close()


def run_training_trials(cfg: ExperimentConfig, train_data, test_data,
                        csv_writer: _CsvWriter | None = None,
                        trial_offset: int = 0):
    """Train once per seed; returns (histories, final test accuracies)."""
    histories, finals = [], []
    for k, seed in enumerate(cfg.seeds):
        model = build_model(cfg, seed)
        tcfg = train_config(cfg, seed)
        cb = None
        if csv_writer is not None:
            cb = lambda ep, rec, _t=trial_offset + k: csv_writer.epoch(_t, ep, rec)
        hist = hybrid.train(model, train_data, tcfg,
                            test_dataset=None if test_data is train_data else test_data,
                            epoch_callback=cb)
        histories.append(hist)
        last = hist[-1]
        finals.append(last.get("test_accuracy", last["train_accuracy"]))
    return histories, finals


def run_experiment(cfg: ExperimentConfig, data_dir=None, out_dir=None,
                   raw_train: RawDataset | None = None,
                   raw_test: RawDataset | None = None) -> RunReport:
    """Execute a resolved config; optionally persist report + CSV to out_dir.

    Data can be passed directly (raw_train/raw_test) or loaded from data_dir.
    """
    t0 = time.time()
    if cfg.kind != "minprenum" and raw_train is None:
        if data_dir is None:
            raise DatasetNotFoundError("no data_dir given and no dataset passed")
        raw_train = load_mnist(data_dir, train=True)
        if not cfg.train_equals_test:
            raw_test = load_mnist(data_dir, train=False)

    out_dir = Path(out_dir) if out_dir is not None else None
    csv_writer = _CsvWriter(out_dir / f"{cfg.name}.csv" if out_dir else None)
    extras: dict = {}
    histories: list = []
    finals: list = []

    try:
        if cfg.kind == "train":
            train_data, test_data, thr = prepare_datasets(cfg, raw_train, raw_test)
            extras["binarize_threshold"] = thr
            extras["mean_nin_b"] = train_data.mean_nin_b
            histories, finals = run_training_trials(cfg, train_data, test_data,
                                                    csv_writer)
        elif cfg.kind == "sparsity-sweep":
            rows = []
            for i, sp in enumerate(cfg.sweep_values):
                sub = replace(cfg, kind="train", sparsity=float(sp),
                              name=f"{cfg.name}@{sp}")
                train_data, test_data, _ = prepare_datasets(sub, raw_train, raw_test)
                hists, accs = run_training_trials(sub, train_data, test_data,
                                                  csv_writer, trial_offset=i * len(cfg.seeds))
                histories.extend(hists)
                rows.append({"sparsity": float(sp),
                             "mean_accuracy": float(np.mean(accs)),
                             "std_accuracy": float(np.std(accs)),
                             "mean_nf_hidden": float(np.mean([h[-1]["nf_hidden"] for h in hists])),
                             "mean_f_metric": float(np.mean([h[-1]["f_metric"] for h in hists]))})
                finals.extend(accs)
            extras["sweep"] = rows
        elif cfg.kind == "adpp-sweep":
            rows = []
            for i, target in enumerate(cfg.sweep_values):
                sub = replace(cfg, kind="train", nin_b=float(target),
                              name=f"{cfg.name}@{target}")
                train_data, test_data, thr = prepare_datasets(sub, raw_train, raw_test)
                hists, accs = run_training_trials(sub, train_data, test_data,
                                                  csv_writer, trial_offset=i * len(cfg.seeds))
                histories.extend(hists)
                rows.append({"nin_b": float(target), "threshold": thr,
                             "mean_nin_b": train_data.mean_nin_b,
                             "mean_accuracy": float(np.mean(accs)),
                             "mean_nf_hidden": float(np.mean([h[-1]["nf_hidden"] for h in hists]))})
                finals.extend(accs)
            extras["sweep"] = rows
        elif cfg.kind == "estimator-sweep":
            rows = []
            for i, (lo, hi) in enumerate(cfg.sweep_values):
                sub = replace(cfg, kind="train",
                              estimator=EstimatorConfig(float(lo), float(hi)),
                              name=f"{cfg.name}@({lo},{hi})")
                train_data, test_data, _ = prepare_datasets(sub, raw_train, raw_test)
                hists, accs = run_training_trials(sub, train_data, test_data,
                                                  csv_writer, trial_offset=i * len(cfg.seeds))
                histories.extend(hists)
                rows.append({"estimator": [float(lo), float(hi)],
                             "mean_accuracy": float(np.mean(accs))})
                finals.extend(accs)
            extras["sweep"] = rows
        elif cfg.kind == "cutoff-study":
            extras = run_cutoff_study(cfg, raw_train, csv_writer)
            finals = extras["noisy_accuracies"]
        elif cfg.kind == "minprenum":
            fit = varfit.fit_variations(trials=cfg.minprenum_trials,
                                        n_max=cfg.minprenum_n_max,
                                        seed=cfg.seeds[0])
            extras = {"expectations": fit.expectations.tolist(),
                      "threshold_dist": [fit.threshold_dist.mean, fit.threshold_dist.std],
                      "weight_dist": [fit.weight_dist.mean, fit.weight_dist.std]}
            finals = [float(fit.expectations.mean())]
            if out_dir:
                (out_dir / "variation_fit.json").write_text(fit.to_json())
        else:
            raise ValueError(f"unknown experiment kind {cfg.kind!r}")
    finally:
        csv_writer.close()

    report = RunReport(
        config=config_echo(cfg),
        histories=histories,
        final_accuracies=[float(a) for a in finals],
        mean_accuracy=float(np.mean(finals)) if finals else float("nan"),
        std_accuracy=float(np.std(finals)) if finals else float("nan"),
        extras=extras,
        wall_clock_s=time.time() - t0,
    )
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / f"{cfg.name}.json").write_text(report.to_json())
    return report


def run_cutoff_study(cfg: ExperimentConfig, raw_train: RawDataset,
                     csv_writer=None) -> dict:
    """Both halves of the early-cutoff study.

    Biophysical half: secondary-spike experiment on the first five images.
    Computational half: paired clean/noisy training runs per seed with the
    spike loss/gain readout noise.
    """
    train_data, _, _ = prepare_datasets(cfg, raw_train, None)
    images = train_data.vectors[:5]
    sim_cfg = SimConfig(duration=60.0)
    report = secondary_spike_experiment(cfg.n_in, cfg.n_hidden, cfg.sparsity,
                                        images, sim_cfg, seed=cfg.seeds[0])
    clean_accs, noisy_accs = [], []
    for k, seed in enumerate(cfg.seeds):
        for noisy in (False, True):
            model = build_model(cfg, seed)
            tcfg = train_config(replace(cfg, noise=cfg.noise if noisy else None), seed)
            hist = hybrid.train(model, train_data, tcfg)
            (noisy_accs if noisy else clean_accs).append(hist[-1]["train_accuracy"])
            if csv_writer is not None:
                csv_writer.epoch(2 * k + int(noisy), cfg.epochs - 1, hist[-1])
    return {
        "overlap_fraction": report.overlap_fraction,
        "optimal_cutoff_ms": report.optimal_cutoff,
        "n_primary": int(len(report.primary_times)),
        "n_secondary": int(len(report.secondary_times)),
        "clean_accuracies": clean_accs,
        "noisy_accuracies": noisy_accs,
        "mean_clean": float(np.mean(clean_accs)),
        "mean_noisy": float(np.mean(noisy_accs)),
        "accuracy_drop": float(np.mean(clean_accs) - np.mean(noisy_accs)),
    }
