"""Command-line interface for experiments and single simulations."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .. import hybrid, preprocess, varfit
from ..biophys import SimConfig, StimulusSpec, build_bio_network, simulate_network
from ..hybrid import AdlrSchedule, EstimatorConfig
from ..preprocess import PoolSpec
from ..varfit import NormalSpec
from . import experiments
from .presets import PRESET_NAMES, ExperimentConfig, preset


def config_from_dict(d: dict) -> ExperimentConfig:
    """Build an ExperimentConfig from the documented JSON schema.

    Distributions are [mean, std] pairs, the estimator is a [lower, upper]
    pair (strings "-inf"/"inf" allowed), adlr is
    {lr0_bio, lr0_hw, decay_rate, horizon?, staircase?} and pool is
    {filter_size, stride, padding, binarize_threshold}.
    """
    kw = dict(d)
    for key in ("vth", "init_w", "hw_init"):
        if key in kw and not isinstance(kw[key], NormalSpec):
            kw[key] = NormalSpec(*[float(v) for v in kw[key]])
    if kw.get("estimator") is not None and not isinstance(kw["estimator"], EstimatorConfig):
        lo, hi = (float(v) for v in kw["estimator"])
        kw["estimator"] = EstimatorConfig(lo, hi)
    if kw.get("adlr") is not None and not isinstance(kw["adlr"], AdlrSchedule):
        kw["adlr"] = AdlrSchedule(**kw["adlr"])
    if "pool" in kw and not isinstance(kw["pool"], PoolSpec):
        kw["pool"] = PoolSpec(**kw["pool"])
    if "seeds" in kw:
        kw["seeds"] = tuple(int(s) for s in kw["seeds"])
        kw.setdefault("trials", len(kw["seeds"]))
    if "sweep_values" in kw:
        kw["sweep_values"] = tuple(tuple(v) if isinstance(v, list) else v
                                   for v in kw["sweep_values"])
    if kw.get("noise") is not None and not isinstance(kw["noise"], hybrid.CutoffNoise):
        kw["noise"] = hybrid.CutoffNoise(**kw["noise"])
    return ExperimentConfig(**kw)


def _resolve_config(args) -> ExperimentConfig:
    if args.preset and args.config:
        raise SystemExit("pass either --preset or --config, not both")
    if args.preset:
        cfg = preset(args.preset)
    elif args.config:
        cfg = config_from_dict(json.loads(Path(args.config).read_text()))
    else:
        raise SystemExit(f"need --preset (one of {', '.join(PRESET_NAMES)}) "
                         "or --config FILE")
    overrides = {}
    if args.seeds is not None:
        seeds = tuple(int(s) for s in args.seeds.split(","))
        overrides.update(seeds=seeds, trials=len(seeds))
    elif args.trials is not None:
        overrides.update(trials=args.trials, seeds=tuple(range(args.trials)))
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    return cfg


def _add_common(p):
    p.add_argument("--preset", choices=PRESET_NAMES, default=None)
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--data", default="data", help="directory with MNIST IDX files")
    p.add_argument("--out", default=None, help="output directory for reports")
    p.add_argument("--seeds", default=None, help="comma-separated trial seeds")
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--threads", type=int, default=1,
                   help="reserved; trials run sequentially for determinism")


def cmd_train(args):
    cfg = _resolve_config(args)
    report = experiments.run_experiment(cfg, data_dir=args.data, out_dir=args.out)
    print(f"{cfg.name}: mean accuracy {report.mean_accuracy:.4f} "
          f"(std {report.std_accuracy:.4f}) over {len(report.final_accuracies)} trials")
    return 0


def cmd_sweep(args):
    return cmd_train(args)


def cmd_cutoff_study(args):
    if not args.preset and not args.config:
        args.preset = "cutoff-study"
    cfg = _resolve_config(args)
    report = experiments.run_experiment(cfg, data_dir=args.data, out_dir=args.out)
    ex = report.extras
    print(f"overlap fraction {ex['overlap_fraction']:.3f} at cutoff "
          f"{ex['optimal_cutoff_ms']:.1f} ms; accuracy drop "
          f"{ex['accuracy_drop'] * 100:.1f} points")
    return 0


def cmd_fit_variations(args):
    fit = varfit.fit_variations(trials=args.minprenum_trials, seed=args.seed)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "variation_fit.json"
    path.write_text(fit.to_json())
    print(f"threshold N({fit.threshold_dist.mean:.4g}, {fit.threshold_dist.std:.4g}), "
          f"weights N({fit.weight_dist.mean:.4g}, {fit.weight_dist.std:.4g}) -> {path}")
    return 0


def cmd_minprenum(args):
    curve = varfit.minprenum_curve(args.cell, trials=args.minprenum_trials,
                                   seed=args.seed)
    exp = varfit.curve_expectation(curve)
    print(json.dumps({"cell": args.cell, "expectation": exp,
                      "p_fire": curve.p_fire.tolist()}))
    return 0


def cmd_adpp_tune(args):
    raw = experiments.load_mnist(args.data, train=True).subset(args.probe_images)
    cfg = _resolve_config(args) if (args.preset or args.config) else preset("opt-1000")
    candidates = [float(c) for c in args.candidates.split(",")]

    def train_probe(data, epochs):
        model = experiments.build_model(cfg, args.seed)
        tcfg = experiments.train_config(
            dataclasses.replace(cfg, epochs=epochs), args.seed)
        hist = hybrid.train(model, data, tcfg)
        return hist[-1]["train_accuracy"], hist[-1]["nf_hidden"]

    best, results = preprocess.adpp_select_ninb(candidates, raw, train_probe,
                                                probe_epochs=args.probe_epochs)
    print(json.dumps({"best_nin_b": best, "results": results}))
    return 0


def cmd_evaluate(args):
    model, _ = hybrid.load_checkpoint(args.checkpoint)
    raw = experiments.load_mnist(args.data, train=False)
    cfg = _resolve_config(args) if (args.preset or args.config) else preset("opt-1000")
    test_data, _, _ = experiments.prepare_datasets(
        dataclasses.replace(cfg, n_images=None, train_equals_test=True),
        raw, None)
    acc, nf = hybrid.evaluate(model, test_data.vectors, test_data.labels)
    print(f"accuracy {acc:.4f}, nf_hidden {nf:.3f}")
    return 0


def cmd_biophys_sim(args):
    net = build_bio_network(args.n_input, args.n_output, args.sparsity,
                            recurrent=args.recurrent, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    if args.pattern:
        pattern = np.array([int(c) for c in args.pattern], dtype=np.uint8)
    else:
        pattern = (rng.random(args.n_input) < 0.15).astype(np.uint8)
    cfg = SimConfig(duration=args.duration,
                    stimulus=StimulusSpec(amplitude_pa=args.amplitude))
    rec = simulate_network(net, pattern, cfg)
    out = {"network": json.loads(net.to_json()),
           "pattern": pattern.tolist(),
           "spikes": json.loads(rec.to_json())}
    text = json.dumps(out, indent=2)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "biophys_sim.json").write_text(text)
    else:
        print(text)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dishnet",
        description="Hybrid bio-hardware network experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn in [("train", cmd_train), ("sweep", cmd_sweep),
                     ("cutoff-study", cmd_cutoff_study)]:
        p = sub.add_parser(name)
        _add_common(p)
        p.set_defaults(fn=fn)

    p = sub.add_parser("fit-variations")
    p.add_argument("--minprenum-trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_fit_variations)

    p = sub.add_parser("minprenum")
    p.add_argument("--cell", type=int, required=True, help="post cell, 1..9")
    p.add_argument("--minprenum-trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_minprenum)

    p = sub.add_parser("adpp-tune")
    _add_common(p)
    p.add_argument("--candidates", default="10,15,20,25,30")
    p.add_argument("--probe-images", type=int, default=100)
    p.add_argument("--probe-epochs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_adpp_tune)

    p = sub.add_parser("evaluate")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("biophys-sim")
    p.add_argument("--n-input", type=int, default=196)
    p.add_argument("--n-output", type=int, default=100)
    p.add_argument("--sparsity", type=float, default=0.4)
    p.add_argument("--recurrent", action="store_true")
    p.add_argument("--pattern", default=None, help="bit string of length n_input")
    p.add_argument("--duration", type=float, default=50.0)
    p.add_argument("--amplitude", type=float, default=1500.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_biophys_sim)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
