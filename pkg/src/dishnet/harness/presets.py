"""Named experiment presets reproducing the published study settings."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..hybrid import AdlrSchedule, CutoffNoise, EstimatorConfig
from ..preprocess import PoolSpec
from ..varfit import NormalSpec

DEFAULT_SEEDS_10 = tuple(range(10))


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved description of one experiment.

    `kind` selects the runner: 'train' (plain multi-trial training),
    'sparsity-sweep', 'adpp-sweep', 'estimator-sweep', 'cutoff-study',
    'minprenum'. All presets expand to explicit values here; reports echo
    this config verbatim.
    """

    name: str
    kind: str = "train"
    # dataset
    n_images: int | None = 100        # None = full training set
    train_equals_test: bool = True
    n_test: int | None = None         # None = full test set (when split)
    # topology
    n_in: int = 196
    n_hidden: int = 100
    n_out: int = 10
    sparsity: float = 0.40
    # initialization
    vth: NormalSpec = NormalSpec(0.0058, 0.0017)
    init_w: NormalSpec = NormalSpec(0.0007, 0.0007)
    hw_init: NormalSpec = NormalSpec(0.0007, 0.0007)
    negative_weight_policy: str = "clamp"
    # training
    lr_bio: float = 1e-4
    lr_hw: float = 1e-2
    epochs: int = 100
    batch_size: int = 1
    estimator: EstimatorConfig | None = None     # None = plain STE
    adlr: AdlrSchedule | None = None
    # preprocessing
    pool: PoolSpec = field(default_factory=PoolSpec)
    nin_b: float | None = None        # Adpp target; None = fixed threshold
    # orchestration
    trials: int = 10
    seeds: tuple[int, ...] = DEFAULT_SEEDS_10
    sweep_values: tuple = ()
    noise: CutoffNoise | None = None
    minprenum_trials: int = 1000
    minprenum_n_max: int = 20

    def __post_init__(self):
        if self.trials != len(self.seeds):
            raise ValueError(f"trials ({self.trials}) must equal the number "
                             f"of seeds ({len(self.seeds)})")

    def stage(self, *, adpp: bool, est: bool, adlr: bool) -> "ExperimentConfig":
        """Derived config with optimization stages toggled."""
        return replace(
            self,
            name=f"{self.name}[adpp={adpp},est={est},adlr={adlr}]",
            nin_b=self.nin_b if adpp else None,
            estimator=self.estimator if est else None,
            adlr=self.adlr if adlr else None,
        )


_TABLE2 = dict(
    n_images=1000, train_equals_test=True, sparsity=0.40,
    vth=NormalSpec(0.0058, 0.0017), init_w=NormalSpec(0.0007, 0.0007),
    hw_init=NormalSpec(0.0007, 0.03), lr_bio=5e-6, lr_hw=0.008,
    epochs=100, trials=10, seeds=DEFAULT_SEEDS_10,
)

_FULL_MNIST = dict(
    n_images=None, train_equals_test=False, n_test=None,
    sparsity=0.40, vth=NormalSpec(0.0058, 0.0017),
    init_w=NormalSpec(0.0007, 0.0007), hw_init=NormalSpec(0.0007, 0.03),
    lr_bio=1e-5, lr_hw=0.1, nin_b=26.0,
    estimator=EstimatorConfig(0.0, 0.0075),
    adlr=AdlrSchedule(lr0_bio=1e-5, lr0_hw=0.1, decay_rate=0.2),
    epochs=30, trials=1, seeds=(0,),
)


def _presets() -> dict[str, ExperimentConfig]:
    table = {}
    table["var-study-fixed"] = ExperimentConfig(
        name="var-study-fixed", n_images=100, train_equals_test=True,
        sparsity=0.40, vth=NormalSpec(0.0055, 0.0), init_w=NormalSpec(0.00072, 0.0),
        hw_init=NormalSpec(0.0007, 0.0007), lr_bio=1e-4, lr_hw=1e-2,
        epochs=100, trials=10, seeds=DEFAULT_SEEDS_10)
    table["var-study-var"] = replace(
        table["var-study-fixed"], name="var-study-var",
        vth=NormalSpec(0.0058, 0.0017), init_w=NormalSpec(0.0007, 0.0007))
    table["opt-1000"] = ExperimentConfig(
        name="opt-1000", nin_b=20.0, estimator=EstimatorConfig(0.0, 0.0075),
        adlr=AdlrSchedule(lr0_bio=5e-6, lr0_hw=0.1, decay_rate=0.2),
        **_TABLE2)
    table["sparsity-sweep"] = ExperimentConfig(
        name="sparsity-sweep", kind="sparsity-sweep",
        sweep_values=tuple(np.round(np.arange(0.1, 1.01, 0.1), 2)), **_TABLE2)
    table["adpp-sweep"] = ExperimentConfig(
        name="adpp-sweep", kind="adpp-sweep",
        sweep_values=(10.0, 15.0, 20.0, 25.0, 30.0), **_TABLE2)
    table["estimator-sweep"] = ExperimentConfig(
        name="estimator-sweep", kind="estimator-sweep", nin_b=20.0,
        sweep_values=(
            (-np.inf, np.inf),
            (0.0058 - 0.0051, 0.0058 + 0.0051),
            (0.0058 - 0.0034, 0.0058 + 0.0034),
            (0.0058 - 0.0017, 0.0058 + 0.0017),
            (0.0, 0.0065), (0.0, 0.0075), (0.0, 0.0085),
        ), **_TABLE2)
    table["adlr"] = ExperimentConfig(
        name="adlr", adlr=AdlrSchedule(lr0_bio=5e-6, lr0_hw=0.1, decay_rate=0.2),
        **_TABLE2)
    for hidden in (100, 500, 2000):
        table[f"full-mnist-{hidden}"] = replace(
            ExperimentConfig(name=f"full-mnist-{hidden}", **_FULL_MNIST),
            n_hidden=hidden)
    table["cutoff-study"] = ExperimentConfig(
        name="cutoff-study", kind="cutoff-study", n_images=100,
        train_equals_test=True, sparsity=0.40,
        vth=NormalSpec(0.0058, 0.0017), init_w=NormalSpec(0.0007, 0.0007),
        hw_init=NormalSpec(0.0007, 0.0007), lr_bio=1e-4, lr_hw=1e-2,
        epochs=100, noise=CutoffNoise(0.10, 0.10), trials=10,
        seeds=DEFAULT_SEEDS_10)
    table["minprenum"] = ExperimentConfig(
        name="minprenum", kind="minprenum", trials=1, seeds=(0,),
        minprenum_trials=1000, minprenum_n_max=20)
    return table


PRESET_NAMES = tuple(sorted(_presets()))


def preset(name: str) -> ExperimentConfig:
    """Look up a named preset; unknown names list the valid ones."""
    table = _presets()
    if name not in table:
        raise KeyError(f"unknown preset {name!r}; valid presets: "
                       f"{', '.join(sorted(table))}")
    return table[name]
