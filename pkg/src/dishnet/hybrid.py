"""Two-layer hybrid network: constrained binary bio layer + softmax readout.

The bio layer is a sparse non-negative weight matrix with per-neuron
thresholds; a hidden unit fires when its input-weight sum strictly exceeds
its threshold. Weights stay inside [0.5x, 2x] of their initial values after
every update (entries whose initial draw was clamped to zero stay zero).
The hardware layer is an unconstrained fully connected softmax readout.
Backpropagation crosses the hard threshold with a straight-through estimator
whose pass-through gate can be restricted to preactivations inside a
configured range.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from .varfit import NormalSpec, apply_weight_policy

VTH_FLOOR = 1e-6
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class EstimatorConfig:
    """Preactivation range inside which the bio-layer gradient passes."""

    lower: float = -np.inf
    upper: float = np.inf

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"estimator range empty: ({self.lower}, {self.upper})")

    @property
    def is_plain(self) -> bool:
        return np.isneginf(self.lower) and np.isposinf(self.upper)


PLAIN_STE = EstimatorConfig()


@dataclass(frozen=True)
class AdlrSchedule:
    """Exponential learning-rate decay over the training horizon."""

    lr0_bio: float
    lr0_hw: float
    decay_rate: float = 0.2
    horizon: int | None = None   # defaults to total epochs at train time
    staircase: bool = False


@dataclass(frozen=True)
class CutoffNoise:
    """Readout noise model for the early-cutoff study.

    Each firing hidden unit is silenced with probability p_loss; silent units
    spuriously fire with a probability scaled so the expected number of added
    spikes is p_gain times the true spike count.
    """

    p_loss: float = 0.10
    p_gain: float = 0.10


@dataclass
class TrainConfig:
    lr_bio: float = 1e-4
    lr_hw: float = 1e-2
    epochs: int = 100
    batch_size: int = 1
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    adlr: AdlrSchedule | None = None
    seed: int = 0
    negative_weight_policy: str = "clamp"
    shuffle: bool = True
    hidden_noise: CutoffNoise | None = None

    def __post_init__(self):
        if self.lr_bio <= 0 or self.lr_hw <= 0:
            raise ValueError("learning rates must be > 0")
        if self.adlr is not None and not 0 < self.adlr.decay_rate < 1:
            raise ValueError("decay_rate must be in (0,1)")


@dataclass
class BioLayer:
    mask: np.ndarray          # (n_in, n_hidden) bool
    weights: np.ndarray       # (n_in, n_hidden) float, 0 off-mask, >= 0
    init_weights: np.ndarray  # snapshot at initialization
    thresholds: np.ndarray    # (n_hidden,) > 0

    @property
    def n_in(self):
        return self.mask.shape[0]

    @property
    def n_hidden(self):
        return self.mask.shape[1]

    @property
    def sparsity(self) -> float:
        return float(self.mask.mean())

    def mean_weight(self) -> float:
        """Mean weight over realized synapses (masked entries)."""
        return float(self.weights[self.mask].mean())

    def check_invariants(self):
        if np.any(self.weights[~self.mask] != 0):
            raise AssertionError("nonzero weight off the synapse mask")
        if np.any(self.weights < 0):
            raise AssertionError("negative bio-layer weight")
        lo = 0.5 * self.init_weights
        hi = 2.0 * self.init_weights
        if np.any(self.weights < lo) or np.any(self.weights > hi):
            raise AssertionError("bio-layer weight outside [0.5x, 2x] of initial")
        if np.any(self.thresholds <= 0):
            raise AssertionError("non-positive threshold")


@dataclass
class HardwareLayer:
    weights: np.ndarray       # (n_hidden, n_out)

    @property
    def n_out(self):
        return self.weights.shape[1]


@dataclass
class HybridModel:
    bio: BioLayer
    hw: HardwareLayer

    @property
    def n_in(self):
        return self.bio.n_in

    @property
    def n_hidden(self):
        return self.bio.n_hidden

    @property
    def n_out(self):
        return self.hw.n_out


@dataclass
class ForwardCache:
    x: np.ndarray
    preact: np.ndarray
    h: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


def init_bio_layer(n_in: int, n_hidden: int, sparsity: float,
                   weight_dist: NormalSpec, vth_dist: NormalSpec,
                   policy: str = "clamp",
                   rng: np.random.Generator | None = None,
                   seed: int = 0) -> BioLayer:
    """Sample mask, constrained weights and thresholds.

    Thresholds are clamped below at 1e-6 (a ~3.4 sigma event for the fitted
    distribution). init_weights snapshots the weights after the negativity
    policy, so clamped-to-zero entries freeze at zero.
    """
    if not 0 < sparsity <= 1:
        raise ValueError(f"sparsity must be in (0, 1], got {sparsity}")
    rng = rng if rng is not None else np.random.default_rng(seed)
    mask = rng.random((n_in, n_hidden)) < sparsity
    weights = weight_dist.sample(rng, (n_in, n_hidden))
    weights = apply_weight_policy(weights, policy, rng, weight_dist)
    weights = np.where(mask, weights, 0.0)
    thresholds = np.maximum(vth_dist.sample(rng, n_hidden), VTH_FLOOR)
    return BioLayer(mask, weights, weights.copy(), thresholds)


def init_hardware_layer(n_hidden: int, n_out: int, dist: NormalSpec,
                        rng: np.random.Generator | None = None,
                        seed: int = 0) -> HardwareLayer:
    rng = rng if rng is not None else np.random.default_rng(seed)
    return HardwareLayer(dist.sample(rng, (n_hidden, n_out)))


def bio_forward(layer: BioLayer, x: np.ndarray):
    """(preact, h): input-weight sums and the strict-threshold firing vector.

    Accumulates over the active input bits only, so the training fast path
    and this public op share the exact same float operations.
    """
    x = np.asarray(x, dtype=np.float64)
    idx = np.flatnonzero(x)
    if len(idx):
        preact = (layer.weights[idx] * x[idx, None]).sum(axis=0)
    else:
        preact = np.zeros(layer.n_hidden)
    h = (preact > layer.thresholds).astype(np.float64)
    return preact, h


def hw_forward(layer: HardwareLayer, h: np.ndarray) -> np.ndarray:
    return np.asarray(h, dtype=np.float64) @ layer.weights


def softmax(logits: np.ndarray) -> np.ndarray:
    """Shift-invariant softmax with a sequential-order denominator sum."""
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    denom = np.cumsum(e, axis=-1)[..., -1:]
    return e / denom


def cross_entropy(probs: np.ndarray, label: int) -> float:
    p = float(probs[label])
    if p < PROB_FLOOR:
        warnings.warn("probability underflow in cross entropy; clamping",
                      stacklevel=2)
        p = PROB_FLOOR
    return -np.log(p)


def forward(model: HybridModel, x: np.ndarray) -> ForwardCache:
    preact, h = bio_forward(model.bio, x)
    logits = hw_forward(model.hw, h)
    probs = softmax(logits)
    return ForwardCache(np.asarray(x, dtype=np.float64), preact, h, logits, probs)


def predict(model: HybridModel, x: np.ndarray) -> int:
    """Index of the largest output; argmax ties go to the lowest index."""
    return int(np.argmax(forward(model, x).probs))


def backward(model: HybridModel, cache: ForwardCache, label: int,
             est: EstimatorConfig = PLAIN_STE):
    """(grad_bio, grad_hw) of the cross-entropy loss.

    The hardware gradient is exact; the bio gradient passes the hidden error
    straight through the threshold, gated to preactivations strictly inside
    the estimator range, and is zeroed off the synapse mask.
    """
    dlogits = cache.probs.copy()
    dlogits[label] -= 1.0
    grad_hw = np.outer(cache.h, dlogits)
    err = model.hw.weights @ dlogits
    gate = (cache.preact > est.lower) & (cache.preact < est.upper)
    grad_bio = np.outer(cache.x, err * gate) * model.bio.mask
    return grad_bio, grad_hw


def apply_updates(model: HybridModel, grads, lr_bio: float, lr_hw: float) -> HybridModel:
    """SGD step; the bio layer is re-projected into its constraint box."""
    grad_bio, grad_hw = grads
    model.hw.weights -= lr_hw * grad_hw
    bio = model.bio
    lo = 0.5 * bio.init_weights
    hi = 2.0 * bio.init_weights
    bio.weights = np.clip(bio.weights - lr_bio * grad_bio, lo, hi)
    return model


def adaptive_lr(lr0: float, decay_rate: float, epoch, horizon: int,
                staircase: bool = False) -> float:
    """lr0 * decay_rate^(epoch/horizon), continuous in epoch by default."""
    if not 0 < decay_rate < 1:
        raise ValueError("decay_rate must be in (0,1)")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    frac = np.floor(epoch) / horizon if staircase else epoch / horizon
    return float(lr0 * decay_rate ** frac)


def _apply_hidden_noise(h: np.ndarray, noise: CutoffNoise,
                        rng: np.random.Generator) -> np.ndarray:
    firing = h > 0
    k = int(firing.sum())
    out = h.copy()
    if k:
        out[firing & (rng.random(h.shape) < noise.p_loss)] = 0.0
        silent = ~firing
        n_silent = int(silent.sum())
        if n_silent:
            p_add = min(noise.p_gain * k / n_silent, 1.0)
            out[silent & (rng.random(h.shape) < p_add)] = 1.0
    return out


def train_step(model: HybridModel, x, label: int, lr_bio: float, lr_hw: float,
               est: EstimatorConfig = PLAIN_STE,
               noise: CutoffNoise | None = None,
               rng: np.random.Generator | None = None) -> float:
    """One SGD example: forward, backward, constrained update. Returns loss.

    Exploits binary inputs: only rows of active input bits carry bio-layer
    gradient, so the constraint clamp touches just those rows. Bit-identical
    to forward() + backward() + apply_updates().
    """
    x = np.asarray(x, dtype=np.float64)
    bio = model.bio
    preact, h = bio_forward(bio, x)
    if noise is not None:
        h = _apply_hidden_noise(h, noise, rng)
    logits = hw_forward(model.hw, h)
    probs = softmax(logits)
    loss = cross_entropy(probs, label)
    dlogits = probs.copy()
    dlogits[label] -= 1.0
    # hidden error uses the pre-update hardware weights
    err = model.hw.weights @ dlogits
    gate = (preact > est.lower) & (preact < est.upper)
    err_gated = err * gate
    model.hw.weights -= lr_hw * np.outer(h, dlogits)
    idx = np.flatnonzero(x)
    if len(idx):
        rows = bio.weights[idx] - lr_bio * (x[idx, None] * err_gated) * bio.mask[idx]
        bio.weights[idx] = np.clip(rows, 0.5 * bio.init_weights[idx],
                                   2.0 * bio.init_weights[idx])
    return loss


def evaluate(model: HybridModel, vectors: np.ndarray, labels: np.ndarray,
             noise: CutoffNoise | None = None,
             rng: np.random.Generator | None = None):
    """(accuracy, nf_hidden) over a batch of binary vectors."""
    X = np.asarray(vectors, dtype=np.float64)
    preact = X @ model.bio.weights
    h = (preact > model.bio.thresholds).astype(np.float64)
    if noise is not None:
        for i in range(len(h)):
            h[i] = _apply_hidden_noise(h[i], noise, rng)
    logits = h @ model.hw.weights
    pred = np.argmax(logits, axis=1)
    acc = float((pred == np.asarray(labels)).mean())
    return acc, float(h.mean())


def f_metric(sparsity: float, nin_b: float, mean_w: float, vth: float) -> float:
    """Capacity indicator (sparsity * nin_b * mean_w) / vth; best near 1."""
    if vth <= 0:
        raise ValueError("vth must be > 0")
    return sparsity * nin_b * mean_w / vth


def nf_hidden(model: HybridModel, vectors: np.ndarray) -> float:
    """Mean fraction of hidden units firing per image."""
    X = np.asarray(vectors, dtype=np.float64)
    h = (X @ model.bio.weights) > model.bio.thresholds
    return float(h.mean())


def init_model(n_in: int, n_hidden: int, n_out: int, sparsity: float,
               weight_dist: NormalSpec, vth_dist: NormalSpec,
               hw_dist: NormalSpec, policy: str = "clamp",
               seed: int = 0) -> HybridModel:
    """Initialize both layers from one seeded generator."""
    rng = np.random.default_rng(seed)
    bio = init_bio_layer(n_in, n_hidden, sparsity, weight_dist, vth_dist,
                         policy, rng=rng)
    hw = init_hardware_layer(n_hidden, n_out, hw_dist, rng=rng)
    return HybridModel(bio, hw)


def _as_arrays(dataset):
    if hasattr(dataset, "vectors"):
        return np.asarray(dataset.vectors), np.asarray(dataset.labels)
    vectors, labels = dataset
    return np.asarray(vectors), np.asarray(labels)


def current_lrs(cfg: TrainConfig, epoch: int) -> tuple[float, float]:
    if cfg.adlr is None:
        return cfg.lr_bio, cfg.lr_hw
    horizon = cfg.adlr.horizon or cfg.epochs
    return (adaptive_lr(cfg.adlr.lr0_bio, cfg.adlr.decay_rate, epoch, horizon,
                        cfg.adlr.staircase),
            adaptive_lr(cfg.adlr.lr0_hw, cfg.adlr.decay_rate, epoch, horizon,
                        cfg.adlr.staircase))


def train(model: HybridModel, dataset, cfg: TrainConfig, test_dataset=None,
          epoch_callback=None) -> list[dict]:
    """Seeded SGD over the dataset; returns one metrics dict per epoch.

    With batch_size 1 (default) updates are applied per example via the
    fused step; larger batches average gradients before one update.
    Identical (model, dataset, cfg) always produce the identical history.
    """
    vectors, labels = _as_arrays(dataset)
    if len(vectors) == 0:
        raise ValueError("training dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    nin_b = float(np.asarray(vectors).sum(axis=1).mean())
    history = []
    for epoch in range(cfg.epochs):
        lr_bio, lr_hw = current_lrs(cfg, epoch)
        order = rng.permutation(len(vectors)) if cfg.shuffle else np.arange(len(vectors))
        losses = 0.0
        if cfg.batch_size == 1:
            for i in order:
                losses += train_step(model, vectors[i], int(labels[i]),
                                     lr_bio, lr_hw, cfg.estimator,
                                     cfg.hidden_noise, rng)
        else:
            for start in range(0, len(order), cfg.batch_size):
                chunk = order[start:start + cfg.batch_size]
                gb = np.zeros_like(model.bio.weights)
                gh = np.zeros_like(model.hw.weights)
                for i in chunk:
                    cache = forward(model, vectors[i])
                    if cfg.hidden_noise is not None:
                        cache.h = _apply_hidden_noise(cache.h, cfg.hidden_noise, rng)
                        cache.logits = hw_forward(model.hw, cache.h)
                        cache.probs = softmax(cache.logits)
                    losses += cross_entropy(cache.probs, int(labels[i]))
                    b, hw_g = backward(model, cache, int(labels[i]), cfg.estimator)
                    gb += b
                    gh += hw_g
                apply_updates(model, (gb / len(chunk), gh / len(chunk)),
                              lr_bio, lr_hw)
        train_acc, nf = evaluate(model, vectors, labels)
        rec = {
            "epoch": epoch,
            "lr_bio": lr_bio,
            "lr_hw": lr_hw,
            "train_loss": losses / len(vectors),
            "train_accuracy": train_acc,
            "nf_hidden": nf,
            "mean_weight": model.bio.mean_weight(),
            "f_metric": f_metric(model.bio.sparsity, nin_b,
                                 model.bio.mean_weight(),
                                 float(model.bio.thresholds.mean())),
        }
        if test_dataset is not None:
            tv, tl = _as_arrays(test_dataset)
            rec["test_accuracy"], _ = evaluate(model, tv, tl)
        history.append(rec)
        if epoch_callback is not None:
            epoch_callback(epoch, rec)
    return history


def save_checkpoint(path, model: HybridModel, cfg: TrainConfig | None = None):
    """Persist the full model (and config) to one .npz file."""
    meta = {}
    if cfg is not None:
        meta = {
            "lr_bio": cfg.lr_bio, "lr_hw": cfg.lr_hw, "epochs": cfg.epochs,
            "batch_size": cfg.batch_size, "seed": cfg.seed,
            "estimator": [cfg.estimator.lower, cfg.estimator.upper],
            "negative_weight_policy": cfg.negative_weight_policy,
            "shuffle": cfg.shuffle,
            "adlr": None if cfg.adlr is None else asdict(cfg.adlr),
            "hidden_noise": None if cfg.hidden_noise is None else asdict(cfg.hidden_noise),
        }
    np.savez(path,
             mask=model.bio.mask, weights=model.bio.weights,
             init_weights=model.bio.init_weights,
             thresholds=model.bio.thresholds,
             hw_weights=model.hw.weights,
             config=json.dumps(meta))


def load_checkpoint(path) -> tuple[HybridModel, dict]:
    with np.load(path, allow_pickle=False) as z:
        model = HybridModel(
            BioLayer(z["mask"].astype(bool), z["weights"],
                     z["init_weights"], z["thresholds"]),
            HardwareLayer(z["hw_weights"]))
        meta = json.loads(str(z["config"]))
    return model, meta
