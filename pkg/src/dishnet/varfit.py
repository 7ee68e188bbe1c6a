"""Conversion of biophysical variability to weight/threshold distributions.

The bridge statistic is minPreNum: how many simultaneously stimulated
presynaptic cells it takes to fire a postsynaptic cell. Firing-probability
curves are estimated per library cell by Monte Carlo over random pre-cell and
synapse draws; their expectations scale (by the mean synaptic conductance)
into the threshold distribution, and a peak-aligned average of the curves is
matched by a simulated hard-threshold unit to recover the weight distribution.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .biophys import engine
from .biophys.engine import CellBatch, CellState
from .biophys.network import (DEFAULT_DT, SimConfig, StimulusSpec,
                              detect_spikes, simulate_network)
from .biophys.params import (MEAN_GSYN_US, NEURON_LIBRARY, SYNAPSE_LIBRARY,
                             PA_TO_DENSITY, US_TO_DENSITY)

DEFAULT_VTH_MEAN = 0.0058
# the paper-rounded mean synapse conductance used for threshold scaling
DEFAULT_MEAN_WEIGHT = 0.0008

GRID_MEANS = np.round(np.arange(0.0001, 0.00201, 0.0001), 7)
GRID_STDS = np.round(np.arange(0.0001, 0.00201, 0.0001), 7)


class UndefinedExpectationError(ValueError):
    """The firing curve carries no probability mass (cell never fires)."""


@dataclass(frozen=True)
class NormalSpec:
    """Parameters of a normal distribution, used for weights and thresholds."""

    mean: float
    std: float

    def __post_init__(self):
        if self.std < 0:
            raise ValueError(f"std must be >= 0, got {self.std}")

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return rng.normal(self.mean, self.std, size=size)


def apply_weight_policy(draws: np.ndarray, policy: str, rng: np.random.Generator,
                        spec: NormalSpec) -> np.ndarray:
    """Enforce non-negativity on normal draws.

    'clamp': negatives become exactly 0 (and stay frozen at 0 downstream,
    since the clamp range collapses). 'resample': redraw until positive.
    """
    if policy == "clamp":
        return np.maximum(draws, 0.0)
    if policy == "resample":
        if spec.mean <= 0 and spec.std == 0:
            raise ValueError("cannot resample positives from a non-positive "
                             "point distribution")
        out = draws.copy()
        bad = out <= 0
        while bad.any():
            out[bad] = spec.sample(rng, int(bad.sum()))
            bad = out <= 0
        return out
    raise ValueError(f"unknown negative-weight policy {policy!r}")


@dataclass
class MinPreNumCurve:
    """Estimated firing probability vs presynaptic count."""

    n_values: np.ndarray     # presynaptic counts, ascending
    p_fire: np.ndarray       # same length, in [0,1]
    post_cell: int | None    # 1-based library index, None for averaged curves
    trials: int

    def __post_init__(self):
        self.n_values = np.asarray(self.n_values, dtype=int)
        self.p_fire = np.asarray(self.p_fire, dtype=float)
        if self.n_values.shape != self.p_fire.shape:
            raise ValueError("n_values and p_fire must have equal length")
        if len(self.n_values) < 1 or self.trials < 1:
            raise ValueError("curve needs at least one point and one trial")
        if np.any(self.p_fire < 0) or np.any(self.p_fire > 1):
            raise ValueError("p_fire entries must lie in [0,1]")

    def mass(self) -> np.ndarray:
        """Unnormalized minPreNum mass: clipped increments of p_fire."""
        padded = np.concatenate([[0.0], self.p_fire])
        return np.maximum(np.diff(padded), 0.0)

    def to_dict(self):
        return {"n_values": self.n_values.tolist(),
                "p_fire": self.p_fire.tolist(),
                "post_cell": self.post_cell, "trials": self.trials}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["n_values"]), np.asarray(d["p_fire"]),
                   d["post_cell"], d["trials"])


def curve_expectation(curve: MinPreNumCurve) -> float:
    """Expected minPreNum under the renormalized increment mass."""
    q = curve.mass()
    total = q.sum()
    if total <= 0:
        raise UndefinedExpectationError(
            f"curve for post cell {curve.post_cell} never fires; "
            "expectation undefined")
    return float((curve.n_values * q).sum() / total)


def derive_threshold_dist(expectations, mean_weight: float = DEFAULT_MEAN_WEIGHT
                          ) -> NormalSpec:
    """Scale the nine curve expectations into the threshold distribution."""
    expectations = np.asarray(expectations, dtype=float)
    if expectations.shape != (9,):
        raise ValueError(f"expected nine expectations, got {expectations.shape}")
    if mean_weight <= 0:
        raise ValueError("mean_weight must be > 0")
    return NormalSpec(float(expectations.mean() * mean_weight),
                      float(expectations.std() * mean_weight))


def align_average_curves(curves) -> MinPreNumCurve:
    """Average the curves after shifting each so the mass peaks coincide.

    The peak is the argmax of the increment mass (ties toward smaller n).
    Positions undefined for a curve are excluded from that position's
    average. Curves whose expectation is undefined are skipped with a
    warning. The returned axis is re-anchored at the rounded mean peak and
    truncated to counts >= 1.
    """
    usable, peaks = [], []
    for c in curves:
        q = c.mass()
        if q.sum() <= 0:
            warnings.warn(f"excluding curve for post cell {c.post_cell}: "
                          "never fires", stacklevel=2)
            continue
        usable.append(c)
        peaks.append(int(c.n_values[np.argmax(q)]))
    if not usable:
        raise UndefinedExpectationError("no usable curves to average")
    peak_ref = int(round(np.mean(peaks)))
    offsets = {}
    for c, pk in zip(usable, peaks):
        for n, p in zip(c.n_values, c.p_fire):
            offsets.setdefault(n - pk, []).append(p)
    axis = np.array(sorted(offsets), dtype=int) + peak_ref
    keep = axis >= 1
    axis = axis[keep]
    avg = np.array([np.mean(offsets[j]) for j in sorted(offsets)])[keep]
    return MinPreNumCurve(axis, avg, None, min(c.trials for c in usable))


# --- biophysical minPreNum -------------------------------------------------

_LIB_SPIKE_CACHE: dict = {}


def library_spike_times(stimulus: StimulusSpec | None = None, dt: float = DEFAULT_DT,
                        duration: float = 40.0, neuron_library=NEURON_LIBRARY,
                        ) -> np.ndarray:
    """First spike-peak time of each library cell under the stimulus pulse."""
    stimulus = stimulus or StimulusSpec()
    key = (stimulus, dt, duration, tuple(neuron_library))
    cached = _LIB_SPIKE_CACHE.get(key)
    if cached is not None:
        return cached.copy()
    batch = CellBatch.from_params(list(neuron_library))
    rests = [engine.resting_state(p) for p in neuron_library]
    state = CellState(np.array([r.v_s for r in rests]),
                      np.array([r.v_d for r in rests]),
                      np.stack([r.gating for r in rests]),
                      np.array([r.ca for r in rests]))
    steps = int(round(duration / dt))
    amp = stimulus.amplitude_pa * PA_TO_DENSITY
    traces = np.empty((steps + 1, len(neuron_library)))
    traces[0] = state.v_s
    for k in range(steps):
        t = k * dt
        inj = amp if stimulus.onset_ms <= t < stimulus.onset_ms + stimulus.width_ms else 0.0
        state = engine.step_semi_implicit(batch, state, dt, inj)
        traces[k + 1] = state.v_s
    times = []
    for j in range(len(neuron_library)):
        peaks = detect_spikes(traces[:, j], dt)
        if len(peaks) == 0:
            raise RuntimeError(f"library cell {j + 1} does not fire under the "
                               "default pulse; stimulus needs recalibration")
        times.append(peaks[0])
    out = np.asarray(times)
    _LIB_SPIKE_CACHE[key] = out.copy()
    return out


def _alpha_drive(t_grid, spike_t, syn_idx, synapse_library):
    """Summed alpha conductance (uS) and conductance*reversal per trial.

    spike_t, syn_idx: (trials, n) presynaptic spike times and synapse draws.
    Returns g (steps, trials) and g*e (steps, trials).
    """
    taus = np.array([s.tau for s in synapse_library])
    gbars = np.array([s.gsyn_bar for s in synapse_library])
    delays = np.array([s.delay for s in synapse_library])
    esyns = np.array([s.e_syn for s in synapse_library])
    g = np.zeros((len(t_grid), spike_t.shape[0]))
    ge = np.zeros_like(g)
    for j in range(spike_t.shape[1]):
        tau = taus[syn_idx[:, j]]
        t0 = spike_t[:, j] + delays[syn_idx[:, j]]
        d = (t_grid[:, None] - t0[None, :]) / tau[None, :]
        contrib = np.where(d > 0, gbars[syn_idx[:, j]][None, :] * d
                           * np.exp(-np.maximum(d, 0.0)), 0.0)
        g += contrib
        ge += contrib * esyns[syn_idx[:, j]][None, :]
    return g, ge


def _post_fires(post_params, g_series, ge_series, dt) -> np.ndarray:
    """Whether each trial's conductance drive makes the post cell spike."""
    trials = g_series.shape[1]
    batch = CellBatch.from_params([post_params] * trials)
    rest = engine.resting_state(post_params)
    state = CellState(np.full(trials, rest.v_s), np.full(trials, rest.v_d),
                      np.tile(rest.gating, (trials, 1)), np.full(trials, rest.ca))
    fired = np.zeros(trials, dtype=bool)
    conv = US_TO_DENSITY
    for k in range(g_series.shape[0]):
        state = engine.step_semi_implicit(batch, state, dt,
                                          0.0, g_series[k] * conv,
                                          ge_series[k] * conv)
        fired |= state.v_s > 0.0
    return fired


def minprenum_curve(post_cell: int, n_max: int = 20, trials: int = 1000,
                    seed: int = 0, stimulus: StimulusSpec | None = None,
                    dt: float = DEFAULT_DT, duration: float = 50.0,
                    neuron_library=NEURON_LIBRARY,
                    synapse_library=SYNAPSE_LIBRARY,
                    cumulative_draws: bool = False) -> MinPreNumCurve:
    """Monte Carlo firing-probability curve for one post cell (1-based index).

    Per trial, n presynaptic cells and synapses are drawn uniformly with
    replacement; all presynaptic cells are stimulated simultaneously with the
    default pulse (their spike times depend only on their own parameters, so
    they are computed once per library cell and reused). With
    cumulative_draws the count-n trial extends the count-(n-1) trial by one
    more input, which makes per-trial minimal counts well defined.
    """
    if not 1 <= post_cell <= len(neuron_library):
        raise ValueError(f"post_cell must be in 1..{len(neuron_library)}")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    tpk = library_spike_times(stimulus, dt, neuron_library=neuron_library)
    rng = np.random.default_rng(seed)
    t_grid = np.arange(int(round(duration / dt))) * dt
    post_params = neuron_library[post_cell - 1]
    p_fire = np.empty(n_max)
    if cumulative_draws:
        pre_all = rng.integers(0, len(neuron_library), size=(trials, n_max))
        syn_all = rng.integers(0, len(synapse_library), size=(trials, n_max))
    for n in range(1, n_max + 1):
        if cumulative_draws:
            pre, syn = pre_all[:, :n], syn_all[:, :n]
        else:
            pre = rng.integers(0, len(neuron_library), size=(trials, n))
            syn = rng.integers(0, len(synapse_library), size=(trials, n))
        g, ge = _alpha_drive(t_grid, tpk[pre], syn, synapse_library)
        p_fire[n - 1] = _post_fires(post_params, g, ge, dt).mean()
    return MinPreNumCurve(np.arange(1, n_max + 1), p_fire, post_cell, trials)


def minprenum_fire_matrix(post_cell: int, n_max: int = 20, trials: int = 1000,
                          seed: int = 0, **kw) -> np.ndarray:
    """(trials, n_max) firing outcomes with cumulative draws (shared inputs)."""
    kw = dict(kw, cumulative_draws=True)
    # reuse the curve path but capture per-trial outcomes
    neuron_library = kw.pop("neuron_library", NEURON_LIBRARY)
    synapse_library = kw.pop("synapse_library", SYNAPSE_LIBRARY)
    stimulus = kw.pop("stimulus", None)
    dt = kw.pop("dt", DEFAULT_DT)
    duration = kw.pop("duration", 50.0)
    tpk = library_spike_times(stimulus, dt, neuron_library=neuron_library)
    rng = np.random.default_rng(seed)
    t_grid = np.arange(int(round(duration / dt))) * dt
    post_params = neuron_library[post_cell - 1]
    pre_all = rng.integers(0, len(neuron_library), size=(trials, n_max))
    syn_all = rng.integers(0, len(synapse_library), size=(trials, n_max))
    fired = np.zeros((trials, n_max), dtype=bool)
    for n in range(1, n_max + 1):
        g, ge = _alpha_drive(t_grid, tpk[pre_all[:, :n]], syn_all[:, :n],
                             synapse_library)
        fired[:, n - 1] = _post_fires(post_params, g, ge, dt)
    return fired


def per_trial_expectation(fire_matrix: np.ndarray) -> float:
    """Mean minimal firing count over trials; censored trials are excluded."""
    any_fire = fire_matrix.any(axis=1)
    if not any_fire.any():
        raise UndefinedExpectationError("no trial fires within n_max")
    first = np.argmax(fire_matrix[any_fire], axis=1) + 1
    return float(first.mean())


# --- computational minPreNum and the weight-distribution fit ----------------

def computational_minprenum_curve(weight_dist: NormalSpec, vth: float,
                                  n_max: int = 20, trials: int = 1000,
                                  negative_weight_policy: str = "clamp",
                                  seed: int = 0) -> MinPreNumCurve:
    """Hard-threshold analogue: fire iff the sum of n drawn weights exceeds vth.

    Counts share draws through cumulative sums (common random numbers), which
    leaves each p_fire(n) estimate unbiased and makes the curve monotone.
    """
    if vth <= 0:
        raise ValueError("vth must be > 0")
    rng = np.random.default_rng(seed)
    draws = weight_dist.sample(rng, (trials, n_max))
    draws = apply_weight_policy(draws, negative_weight_policy, rng, weight_dist)
    sums = np.cumsum(draws, axis=1)
    p = (sums > vth).mean(axis=0)
    return MinPreNumCurve(np.arange(1, n_max + 1), p, None, trials)


def fit_weight_dist(target: MinPreNumCurve, vth: float = DEFAULT_VTH_MEAN,
                    mean_grid=GRID_MEANS, std_grid=GRID_STDS,
                    trials: int = 1000, seed: int = 0,
                    negative_weight_policy: str = "clamp",
                    return_details: bool = False):
    """Grid-search the normal weight distribution matching a target curve.

    Minimizes the sum of squared p_fire differences over the counts shared by
    the target axis and 1..n_max. Warns when the optimum sits on the grid
    boundary.
    """
    mean_grid = np.asarray(mean_grid, dtype=float)
    std_grid = np.asarray(std_grid, dtype=float)
    if mean_grid.size == 0 or std_grid.size == 0:
        raise ValueError("search grids must be non-empty")
    n_max = int(target.n_values.max())
    common = (target.n_values >= 1) & (target.n_values <= n_max)
    t_ns = target.n_values[common]
    t_ps = target.p_fire[common]
    sse = np.empty((len(mean_grid), len(std_grid)))
    for i, m in enumerate(mean_grid):
        for j, s in enumerate(std_grid):
            curve = computational_minprenum_curve(
                NormalSpec(m, s), vth, n_max, trials,
                negative_weight_policy, seed)
            sse[i, j] = float(((curve.p_fire[t_ns - 1] - t_ps) ** 2).sum())
    i, j = np.unravel_index(np.argmin(sse), sse.shape)
    if i in (0, len(mean_grid) - 1) or j in (0, len(std_grid) - 1):
        warnings.warn("weight-distribution fit hit the search-grid boundary",
                      stacklevel=2)
    best = NormalSpec(float(mean_grid[i]), float(std_grid[j]))
    if return_details:
        return best, {"sse": sse, "mean_grid": mean_grid, "std_grid": std_grid}
    return best


# --- pipeline ----------------------------------------------------------------

@dataclass
class VariationFit:
    """Artifact of the full variability-transfer pipeline."""

    curves: list
    expectations: np.ndarray
    threshold_dist: NormalSpec
    averaged_curve: MinPreNumCurve
    weight_dist: NormalSpec
    settings: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({
            "curves": [c.to_dict() for c in self.curves],
            "expectations": np.asarray(self.expectations).tolist(),
            "threshold_dist": [self.threshold_dist.mean, self.threshold_dist.std],
            "averaged_curve": self.averaged_curve.to_dict(),
            "weight_dist": [self.weight_dist.mean, self.weight_dist.std],
            "settings": self.settings,
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "VariationFit":
        d = json.loads(text)
        return cls([MinPreNumCurve.from_dict(c) for c in d["curves"]],
                   np.asarray(d["expectations"]),
                   NormalSpec(*d["threshold_dist"]),
                   MinPreNumCurve.from_dict(d["averaged_curve"]),
                   NormalSpec(*d["weight_dist"]),
                   d.get("settings", {}))


def fit_variations(trials: int = 1000, n_max: int = 20, seed: int = 0,
                   mean_weight: float = DEFAULT_MEAN_WEIGHT,
                   vth: float = DEFAULT_VTH_MEAN,
                   expectation_method: str = "curve",
                   fit_trials: int | None = None) -> VariationFit:
    """Run the nine-cell minPreNum study and derive both distributions."""
    curves = []
    expectations = []
    for cell in range(1, 10):
        if expectation_method == "per_trial":
            fired = minprenum_fire_matrix(cell, n_max, trials, seed + cell)
            curves.append(MinPreNumCurve(np.arange(1, n_max + 1),
                                         fired.mean(axis=0), cell, trials))
            expectations.append(per_trial_expectation(fired))
        else:
            curve = minprenum_curve(cell, n_max, trials, seed + cell)
            curves.append(curve)
            expectations.append(curve_expectation(curve))
    expectations = np.asarray(expectations)
    threshold = derive_threshold_dist(expectations, mean_weight)
    averaged = align_average_curves(curves)
    weight = fit_weight_dist(averaged, vth, trials=fit_trials or trials,
                             seed=seed)
    return VariationFit(curves, expectations, threshold, averaged, weight,
                        settings={"trials": trials, "n_max": n_max, "seed": seed,
                                  "mean_weight": mean_weight, "vth": vth,
                                  "expectation_method": expectation_method})
