"""Random culture networks: construction, simulation, spike extraction.

A network has n_input + n_output neurons, each drawn with replacement from
the fitted neuron library; every potential edge of a connectivity block is
realized independently with probability ``sparsity`` and carries a synapse
drawn with replacement from the synapse library. The feedforward block
(input->output) always exists; recurrent networks add the input->input,
output->output and output->input blocks at the same probability.

Stimulation is a rectangular somatic current pulse delivered simultaneously
to every input neuron whose pattern bit is set. A spike is an upward
zero-crossing episode of the somatic voltage; its reported time is the
episode's (first) local maximum. Presynaptic conductance clocks start at the
spike peak time plus the per-edge transmission delay.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import engine
from .engine import (CellBatch, CellState, DEFAULT_DT, DEFAULT_SCHEME,
                     DivergenceError, step_rk4, step_semi_implicit)
from .params import (NEURON_LIBRARY, PA_TO_DENSITY, SYNAPSE_LIBRARY,
                     US_TO_DENSITY, NeuronParams, SynapseParams)

SPIKE_THRESHOLD_MV = 0.0

# pulse that makes every library cell fire exactly one spike (calibrated;
# a 3 ms pulse needs far more charge than the long current-clamp steps used
# for the fits, hence the amplitude)
DEFAULT_PULSE_PA = 1500.0
DEFAULT_PULSE_ONSET_MS = 5.0
DEFAULT_PULSE_WIDTH_MS = 3.0


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class StimulusSpec:
    """Rectangular somatic current pulse for stimulated inputs."""

    amplitude_pa: float = DEFAULT_PULSE_PA
    onset_ms: float = DEFAULT_PULSE_ONSET_MS
    width_ms: float = DEFAULT_PULSE_WIDTH_MS


@dataclass(frozen=True)
class SimConfig:
    dt: float = DEFAULT_DT
    duration: float = 50.0
    stimulus: StimulusSpec = field(default_factory=StimulusSpec)
    cutoff_time: float | None = None
    seed: int = 0
    scheme: str = DEFAULT_SCHEME
    record_traces: bool = False

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigurationError(f"dt must be > 0, got {self.dt}")
        if self.duration < self.stimulus.onset_ms + self.stimulus.width_ms:
            raise ConfigurationError("duration must cover the stimulus pulse")
        if self.cutoff_time is not None and self.cutoff_time > self.duration:
            raise ConfigurationError("cutoff_time must not exceed duration")
        if self.scheme not in engine.SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")


@dataclass
class SpikeRecord:
    """Simulated spike events: parallel arrays of neuron id and peak time."""

    neuron_ids: np.ndarray      # (k,) int
    times: np.ndarray           # (k,) float ms, grid-aligned peaks
    n_neurons: int
    duration: float
    dt: float
    traces: np.ndarray | None = None  # (steps+1, n_neurons) somatic voltage

    def spike_times(self, neuron: int) -> np.ndarray:
        return np.sort(self.times[self.neuron_ids == neuron])

    def count(self, neuron: int | None = None) -> int:
        if neuron is None:
            return len(self.times)
        return int((self.neuron_ids == neuron).sum())

    def to_json(self) -> str:
        return json.dumps({
            "n_neurons": self.n_neurons,
            "duration": self.duration,
            "dt": self.dt,
            "events": [[int(i), float(t)] for i, t in zip(self.neuron_ids, self.times)],
        })

    @classmethod
    def from_json(cls, text: str) -> "SpikeRecord":
        d = json.loads(text)
        ev = np.asarray(d["events"], dtype=float).reshape(-1, 2)
        return cls(ev[:, 0].astype(int), ev[:, 1], d["n_neurons"], d["duration"], d["dt"])


@dataclass
class BioNetwork:
    """Directed weighted spiking network over library neurons/synapses."""

    n_input: int
    n_output: int
    neuron_idx: np.ndarray   # (n,) library index per neuron
    edge_pre: np.ndarray     # (e,) presynaptic neuron id
    edge_post: np.ndarray    # (e,) postsynaptic neuron id
    edge_syn: np.ndarray     # (e,) synapse library index
    sparsity: float
    recurrent: bool
    seed: int
    neuron_library: tuple[NeuronParams, ...] = NEURON_LIBRARY
    synapse_library: tuple[SynapseParams, ...] = SYNAPSE_LIBRARY

    @property
    def n_neurons(self) -> int:
        return self.n_input + self.n_output

    @property
    def output_ids(self) -> np.ndarray:
        return np.arange(self.n_input, self.n_neurons)

    @property
    def n_edges(self) -> int:
        return len(self.edge_pre)

    def neuron_params(self, neuron: int) -> NeuronParams:
        return self.neuron_library[self.neuron_idx[neuron]]

    def block_edge_count(self, block: str) -> int:
        """Edges in one of the blocks 'io', 'ii', 'oo', 'oi'."""
        pre_in = self.edge_pre < self.n_input
        post_in = self.edge_post < self.n_input
        masks = {"io": pre_in & ~post_in, "ii": pre_in & post_in,
                 "oo": ~pre_in & ~post_in, "oi": ~pre_in & post_in}
        return int(masks[block].sum())

    def measured_sparsity(self) -> float:
        """Realized connectivity of the input->output block."""
        return self.block_edge_count("io") / (self.n_input * self.n_output)

    def to_json(self) -> str:
        return json.dumps({
            "n_input": self.n_input,
            "n_output": self.n_output,
            "sparsity": self.sparsity,
            "recurrent": self.recurrent,
            "seed": self.seed,
            "neuron_idx": self.neuron_idx.tolist(),
            "edges": np.column_stack([self.edge_pre, self.edge_post,
                                      self.edge_syn]).tolist(),
        })

    @classmethod
    def from_json(cls, text: str,
                  neuron_library=NEURON_LIBRARY,
                  synapse_library=SYNAPSE_LIBRARY) -> "BioNetwork":
        d = json.loads(text)
        edges = np.asarray(d["edges"], dtype=int).reshape(-1, 3)
        return cls(d["n_input"], d["n_output"],
                   np.asarray(d["neuron_idx"], dtype=int),
                   edges[:, 0], edges[:, 1], edges[:, 2],
                   d["sparsity"], d["recurrent"], d["seed"],
                   neuron_library, synapse_library)


def _sample_block(rng, pre_ids, post_ids, sparsity, exclude_self):
    mask = rng.random((len(pre_ids), len(post_ids))) < sparsity
    if exclude_self:
        np.fill_diagonal(mask, False)
    pre, post = np.nonzero(mask)
    return pre_ids[pre], post_ids[post]


def build_bio_network(n_input: int, n_output: int, sparsity: float,
                      recurrent: bool = False,
                      neuron_library=NEURON_LIBRARY,
                      synapse_library=SYNAPSE_LIBRARY,
                      seed: int = 0) -> BioNetwork:
    """Sample a random network; same seed -> identical network.

    Draw order is fixed: neuron assignments, then the edge masks for blocks
    io, ii, oo, oi (recurrent blocks only when requested), then synapse
    assignments for all edges.
    """
    if not 0 < sparsity <= 1:
        raise ConfigurationError(f"sparsity must be in (0, 1], got {sparsity}")
    if not neuron_library or not synapse_library:
        raise ConfigurationError("neuron and synapse libraries must be non-empty")
    rng = np.random.default_rng(seed)
    n = n_input + n_output
    neuron_idx = rng.integers(0, len(neuron_library), size=n)
    inputs = np.arange(n_input)
    outputs = np.arange(n_input, n)
    pres, posts = [], []
    blocks = [(inputs, outputs, False)]
    if recurrent:
        blocks += [(inputs, inputs, True), (outputs, outputs, True),
                   (outputs, inputs, False)]
    for pre_ids, post_ids, excl in blocks:
        p, q = _sample_block(rng, pre_ids, post_ids, sparsity, excl)
        pres.append(p)
        posts.append(q)
    edge_pre = np.concatenate(pres) if pres else np.empty(0, int)
    edge_post = np.concatenate(posts) if posts else np.empty(0, int)
    edge_syn = rng.integers(0, len(synapse_library), size=len(edge_pre))
    return BioNetwork(n_input, n_output, neuron_idx, edge_pre, edge_post,
                      edge_syn, sparsity, recurrent, seed,
                      tuple(neuron_library), tuple(synapse_library))


def build_recurrent_twin(net: BioNetwork, seed: int,
                         sparsity: float | None = None) -> BioNetwork:
    """Add recurrent blocks (ii, oo, oi) to a feedforward network.

    Neuron assignments and feedforward edges are shared exactly, so the twin
    differs from the original only by the added connections.
    """
    if net.recurrent:
        raise ConfigurationError("twin must be built from a feedforward network")
    sp = net.sparsity if sparsity is None else sparsity
    rng = np.random.default_rng(seed)
    inputs = np.arange(net.n_input)
    outputs = net.output_ids
    pres, posts = [net.edge_pre], [net.edge_post]
    for pre_ids, post_ids, excl in [(inputs, inputs, True),
                                    (outputs, outputs, True),
                                    (outputs, inputs, False)]:
        if sp > 0:
            p, q = _sample_block(rng, pre_ids, post_ids, sp, excl)
        else:
            p = q = np.empty(0, int)
        pres.append(p)
        posts.append(q)
    edge_pre = np.concatenate(pres)
    edge_post = np.concatenate(posts)
    n_new = len(edge_pre) - net.n_edges
    edge_syn = np.concatenate([net.edge_syn,
                               rng.integers(0, len(net.synapse_library), size=n_new)])
    return replace(net, edge_pre=edge_pre, edge_post=edge_post,
                   edge_syn=edge_syn, recurrent=True)


def _initial_states(net: BioNetwork) -> CellState:
    """Stack cached per-library resting states into a batch state."""
    rest = {i: engine.resting_state(p) for i, p in enumerate(net.neuron_library)}
    idx = net.neuron_idx
    return CellState(
        np.array([rest[i].v_s for i in idx]),
        np.array([rest[i].v_d for i in idx]),
        np.stack([rest[i].gating for i in idx]),
        np.array([rest[i].ca for i in idx]),
    )


class _PeakDetector:
    """Online episode tracker: one spike per above-threshold episode, at the
    first local maximum. Matches detect_spikes() on the same trace."""

    def __init__(self, n, threshold=SPIKE_THRESHOLD_MV):
        self.thr = threshold
        self.above = np.zeros(n, dtype=bool)
        self.committed = np.zeros(n, dtype=bool)
        self.peak_v = np.full(n, -np.inf)
        self.peak_t = np.zeros(n)

    def update(self, v, t):
        """Returns array of neuron ids whose spike peak was just located."""
        above = v > self.thr
        entered = above & ~self.above
        self.peak_v[entered] = v[entered]
        self.peak_t[entered] = t
        self.committed[entered] = False
        cont = above & self.above & ~self.committed
        rising = cont & (v > self.peak_v)
        self.peak_v[rising] = v[rising]
        self.peak_t[rising] = t
        falling = cont & (v < self.peak_v)
        exited = ~above & self.above & ~self.committed
        commit = falling | exited
        self.committed[commit] = True
        self.above = above
        return np.flatnonzero(commit)


def simulate_network(net: BioNetwork, input_pattern, cfg: SimConfig) -> SpikeRecord:
    """Stimulate pattern bits simultaneously and propagate spikes."""
    pattern = np.asarray(input_pattern).astype(bool)
    if pattern.shape != (net.n_input,):
        raise ValueError(f"input pattern must have length {net.n_input}, "
                         f"got shape {pattern.shape}")
    n = net.n_neurons
    dt = cfg.dt
    steps = int(round(cfg.duration / dt))
    batch = CellBatch.from_params([net.neuron_params(i) for i in range(n)])
    state = _initial_states(net)

    # per-edge alpha states: y (kicked by 1 per presynaptic spike) and the
    # normalized conductance shape g; both decay exactly each step
    syn_gbar = np.array([net.synapse_library[s].gsyn_bar for s in net.edge_syn])
    syn_tau = np.array([net.synapse_library[s].tau for s in net.edge_syn])
    syn_delay = np.array([net.synapse_library[s].delay for s in net.edge_syn])
    syn_esyn = np.array([net.synapse_library[s].e_syn for s in net.edge_syn])
    gbar_dens = syn_gbar * US_TO_DENSITY
    decay = np.exp(-dt / syn_tau)
    y = np.zeros(net.n_edges)
    g = np.zeros(net.n_edges)

    # outgoing edges grouped by presynaptic neuron
    order = np.argsort(net.edge_pre, kind="stable")
    sorted_pre = net.edge_pre[order]
    offsets = np.searchsorted(sorted_pre, np.arange(n + 1))

    stim_dens = np.zeros(n)
    stim_dens[:net.n_input][pattern] = cfg.stimulus.amplitude_pa * PA_TO_DENSITY
    onset, offset = cfg.stimulus.onset_ms, cfg.stimulus.onset_ms + cfg.stimulus.width_ms

    stepper = step_semi_implicit if cfg.scheme == "semi_implicit" else step_rk4
    detector = _PeakDetector(n)
    pending: dict[int, list[int]] = {}
    ev_ids: list[int] = []
    ev_times: list[float] = []
    traces = np.empty((steps + 1, n)) if cfg.record_traces else None
    if traces is not None:
        traces[0] = state.v_s

    for k in range(steps):
        t = k * dt
        kicked = pending.pop(k, None)
        if kicked:
            np.add.at(y, np.asarray(kicked), 1.0)
        # exact alpha propagation over [t, t+dt]
        g = decay * (g + dt * y / syn_tau)
        y = y * decay
        g_dens = np.bincount(net.edge_post, weights=gbar_dens * g, minlength=n)
        ge_dens = np.bincount(net.edge_post, weights=gbar_dens * g * syn_esyn,
                              minlength=n)
        i_inj = stim_dens if onset <= t < offset else 0.0
        state = stepper(batch, state, dt, i_inj, g_dens, ge_dens)
        if not np.isfinite(state.v_s).all():
            bad = int(np.flatnonzero(~np.isfinite(state.v_s))[0])
            raise DivergenceError(bad, t + dt)
        if traces is not None:
            traces[k + 1] = state.v_s
        for nid in detector.update(state.v_s, t + dt):
            pt = detector.peak_t[nid]
            ev_ids.append(int(nid))
            ev_times.append(float(pt))
            for e in order[offsets[nid]:offsets[nid + 1]]:
                arrive = pt + syn_delay[e]
                pending.setdefault(int(round(arrive / dt)), []).append(int(e))

    ev = np.argsort(ev_times, kind="stable")
    return SpikeRecord(np.asarray(ev_ids, int)[ev], np.asarray(ev_times)[ev],
                       n, cfg.duration, dt, traces)


def detect_spikes(trace, dt: float, threshold: float = SPIKE_THRESHOLD_MV) -> np.ndarray:
    """Spike peak times (ms) from one sampled somatic voltage trace.

    One event per above-threshold episode, timed at the episode's first local
    maximum (the sample after which the voltage first drops).
    """
    v = np.asarray(trace, dtype=float)
    if v.size == 0:
        return np.empty(0)
    above = v > threshold
    peaks = []
    i = 0
    n = len(v)
    while i < n:
        if not above[i]:
            i += 1
            continue
        j = i
        while j < n and above[j]:
            j += 1
        # running max until the first strict drop, as in the online detector
        peak = i
        for k in range(i + 1, j):
            if v[k] > v[peak]:
                peak = k
            elif v[k] < v[peak]:
                break
        peaks.append(peak * dt)
        i = j
    return np.asarray(peaks)


def apply_cutoff(rec: SpikeRecord, t_cut: float, output_ids) -> np.ndarray:
    """Binary readout: bit i is 1 iff output neuron i spiked before t_cut."""
    output_ids = np.asarray(output_ids)
    early = rec.times < t_cut
    counts = np.bincount(rec.neuron_ids[early], minlength=rec.n_neurons)
    return (counts[output_ids] > 0).astype(np.uint8)
