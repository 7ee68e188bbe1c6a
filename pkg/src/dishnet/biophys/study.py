"""Primary/secondary spike study on random networks.

A feedforward network and a recurrent-augmented twin (same neurons, same
feedforward edges) are stimulated with the same images. Output spikes of the
feedforward run are the primary spikes; output spikes of the recurrent run
with no feedforward counterpart from the same neuron nearby in time are the
secondary spikes. The early-cutoff tradeoff is then: primary spikes after
the cutoff are lost, secondary spikes before it contaminate the readout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import BioNetwork, SimConfig, build_bio_network, build_recurrent_twin, simulate_network

MATCH_WINDOW_MS = 3.0


@dataclass
class SecondarySpikeReport:
    primary_times: np.ndarray        # pooled over images, ms
    secondary_times: np.ndarray
    cutoff_grid: np.ndarray
    primary_lost_frac: np.ndarray    # fraction of primary spikes at/after each cutoff
    secondary_kept_frac: np.ndarray  # fraction of secondary spikes before each cutoff
    optimal_cutoff: float
    overlap_fraction: float          # max(lost, kept) minimized over the grid
    n_images: int
    bin_edges: np.ndarray = field(default=None)
    primary_hist: np.ndarray = field(default=None)
    secondary_hist: np.ndarray = field(default=None)


def _output_events(rec, n_input):
    mask = rec.neuron_ids >= n_input
    return rec.neuron_ids[mask], rec.times[mask]


def classify_secondary(ff_rec, rc_rec, n_input, match_window=MATCH_WINDOW_MS):
    """Split recurrent-run output spikes into re-observed primary vs secondary.

    A recurrent-run spike counts as secondary when the feedforward run has no
    spike from the same neuron within the match window.
    """
    ff_ids, ff_t = _output_events(ff_rec, n_input)
    rc_ids, rc_t = _output_events(rc_rec, n_input)
    secondary = np.ones(len(rc_ids), dtype=bool)
    for j in range(len(rc_ids)):
        same = ff_ids == rc_ids[j]
        if same.any() and np.min(np.abs(ff_t[same] - rc_t[j])) <= match_window:
            secondary[j] = False
    return rc_ids[secondary], rc_t[secondary]


def secondary_spike_experiment(n_input: int, n_output: int, sparsity: float,
                               images, cfg: SimConfig, seed: int = 0,
                               recurrent_sparsity: float | None = None,
                               match_window: float = MATCH_WINDOW_MS,
                               cutoff_grid=None, bin_width: float = 2.0,
                               ) -> SecondarySpikeReport:
    """Run the paired feedforward/recurrent simulations over the images."""
    if len(images) == 0:
        raise ValueError("need at least one image")
    net_ff = build_bio_network(n_input, n_output, sparsity, recurrent=False,
                               seed=seed)
    net_rc = build_recurrent_twin(net_ff, seed=seed + 1,
                                  sparsity=recurrent_sparsity)
    prim, seco = [], []
    for img in images:
        ff_rec = simulate_network(net_ff, img, cfg)
        rc_rec = simulate_network(net_rc, img, cfg)
        _, pt = _output_events(ff_rec, n_input)
        _, st = classify_secondary(ff_rec, rc_rec, n_input, match_window)
        prim.append(pt)
        seco.append(st)
    primary = np.sort(np.concatenate(prim)) if prim else np.empty(0)
    secondary = np.sort(np.concatenate(seco)) if seco else np.empty(0)

    if cutoff_grid is None:
        cutoff_grid = np.arange(0.0, cfg.duration + 0.5, 0.5)
    cutoff_grid = np.asarray(cutoff_grid, dtype=float)
    n_p, n_s = len(primary), len(secondary)
    lost = (np.searchsorted(primary, cutoff_grid, side="left") * -1.0 + n_p) / max(n_p, 1)
    kept = np.searchsorted(secondary, cutoff_grid, side="left") / max(n_s, 1)
    worst = np.maximum(lost, kept)
    best = int(np.argmin(worst))

    edges = np.arange(0.0, cfg.duration + bin_width, bin_width)
    return SecondarySpikeReport(
        primary_times=primary,
        secondary_times=secondary,
        cutoff_grid=cutoff_grid,
        primary_lost_frac=lost,
        secondary_kept_frac=kept,
        optimal_cutoff=float(cutoff_grid[best]),
        overlap_fraction=float(worst[best]),
        n_images=len(images),
        bin_edges=edges,
        primary_hist=np.histogram(primary, edges)[0],
        secondary_hist=np.histogram(secondary, edges)[0],
    )
