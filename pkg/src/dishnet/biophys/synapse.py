"""Alpha synapse conductance and synaptic current."""

from __future__ import annotations

import numpy as np

from .params import SynapseParams


def alpha_conductance(t, t_spike, syn: SynapseParams):
    """Conductance (uS) at time t for one presynaptic spike at t_spike.

    Zero until the transmission delay has elapsed, then
    gbar * (d/tau) * exp(-d/tau) with d measured from spike + delay.
    """
    d = (np.asarray(t, dtype=float) - t_spike - syn.delay) / syn.tau
    return np.where(d > 0, syn.gsyn_bar * d * np.exp(-np.maximum(d, 0.0)), 0.0)


def total_alpha_conductance(t, spike_times, syn: SynapseParams):
    """Summed conductance over multiple presynaptic spikes."""
    t = np.asarray(t, dtype=float)
    total = np.zeros_like(t)
    for ts in spike_times:
        total = total + alpha_conductance(t, ts, syn)
    return total


def synaptic_current(g, v_d, e_syn):
    """I = g * (v_d - e_syn), in uS*mV for g in uS.

    Negative values (v_d below the reversal) depolarize the dendrite; the
    current enters the dendritic voltage equation with a minus sign.
    """
    g = np.asarray(g, dtype=float)
    if np.any(g < 0):
        raise ValueError("synaptic conductance must be >= 0")
    return g * (np.asarray(v_d, dtype=float) - e_syn)
