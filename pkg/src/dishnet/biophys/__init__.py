"""Biophysical layer: two-compartment cells, alpha synapses, random networks."""

from .engine import (CellState, DivergenceError, InvalidStateError,
                     integrate_step, pr_derivatives, resting_state)
from .network import (BioNetwork, ConfigurationError, SimConfig, SpikeRecord,
                      StimulusSpec, apply_cutoff, build_bio_network,
                      build_recurrent_twin, detect_spikes, simulate_network)
from .params import (NEURON_LIBRARY, SYNAPSE_LIBRARY, NeuronParams,
                     SynapseParams)
from .study import SecondarySpikeReport, secondary_spike_experiment
from .synapse import alpha_conductance, synaptic_current, total_alpha_conductance

__all__ = [
    "CellState", "DivergenceError", "InvalidStateError", "integrate_step",
    "pr_derivatives", "resting_state", "BioNetwork", "ConfigurationError",
    "SimConfig", "SpikeRecord", "StimulusSpec", "apply_cutoff",
    "build_bio_network", "build_recurrent_twin", "detect_spikes",
    "simulate_network", "NEURON_LIBRARY", "SYNAPSE_LIBRARY", "NeuronParams",
    "SynapseParams", "SecondarySpikeReport", "secondary_spike_experiment",
    "alpha_conductance", "synaptic_current", "total_alpha_conductance",
]
