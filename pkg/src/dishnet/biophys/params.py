"""Fitted neuron/synapse parameter libraries and engine unit constants.

The nine neuron entries and twelve synapse entries are the fitted values for
cultured rat cortical cells. Conductances are densities in S/cm2, capacitance
in uF/cm2, voltages in absolute mV, synaptic conductance in uS, times in ms.

Unit bookkeeping: with g in S/cm2, V in mV and C_m in uF/cm2,
g*V/C_m is 1000 mV/ms, hence RATE_SCALE below. Point currents (pA) and point
conductances (uS) are mapped to densities over the cell membrane area implied
by the 20 um stylized geometry (area = pi * d^2, the usual soma convention
where side length equals diameter).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

# dV/dt [mV/ms] = RATE_SCALE * (current density [S/cm2 * mV]) / C_m [uF/cm2]
RATE_SCALE = 1000.0

DIAMETER_UM = 20.0
MEMBRANE_AREA_CM2 = math.pi * (DIAMETER_UM * 1e-4) ** 2  # 1.2566e-5 cm2

# pA -> mA/cm2 over the whole membrane
PA_TO_DENSITY = 1e-9 / MEMBRANE_AREA_CM2
# uS -> S/cm2 over the whole membrane (point conductance to density)
US_TO_DENSITY = 1e-6 / MEMBRANE_AREA_CM2
# uS*mV -> mA/cm2 (point current to density), same area convention
USMV_TO_DENSITY = 1e-6 / MEMBRANE_AREA_CM2

# Gate activation curves are expressed relative to a reference resting
# potential of -60 mV and re-anchored per cell at its fitted leak reversal,
# plus a fixed offset calibrated so that (a) every library cell rests
# silently and (b) simultaneous-input counts needed to fire a cell land in
# the experimentally observed range. Single documented calibration constant.
KINETICS_REST_REF = -60.0
KINETICS_ANCHOR_OFFSET = 3.0


@dataclass(frozen=True)
class NeuronParams:
    """Two-compartment cell parameters (densities in S/cm2 unless noted)."""

    c_m: float              # membrane capacitance, uF/cm2
    e_leak: float           # leak reversal / fitted resting potential, mV
    g_leak: float
    g_na: float             # max Na (soma)
    g_dr: float             # max delayed-rectifier K (soma)
    g_ahp: float            # max after-hyperpolarization K (dendrite)
    g_ca: float             # max Ca (dendrite)
    g_c_kca: float          # max Ca-dependent K (dendrite)
    g_couple: float = 8.0   # soma-dendrite coupling, S/cm2
    p_soma: float = 0.5     # somatic area fraction
    diameter: float = DIAMETER_UM  # um
    e_na: float = 50.0
    e_k: float = -90.0
    e_ca: float = 120.0

    def __post_init__(self):
        for name in ("g_leak", "g_na", "g_dr", "g_ahp", "g_ca", "g_c_kca", "g_couple"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.c_m <= 0:
            raise ValueError(f"c_m must be > 0, got {self.c_m}")
        if not 0 < self.p_soma < 1:
            raise ValueError(f"p_soma must be in (0,1), got {self.p_soma}")

    @property
    def kinetics_shift(self) -> float:
        """mV subtracted from voltage before evaluating gate rate functions."""
        return self.e_leak - KINETICS_REST_REF + KINETICS_ANCHOR_OFFSET


@dataclass(frozen=True)
class SynapseParams:
    """Alpha synapse: conductance gbar*(dt/tau)*exp(-dt/tau) after spike+delay."""

    gsyn_bar: float   # max conductance, uS
    tau: float        # ms
    delay: float      # transmission delay, ms
    e_syn: float = 40.0  # reversal, mV (calibrated default, see module notes)

    def __post_init__(self):
        if self.gsyn_bar <= 0:
            raise ValueError(f"gsyn_bar must be > 0, got {self.gsyn_bar}")
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.delay < 0:
            raise ValueError(f"delay must be >= 0, got {self.delay}")


def _cell(c_m, e_leak, g_leak, g_na, g_dr, g_ahp, g_ca, g_c_kca):
    return NeuronParams(c_m=c_m, e_leak=e_leak, g_leak=g_leak * 1e-3,
                        g_na=g_na * 1e-2, g_dr=g_dr * 1e-2, g_ahp=g_ahp * 1e-2,
                        g_ca=g_ca * 1e-2, g_c_kca=g_c_kca * 1e-2)


# Nine fitted cells. Columns: c_m, E_L, gL(x1e-3), gNa(x1e-2), gDR(x1e-2),
# gAHP(x1e-2), gCa(x1e-2), gC(x1e-2).
NEURON_LIBRARY: tuple[NeuronParams, ...] = (
    _cell(10, -45, 1.10, 8, 2, 1, 0.8, 2),
    _cell(8, -40, 0.85, 6, 2, 0.9, 0.8, 2),
    _cell(10, -45, 1.48, 15, 0.5, 0.1, 0.8, 2),
    _cell(15, -35, 1.15, 29, 2, 0.45, 0.8, 2.5),
    _cell(15, -45, 1.48, 25, 1, 0.1, 0.8, 10),
    _cell(10, -56, 2.10, 9, 9.9, 3, 0.8, 20),
    _cell(8, -50, 0.80, 7, 2, 0.5, 0.8, 2),
    _cell(10, -60, 1.10, 11, 12, 0.5, 0.8, 2),
    _cell(8, -60, 0.70, 8, 6, 12, 0.8, 10),
)

# Twelve fitted synapses: gsyn (x1e-3 uS), tau (ms), delay (ms).
SYNAPSE_LIBRARY: tuple[SynapseParams, ...] = tuple(
    SynapseParams(gsyn_bar=g * 1e-3, tau=t, delay=d)
    for g, t, d in (
        (0.72, 4.50, 1.80), (0.59, 5.70, 2.00), (0.34, 4.55, 2.00),
        (0.73, 7.80, 2.00), (0.69, 5.75, 2.00), (0.63, 6.96, 1.30),
        (1.15, 5.95, 2.00), (0.21, 6.00, 2.00), (1.17, 4.40, 1.40),
        (2.28, 4.75, 1.30), (0.59, 4.90, 2.00), (0.41, 6.99, 2.00),
    )
)

MEAN_GSYN_US = float(np.mean([s.gsyn_bar for s in SYNAPSE_LIBRARY]))  # 0.79e-3


def with_reversals(params: NeuronParams, e_na=None, e_k=None, e_ca=None) -> NeuronParams:
    """Copy with overridden reversal potentials."""
    kw = {}
    if e_na is not None:
        kw["e_na"] = e_na
    if e_k is not None:
        kw["e_k"] = e_k
    if e_ca is not None:
        kw["e_ca"] = e_ca
    return replace(params, **kw)
