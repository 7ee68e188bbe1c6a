"""Two-compartment cell dynamics and fixed-step integrators.

Soma carries leak, Na and delayed-rectifier K; dendrite carries leak, Ca,
AHP K and Ca-dependent K. The compartments are coupled by g_couple/p on the
soma side and g_couple/(1-p) on the dendrite side. Injected current enters
the soma divided by p; synaptic current enters the dendrite divided by (1-p).

Two schemes are provided:

* ``semi_implicit`` (default): gates and calcium advance by their exact
  exponential relaxation with rates frozen at the step start, then the
  two voltages advance by a backward-Euler solve of the 2x2 linear system
  with conductances frozen. Unconditionally stable, which matters because
  the fitted coupling conductance (8 S/cm2) locks the compartments with a
  sub-microsecond time constant.
* ``rk4``: classical explicit Runge-Kutta on the full state. Accurate but
  only stable for dt below ~5e-4 ms with the library coupling; kept as an
  independent cross-check integrator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kinetics
from .params import (NeuronParams, PA_TO_DENSITY, RATE_SCALE, USMV_TO_DENSITY,
                     US_TO_DENSITY)

SCHEMES = ("semi_implicit", "rk4")
DEFAULT_SCHEME = "semi_implicit"
DEFAULT_DT = 0.025  # ms


class InvalidStateError(ValueError):
    """Cell state contains non-finite components."""


class DivergenceError(RuntimeError):
    """Integration produced NaN/Inf."""

    def __init__(self, neuron, time_ms):
        self.neuron = neuron
        self.time_ms = time_ms
        super().__init__(f"integration diverged for neuron {neuron} at t={time_ms:.3f} ms")


@dataclass
class CellState:
    """State of one cell (scalars) or a batch (equal-length arrays)."""

    v_s: np.ndarray | float
    v_d: np.ndarray | float
    gating: np.ndarray          # (..., 5), order (h, n, s, c, q), each in [0,1]
    ca: np.ndarray | float      # >= 0

    def validate(self):
        arrs = [np.asarray(self.v_s), np.asarray(self.v_d),
                np.asarray(self.gating), np.asarray(self.ca)]
        if not all(np.isfinite(a).all() for a in arrs):
            raise InvalidStateError("non-finite component in cell state")

    def copy(self) -> "CellState":
        return CellState(np.array(self.v_s, dtype=float, copy=True),
                         np.array(self.v_d, dtype=float, copy=True),
                         np.array(self.gating, dtype=float, copy=True),
                         np.array(self.ca, dtype=float, copy=True))


@dataclass
class CellBatch:
    """Struct-of-arrays view of n cells for vectorized stepping."""

    c_m: np.ndarray
    e_leak: np.ndarray
    g_leak: np.ndarray
    g_na: np.ndarray
    g_dr: np.ndarray
    g_ahp: np.ndarray
    g_ca: np.ndarray
    g_c_kca: np.ndarray
    g_couple: np.ndarray
    p_soma: np.ndarray
    e_na: np.ndarray
    e_k: np.ndarray
    e_ca: np.ndarray
    kin_shift: np.ndarray

    @classmethod
    def from_params(cls, params_list) -> "CellBatch":
        fields = {}
        for name in ("c_m", "e_leak", "g_leak", "g_na", "g_dr", "g_ahp", "g_ca",
                     "g_c_kca", "g_couple", "p_soma", "e_na", "e_k", "e_ca"):
            fields[name] = np.array([getattr(p, name) for p in params_list], dtype=float)
        fields["kin_shift"] = np.array([p.kinetics_shift for p in params_list], dtype=float)
        return cls(**fields)

    def __len__(self):
        return len(self.c_m)

    def take(self, idx) -> "CellBatch":
        return CellBatch(**{k: getattr(self, k)[idx] for k in self.__dataclass_fields__})


def _conductances(batch: CellBatch, state: CellState):
    """Gated channel conductances at the current state."""
    h, n, s, c, q = np.moveaxis(np.asarray(state.gating), -1, 0)
    minf = kinetics.m_inf(np.asarray(state.v_s) - batch.kin_shift)
    g_na = batch.g_na * minf * minf * h
    g_dr = batch.g_dr * n
    g_ca = batch.g_ca * s * s
    g_ahp = batch.g_ahp * q
    g_kc = batch.g_c_kca * c * kinetics.chi(state.ca)
    return g_na, g_dr, g_ca, g_ahp, g_kc


def batch_derivatives(batch: CellBatch, state: CellState,
                      i_inject_dens=0.0, g_syn_dens=0.0, ge_syn_dens=0.0):
    """Time derivatives of the full state.

    i_inject_dens: somatic injected current density, mA/cm2 (positive
    depolarizes). g_syn_dens / ge_syn_dens: total synaptic conductance
    density (S/cm2) and conductance-weighted reversal (S/cm2 * mV); the
    dendritic synaptic current is g*(v_d - e_syn), entering the voltage
    equation with a minus sign (excitatory input depolarizes).
    """
    vs = np.asarray(state.v_s, dtype=float)
    vd = np.asarray(state.v_d, dtype=float)
    h, n, s, c, q = np.moveaxis(np.asarray(state.gating, dtype=float), -1, 0)
    ca = np.asarray(state.ca, dtype=float)

    g_na, g_dr, g_ca, g_ahp, g_kc = _conductances(batch, state)
    p = batch.p_soma

    i_soma = (-batch.g_leak * (vs - batch.e_leak)
              - g_na * (vs - batch.e_na)
              - g_dr * (vs - batch.e_k)
              + (batch.g_couple / p) * (vd - vs)
              + i_inject_dens / p)
    i_ca = g_ca * (vd - batch.e_ca)
    i_syn = g_syn_dens * vd - ge_syn_dens
    i_dend = (-batch.g_leak * (vd - batch.e_leak)
              - i_ca
              - g_ahp * (vd - batch.e_k)
              - g_kc * (vd - batch.e_k)
              + (batch.g_couple / (1.0 - p)) * (vs - vd)
              - i_syn / (1.0 - p))

    dvs = RATE_SCALE * i_soma / batch.c_m
    dvd = RATE_SCALE * i_dend / batch.c_m

    am, bm, ah, bh, an, bn = kinetics.rates_soma(vs - batch.kin_shift)
    as_, bs, ac, bc = kinetics.rates_dendrite(vd - batch.kin_shift)
    aq, bq = kinetics.rates_q(ca)
    dgating = np.stack([ah - (ah + bh) * h,
                        an - (an + bn) * n,
                        as_ - (as_ + bs) * s,
                        ac - (ac + bc) * c,
                        aq - (aq + bq) * q], axis=-1)
    # calcium couples to I_Ca in uA/cm2; ours is S/cm2*mV = mA/cm2
    dca = -0.13 * (i_ca * 1000.0) - 0.075 * ca
    return CellState(dvs, dvd, dgating, dca)


def step_rk4(batch: CellBatch, state: CellState, dt,
             i_inject_dens=0.0, g_syn_dens=0.0, ge_syn_dens=0.0) -> CellState:
    """Classical RK4 step; gating clamped to [0,1] and calcium to >=0 after."""
    def f(st):
        return batch_derivatives(batch, st, i_inject_dens, g_syn_dens, ge_syn_dens)

    def axpy(st, k, a):
        return CellState(st.v_s + a * k.v_s, st.v_d + a * k.v_d,
                         st.gating + a * k.gating, st.ca + a * k.ca)

    k1 = f(state)
    k2 = f(axpy(state, k1, dt / 2.0))
    k3 = f(axpy(state, k2, dt / 2.0))
    k4 = f(axpy(state, k3, dt))
    out = CellState(
        state.v_s + dt / 6.0 * (k1.v_s + 2 * k2.v_s + 2 * k3.v_s + k4.v_s),
        state.v_d + dt / 6.0 * (k1.v_d + 2 * k2.v_d + 2 * k3.v_d + k4.v_d),
        np.clip(state.gating + dt / 6.0 * (k1.gating + 2 * k2.gating
                                           + 2 * k3.gating + k4.gating), 0.0, 1.0),
        np.maximum(state.ca + dt / 6.0 * (k1.ca + 2 * k2.ca + 2 * k3.ca + k4.ca), 0.0),
    )
    return out


def step_semi_implicit(batch: CellBatch, state: CellState, dt,
                       i_inject_dens=0.0, g_syn_dens=0.0, ge_syn_dens=0.0) -> CellState:
    """Exponential gate/calcium update + backward-Euler 2x2 voltage solve."""
    vs = np.asarray(state.v_s, dtype=float)
    vd = np.asarray(state.v_d, dtype=float)
    h, n, s, c, q = np.moveaxis(np.asarray(state.gating, dtype=float), -1, 0)
    ca = np.asarray(state.ca, dtype=float)

    am, bm, ah, bh, an, bn = kinetics.rates_soma(vs - batch.kin_shift)
    as_, bs, ac, bc = kinetics.rates_dendrite(vd - batch.kin_shift)
    aq, bq = kinetics.rates_q(ca)

    def relax(x, a, b):
        tau = 1.0 / (a + b)
        xinf = a * tau
        return xinf + (x - xinf) * np.exp(-dt / tau)

    h = relax(h, ah, bh)
    n = relax(n, an, bn)
    s = relax(s, as_, bs)
    c = relax(c, ac, bc)
    q = relax(q, aq, bq)

    g_ca = batch.g_ca * s * s
    i_ca = g_ca * (vd - batch.e_ca)
    ca_inf = np.maximum(-0.13 * (i_ca * 1000.0) / 0.075, 0.0)
    ca = ca_inf + (ca - ca_inf) * np.exp(-0.075 * dt)

    minf = kinetics.m_inf(vs - batch.kin_shift)
    g_na = batch.g_na * minf * minf * h
    g_dr = batch.g_dr * n
    g_ahp = batch.g_ahp * q
    g_kc = batch.g_c_kca * c * kinetics.chi(ca)

    p = batch.p_soma
    ks = RATE_SCALE / batch.c_m
    gcs = batch.g_couple / p
    gcd = batch.g_couple / (1.0 - p)
    gs_tot = batch.g_leak + g_na + g_dr + gcs
    gd_tot = (batch.g_leak + g_ca + g_ahp + g_kc + gcd
              + g_syn_dens / (1.0 - p))
    rs = ks * (batch.g_leak * batch.e_leak + g_na * batch.e_na + g_dr * batch.e_k
               + i_inject_dens / p)
    rd = ks * (batch.g_leak * batch.e_leak + g_ca * batch.e_ca
               + (g_ahp + g_kc) * batch.e_k + ge_syn_dens / (1.0 - p))

    # (I - dt*A) v+ = v + dt*r with A the conductance matrix
    m11 = 1.0 + dt * ks * gs_tot
    m12 = -dt * ks * gcs
    m21 = -dt * ks * gcd
    m22 = 1.0 + dt * ks * gd_tot
    b1 = vs + dt * rs
    b2 = vd + dt * rd
    det = m11 * m22 - m12 * m21
    vs_new = (m22 * b1 - m12 * b2) / det
    vd_new = (m11 * b2 - m21 * b1) / det

    gating = np.stack([h, n, s, c, q], axis=-1)
    return CellState(vs_new, vd_new, np.clip(gating, 0.0, 1.0), np.maximum(ca, 0.0))


_STEPPERS = {"semi_implicit": step_semi_implicit, "rk4": step_rk4}


def resting_gates(params: NeuronParams) -> np.ndarray:
    """Gate steady state at v = e_leak (a convenient starting guess)."""
    v = params.e_leak - params.kinetics_shift
    return np.array(kinetics.steady_gates(v, v, 0.0))


def initial_state(params: NeuronParams) -> CellState:
    """State at the leak reversal with steady gates (not the true fixed point)."""
    return CellState(float(params.e_leak), float(params.e_leak),
                     resting_gates(params), 0.0)


_REST_CACHE: dict[NeuronParams, CellState] = {}


def resting_state(params: NeuronParams) -> CellState:
    """True resting point, found by long backward-Euler relaxation (cached).

    Backward Euler shares its fixed points with the ODE, so coarse steps
    converge to the genuine equilibrium.
    """
    cached = _REST_CACHE.get(params)
    if cached is None:
        batch = CellBatch.from_params([params])
        st = initial_state(params)
        st = CellState(np.array([st.v_s]), np.array([st.v_d]),
                       st.gating[None, :], np.array([st.ca]))
        for _ in range(4000):
            st = step_semi_implicit(batch, st, 5.0)
        for _ in range(200):
            st = step_semi_implicit(batch, st, DEFAULT_DT)
        cached = CellState(float(st.v_s[0]), float(st.v_d[0]),
                           st.gating[0].copy(), float(st.ca[0]))
        _REST_CACHE[params] = cached
    return cached.copy()


def pr_derivatives(state: CellState, params: NeuronParams,
                   i_inject: float = 0.0, i_syn: float = 0.0) -> CellState:
    """Full state derivative for one cell.

    i_inject: somatic injected current in pA. i_syn: dendritic synaptic
    current in uS*mV (the product g_syn*(v_d - e_syn); negative values
    depolarize). Both are converted to densities over the membrane area.
    """
    state.validate()
    batch = CellBatch.from_params([params])
    vec = CellState(np.atleast_1d(np.asarray(state.v_s, dtype=float)),
                    np.atleast_1d(np.asarray(state.v_d, dtype=float)),
                    np.asarray(state.gating, dtype=float).reshape(1, 5),
                    np.atleast_1d(np.asarray(state.ca, dtype=float)))
    i_dens = i_inject * PA_TO_DENSITY
    i_syn_dens = i_syn * USMV_TO_DENSITY
    # express the fixed synaptic current through the (g, g*e) channel:
    # g=0, ge = -i_syn makes  g*v - ge  equal i_syn
    d = batch_derivatives(batch, vec, i_dens, 0.0, -i_syn_dens)
    return CellState(float(d.v_s[0]), float(d.v_d[0]), d.gating[0], float(d.ca[0]))


def integrate_step(state: CellState, params: NeuronParams, dt: float,
                   i_inject: float = 0.0, i_syn: float = 0.0,
                   scheme: str = DEFAULT_SCHEME) -> CellState:
    """Advance one cell by dt (ms). Currents as in pr_derivatives."""
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if scheme not in _STEPPERS:
        raise ValueError(f"unknown scheme {scheme!r}, expected one of {SCHEMES}")
    state.validate()
    batch = CellBatch.from_params([params])
    vec = CellState(np.atleast_1d(np.asarray(state.v_s, dtype=float)),
                    np.atleast_1d(np.asarray(state.v_d, dtype=float)),
                    np.asarray(state.gating, dtype=float).reshape(1, 5),
                    np.atleast_1d(np.asarray(state.ca, dtype=float)))
    i_dens = i_inject * PA_TO_DENSITY
    out = _STEPPERS[scheme](batch, vec, dt, i_dens, 0.0, -i_syn * USMV_TO_DENSITY)
    if not (np.isfinite(out.v_s).all() and np.isfinite(out.v_d).all()):
        raise DivergenceError(0, dt)
    return CellState(float(out.v_s[0]), float(out.v_d[0]), out.gating[0], float(out.ca[0]))
