"""Gate rate functions for the two-compartment model.

Standard formulation on absolute membrane potential: sodium activation m is
instantaneous (m = m_inf(Vs)); the dynamic gates are h (Na inactivation),
n (delayed rectifier), s (Ca activation), c (Ca-dependent K), q (AHP, driven
by calcium rather than voltage). Calcium follows
    dCa/dt = -0.13 * I_Ca[uA/cm2] - 0.075 * Ca
and the Ca-dependent K conductance is scaled by chi(Ca) = min(Ca/250, 1).

All rate functions take voltage already shifted into the reference frame
(see NeuronParams.kinetics_shift) and return rates in 1/ms.
"""

from __future__ import annotations

import numpy as np

GATE_NAMES = ("h", "n", "s", "c", "q")


def _exprel(x):
    # x / (exp(x) - 1), stable near 0
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-9
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 - x / 2.0, safe / np.expm1(safe))


def _rate(coef, num, scale):
    """coef * num / (exp(num/scale) - 1) evaluated stably."""
    num = np.asarray(num, dtype=float)
    return coef * scale * _exprel(num / scale)


def rates_soma(v):
    """(alpha_m, beta_m, alpha_h, beta_h, alpha_n, beta_n) at soma voltage v."""
    v = np.asarray(v, dtype=float)
    am = _rate(0.32, -46.9 - v, 4.0)
    bm = _rate(0.28, v + 19.9, 5.0)
    ah = 0.128 * np.exp((-43.0 - v) / 18.0)
    bh = 4.0 / (1.0 + np.exp((-20.0 - v) / 5.0))
    an = _rate(0.016, -24.9 - v, 5.0)
    bn = 0.25 * np.exp(-1.0 - 0.025 * v)
    return am, bm, ah, bh, an, bn


def rates_dendrite(v):
    """(alpha_s, beta_s, alpha_c, beta_c) at dendrite voltage v."""
    v = np.asarray(v, dtype=float)
    as_ = 1.6 / (1.0 + np.exp(-0.072 * (v - 5.0)))
    bs = _rate(0.02, v + 8.9, 5.0)
    low = v <= -10.0
    ac_low = np.exp((v + 50.0) / 11.0 - (v + 53.5) / 27.0) / 18.975
    ac_high = 2.0 * np.exp((-53.5 - v) / 27.0)
    ac = np.where(low, ac_low, ac_high)
    bc = np.where(low, ac_high - ac_low, 0.0)
    return as_, bs, ac, bc


def rates_q(ca):
    """AHP gate rates as a function of calcium."""
    ca = np.asarray(ca, dtype=float)
    aq = np.minimum(2e-5 * ca, 0.01)
    bq = np.full_like(aq, 0.001)
    return aq, bq


def m_inf(v):
    am, bm, *_ = rates_soma(v)
    return am / (am + bm)


def chi(ca):
    """Saturating calcium scaling of the Ca-dependent K conductance."""
    return np.minimum(np.asarray(ca, dtype=float) / 250.0, 1.0)


def steady_gates(v_s, v_d, ca=0.0):
    """Gate steady states (h, n, s, c, q) at fixed shifted voltages."""
    _, _, ah, bh, an, bn = rates_soma(v_s)
    as_, bs, ac, bc = rates_dendrite(v_d)
    aq, bq = rates_q(ca)
    return (ah / (ah + bh), an / (an + bn), as_ / (as_ + bs),
            ac / (ac + bc), aq / (aq + bq))
