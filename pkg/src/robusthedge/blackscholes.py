"""Zero-rate Black-Scholes closed forms expressed through total variance."""

import numpy as np
from scipy.special import ndtr


def _d1(s, strike, total_var):
    sd = np.sqrt(total_var)
    return (np.log(s / strike) + 0.5 * total_var) / sd, sd


def put_value(s, strike, total_var):
    s = np.asarray(s, dtype=float)
    d1, sd = _d1(s, strike, total_var)
    return strike * ndtr(-(d1 - sd)) - s * ndtr(-d1)


def call_value(s, strike, total_var):
    s = np.asarray(s, dtype=float)
    d1, sd = _d1(s, strike, total_var)
    return s * ndtr(d1) - strike * ndtr(d1 - sd)


def put_delta(s, strike, total_var):
    d1, _ = _d1(np.asarray(s, dtype=float), strike, total_var)
    return ndtr(d1) - 1.0


def call_delta(s, strike, total_var):
    d1, _ = _d1(np.asarray(s, dtype=float), strike, total_var)
    return ndtr(d1)


def cash_gamma(s, strike, total_var):
    """s^2 V_ss, identical for calls and puts."""
    s = np.asarray(s, dtype=float)
    d1, sd = _d1(s, strike, total_var)
    return s * np.exp(-0.5 * d1 * d1) / (np.sqrt(2.0 * np.pi) * sd)


def implied_total_var(vol, tau, smoothing_vol=0.0, smoothing_maturity=0.0):
    return vol * vol * tau + smoothing_vol * smoothing_vol * smoothing_maturity
