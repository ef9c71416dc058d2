"""Vectorised rejection ABC for voxelwise PET kinetic modelling."""

import json as _json

import numpy as _np

from . import _vpetabc
from ._vpetabc import BudgetError, ConfigError, DataError, Error, gamma_variate, version

__all__ = [
    "BudgetError",
    "ConfigError",
    "DataError",
    "Engine",
    "Error",
    "gamma_variate",
    "input_curve",
    "local_morans_i",
    "patlak_ki",
    "schedule",
    "simulate_2tcm",
    "simulate_lpntpet",
    "version",
]


def _js(obj):
    return _json.dumps(obj)


def schedule(spec):
    """Frame start, duration and mid times (minutes) of a schedule preset or description."""
    return _vpetabc.schedule(_js(spec))


def input_curve(schedule, input):
    """Fine-grid times and values of an input description."""
    return _vpetabc.input_curve(_js(schedule), _js(input))


def simulate_2tcm(K1, k2, k3, k4, Vb, *, schedule, input):
    return _vpetabc.simulate_2tcm(K1, k2, k3, k4, Vb, _js(schedule), _js(input))


def simulate_lpntpet(R1, k2, k2a, gamma, tD, tP, alpha, *, schedule, input):
    return _vpetabc.simulate_lpntpet(R1, k2, k2a, gamma, tD, tP, alpha, _js(schedule), _js(input))


def patlak_ki(tac, input, schedule, t_star=20.0):
    """(slope, intercept, r2) with the input sampled at frame mid-times."""
    return _vpetabc.patlak_ki(_np.asarray(tac, float), _np.asarray(input, float), _js(schedule), t_star)


def local_morans_i(map, mask=None, fwhm_mm=40.0, spacing_mm=(1.0, 1.0), detrend=True):
    m = None if mask is None else _np.asarray(mask, _np.uint8)
    return _vpetabc.local_morans_i(_np.asarray(map, float), m, fwhm_mm, spacing_mm[0], spacing_mm[1], detrend)


class Engine:
    """Prior, shared input and noise model; simulates pools and runs rejection ABC."""

    def __init__(self, priors, schedule, input, noise):
        self._impl = _vpetabc.Engine(_js(priors), _js(schedule), _js(input), _js(noise))

    @property
    def columns(self):
        return self._impl.columns

    @property
    def models(self):
        return self._impl.models

    def simulate(self, N, seed):
        """(theta, curves): N x (P+1) parameters and N x L noisy float32 TACs."""
        return self._impl.simulate(N, seed)

    def infer(self, tacs, N, n=18, seed=0, workers=1, distance="l1", level=0.95):
        return self._impl.infer(_np.asarray(tacs, float), N, n, seed, workers, distance, level)
