"""Signal-level ISAC quantities for the RSU downlink and radar echo.

Everything here is a pure function of the scenario, the true vehicle states
and the beam action. Vectorised helpers (``*_all``) evaluate every vehicle at
once; the per-vehicle functions index into them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import SPEED_OF_LIGHT, ScenarioConfig


@dataclass
class VehicleState:
    """Ground-truth kinematics of one vehicle in one slot.

    ``angle`` and ``distance`` carry the per-slot evolution noise, while
    ``x``/``y`` is the noiseless lane position they are drawn around.
    """

    angle: float
    distance: float
    speed: float
    x: float
    y: float

    @classmethod
    def from_position(cls, x: float, y: float, speed: float) -> "VehicleState":
        return cls(angle=float(np.arctan2(y, x)), distance=float(np.hypot(x, y)),
                   speed=float(speed), x=float(x), y=float(y))


@dataclass
class BeamAction:
    """K steering angles (rad) and K transmit powers (W)."""

    beam_angles: np.ndarray
    power_alloc: np.ndarray

    def __post_init__(self) -> None:
        self.beam_angles = np.asarray(self.beam_angles, dtype=float).reshape(-1)
        self.power_alloc = np.asarray(self.power_alloc, dtype=float).reshape(-1)
        if self.beam_angles.shape != self.power_alloc.shape:
            raise ValueError("beam_angles and power_alloc must have the same length")

    def beamformers(self, n_tx: int) -> np.ndarray:
        """Unit-norm beamforming matrix F with shape (n_tx, K)."""
        return steering_matrix(self.beam_angles, n_tx)

    def is_feasible(self, max_power: float, tol: float = 1e-9) -> bool:
        p = self.power_alloc
        return bool(np.all(p > 0) and p.sum() <= max_power * (1 + tol) + tol)


@dataclass
class Diagnostics:
    """Per-slot link and sensing figures produced while applying an action."""

    rates: np.ndarray
    sum_rate: float
    fairness: float
    crlb_theta: np.ndarray
    crlb_d: np.ndarray
    sinr_sense: np.ndarray
    sinr_comm: np.ndarray
    power_alloc: np.ndarray
    constraints_satisfied: bool = False
    extras: dict = field(default_factory=dict)


def steering_vector(theta: float, n_elems: int) -> np.ndarray:
    """ULA response ``sqrt(1/n) * exp(-j*pi*m*cos(theta))`` for m = 0..n-1."""
    if n_elems < 1:
        raise ValueError(f"n_elems must be >= 1, got {n_elems}")
    if not (0.0 < theta < np.pi):
        raise ValueError(f"theta must lie in (0, pi), got {theta!r}")
    m = np.arange(n_elems)
    return np.exp(-1j * np.pi * m * np.cos(theta)) / np.sqrt(n_elems)


def steering_matrix(thetas: Sequence[float], n_elems: int) -> np.ndarray:
    """Columns are steering vectors; shape (n_elems, len(thetas))."""
    thetas = np.asarray(thetas, dtype=float)
    if n_elems < 1:
        raise ValueError(f"n_elems must be >= 1, got {n_elems}")
    if np.any(thetas <= 0) or np.any(thetas >= np.pi):
        raise ValueError("all angles must lie in (0, pi)")
    m = np.arange(n_elems)[:, None]
    return np.exp(-1j * np.pi * m * np.cos(thetas)[None, :]) / np.sqrt(n_elems)


def steering_derivative(theta: float, n_elems: int) -> np.ndarray:
    """d a(theta) / d theta."""
    m = np.arange(n_elems)
    return (1j * np.pi * m * np.sin(theta)) * steering_vector(theta, n_elems)


def _arrays(states: Sequence[VehicleState]) -> tuple[np.ndarray, np.ndarray]:
    angles = np.array([s.angle for s in states], dtype=float)
    dists = np.array([s.distance for s in states], dtype=float)
    return angles, dists


def _geometry(cfg: ScenarioConfig, angles: np.ndarray, action: BeamAction):
    """Steering matrix of the true angles, beamformers, and G[k, i] = |a^H(theta_k) f_i|^2."""
    A = steering_matrix(angles, cfg.n_tx)
    F = action.beamformers(cfg.n_tx)
    return A, F, np.abs(A.conj().T @ F) ** 2


def beam_gains(cfg: ScenarioConfig, angles: np.ndarray, action: BeamAction) -> np.ndarray:
    return _geometry(cfg, angles, action)[2]


def large_scale_fading(cfg: ScenarioConfig, dists: np.ndarray) -> np.ndarray:
    """alpha_k^2 = alpha_0 * (d_k / d_0)^(-rho)."""
    return cfg.ref_pathloss * (np.asarray(dists) / cfg.ref_distance) ** (-cfg.pathloss_exponent)


def reflection_coeff(cfg: ScenarioConfig, dists: np.ndarray) -> np.ndarray:
    return cfg.fading_factor / (2.0 * np.asarray(dists))


def _split(terms: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Own-signal (diagonal) and summed cross terms of a (K, K) term matrix."""
    signal = np.diag(terms).copy()
    return signal, terms.sum(axis=1) - signal


def _comm_split(cfg, dists, p, gains):
    alpha2 = large_scale_fading(cfg, dists)
    # row k: vehicle k's channel, column i: beam i
    return _split(cfg.n_tx * alpha2[:, None] * p[None, :] * gains)


def _sense_split(cfg, dists, p, gains):
    beta2 = np.abs(reflection_coeff(cfg, dists)) ** 2
    # cross terms use the interfering vehicle's own reflection beta_i
    return _split((cfg.n_tx * cfg.n_rx) * (p * beta2)[None, :] * gains)


def comm_terms(cfg: ScenarioConfig, angles: np.ndarray, dists: np.ndarray,
               action: BeamAction) -> tuple[np.ndarray, np.ndarray]:
    return _comm_split(cfg, dists, action.power_alloc, beam_gains(cfg, angles, action))


def sensing_terms(cfg: ScenarioConfig, angles: np.ndarray, dists: np.ndarray,
                  action: BeamAction) -> tuple[np.ndarray, np.ndarray]:
    return _sense_split(cfg, dists, action.power_alloc, beam_gains(cfg, angles, action))


def _noise_ratio(cfg, signal, interference):
    bracket = interference + cfg.noise_power_sense
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(signal > 0, bracket / np.where(signal > 0, signal, 1.0), np.inf)
    return np.minimum(ratio, cfg.variance_cap_factor)


def _crlb_theta(cfg, angles, dists, p, A, F):
    m = np.arange(cfg.n_tx)[:, None]
    dA = (1j * np.pi * m * np.sin(angles)[None, :]) * A
    # d(a^H(theta_k) f_k) / d theta_k
    d_resp = np.einsum("nk,nk->k", dA.conj(), F)
    scale2 = (cfg.n_tx * cfg.n_rx) * p * np.abs(reflection_coeff(cfg, dists)) ** 2 \
        * cfg.matched_filter_gain ** 2
    fisher = scale2 * np.abs(d_resp) ** 2 / cfg.sigma_y2
    with np.errstate(divide="ignore"):
        return np.where(fisher > 0, 1.0 / np.where(fisher > 0, fisher, 1.0), np.inf)


def comm_sinr_all(cfg: ScenarioConfig, states: Sequence[VehicleState], action: BeamAction) -> np.ndarray:
    signal, interference = comm_terms(cfg, *_arrays(states), action)
    return signal / (interference + cfg.noise_power_comm)


def sensing_sinr_all(cfg: ScenarioConfig, states: Sequence[VehicleState], action: BeamAction) -> np.ndarray:
    signal, interference = sensing_terms(cfg, *_arrays(states), action)
    return signal / (interference + cfg.noise_power_sense)


def comm_sinr(cfg: ScenarioConfig, states: Sequence[VehicleState], action: BeamAction, k: int) -> float:
    return float(comm_sinr_all(cfg, states, action)[k])


def sensing_sinr(cfg: ScenarioConfig, states: Sequence[VehicleState], action: BeamAction, k: int) -> float:
    return float(sensing_sinr_all(cfg, states, action)[k])


def measurement_noise_vars_all(cfg: ScenarioConfig, states: Sequence[VehicleState],
                               action: BeamAction) -> tuple[np.ndarray, np.ndarray]:
    """Delay (s^2) and Doppler (Hz^2) measurement-noise variances for every vehicle.

    A vanishing echo (beam orthogonal to the target, or zero power) yields the
    configured cap ``variance_cap_factor * alpha^2`` instead of a division by zero.
    """
    ratio = _noise_ratio(cfg, *sensing_terms(cfg, *_arrays(states), action))
    return cfg.alpha_tau ** 2 * ratio, cfg.alpha_mu ** 2 * ratio


def measurement_noise_vars(cfg: ScenarioConfig, states: Sequence[VehicleState],
                           action: BeamAction, k: int) -> tuple[float, float]:
    var_tau, var_mu = measurement_noise_vars_all(cfg, states, action)
    return float(var_tau[k]), float(var_mu[k])


def matched_output_derivative(cfg: ScenarioConfig, state: VehicleState, beam: np.ndarray,
                              power: float) -> complex:
    """d/dtheta of the noiseless matched-filter output E*sqrt(p)*beta*xi*a^H(theta)f."""
    da = steering_derivative(state.angle, cfg.n_tx)
    scale = np.sqrt(cfg.n_tx * cfg.n_rx) * np.sqrt(power) * cfg.matched_filter_gain
    beta = cfg.fading_factor / (2.0 * state.distance)
    return complex(scale * beta * (da.conj() @ beam))


def crlb_theta_all(cfg: ScenarioConfig, states: Sequence[VehicleState], action: BeamAction) -> np.ndarray:
    angles, dists = _arrays(states)
    A, F, _ = _geometry(cfg, angles, action)
    return _crlb_theta(cfg, angles, dists, action.power_alloc, A, F)


def crlb_theta(cfg: ScenarioConfig, states: Sequence[VehicleState], action: BeamAction, k: int) -> float:
    return float(crlb_theta_all(cfg, states, action)[k])


def crlb_distance_all(cfg: ScenarioConfig, states: Sequence[VehicleState], action: BeamAction) -> np.ndarray:
    var_tau, _ = measurement_noise_vars_all(cfg, states, action)
    return var_tau * SPEED_OF_LIGHT ** 2 / 4.0


def crlb_distance(cfg: ScenarioConfig, states: Sequence[VehicleState], action: BeamAction, k: int) -> float:
    return float(crlb_distance_all(cfg, states, action)[k])


def sum_rate(cfg: ScenarioConfig, states: Sequence[VehicleState],
             action: BeamAction) -> tuple[float, np.ndarray]:
    rates = np.log2(1.0 + comm_sinr_all(cfg, states, action))
    return float(rates.sum()), rates


def jain_fairness(rates: Sequence[float], standard: bool = False) -> float:
    """Fairness index ``2 (sum R)^2 / (K sum R^2)``.

    The leading factor 2 is dropped when ``standard`` is set. All-zero rates
    give 0.
    """
    r = np.asarray(rates, dtype=float)
    if r.size == 0:
        raise ValueError("need at least one rate")
    denom = r.size * np.sum(r ** 2)
    if denom == 0:
        return 0.0
    scale = 1.0 if standard else 2.0
    return float(scale * r.sum() ** 2 / denom)


def constraints_ok(cfg: ScenarioConfig, crlb_th: np.ndarray, crlb_d: np.ndarray,
                   powers: np.ndarray, tol: float = 1e-9) -> bool:
    return bool(
        np.mean(crlb_th) <= cfg.eps_theta
        and np.mean(crlb_d) <= cfg.eps_d
        and np.sum(powers) <= cfg.max_power * (1 + tol)
        and np.all(powers > 0)
    )


def reward(cfg: ScenarioConfig, diag: Diagnostics) -> float:
    """Indicator-gated ``R*J - w_theta*mean(CRLB_theta) - w_d*mean(CRLB_d)``."""
    if not constraints_ok(cfg, diag.crlb_theta, diag.crlb_d, diag.power_alloc):
        return 0.0
    return float(diag.sum_rate * diag.fairness
                 - cfg.weight_crlb_theta * np.mean(diag.crlb_theta)
                 - cfg.weight_crlb_d * np.mean(diag.crlb_d))


def sensing_pass(cfg: ScenarioConfig, states: Sequence[VehicleState],
                 action: BeamAction) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Delay variance, Doppler variance and angle CRLB from one echo, all vehicles."""
    angles, dists = _arrays(states)
    A, F, gains = _geometry(cfg, angles, action)
    ratio = _noise_ratio(cfg, *_sense_split(cfg, dists, action.power_alloc, gains))
    crlb_th = _crlb_theta(cfg, angles, dists, action.power_alloc, A, F)
    return cfg.alpha_tau ** 2 * ratio, cfg.alpha_mu ** 2 * ratio, crlb_th


def diagnose(cfg: ScenarioConfig, states: Sequence[VehicleState], action: BeamAction) -> Diagnostics:
    """Evaluate every link and sensing quantity for one slot."""
    angles, dists = _arrays(states)
    p = action.power_alloc
    A, F, gains = _geometry(cfg, angles, action)
    s_sig, s_int = _sense_split(cfg, dists, p, gains)
    c_sig, c_int = _comm_split(cfg, dists, p, gains)
    sinr_s = s_sig / (s_int + cfg.noise_power_sense)
    sinr_c = c_sig / (c_int + cfg.noise_power_comm)
    rates = np.log2(1.0 + sinr_c)
    crlb_th = _crlb_theta(cfg, angles, dists, p, A, F)
    crlb_d = cfg.alpha_tau ** 2 * _noise_ratio(cfg, s_sig, s_int) * SPEED_OF_LIGHT ** 2 / 4.0
    diag = Diagnostics(
        rates=rates,
        sum_rate=float(rates.sum()),
        fairness=jain_fairness(rates, standard=cfg.standard_jain),
        crlb_theta=crlb_th,
        crlb_d=crlb_d,
        sinr_sense=sinr_s,
        sinr_comm=sinr_c,
        power_alloc=p.copy(),
    )
    diag.constraints_satisfied = constraints_ok(cfg, crlb_th, crlb_d, p)
    return diag
