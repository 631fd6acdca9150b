"""Slot-level V2X environment: vehicle motion, radar measurements and the MDP loop."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import channel
from .channel import BeamAction, Diagnostics, VehicleState
from .config import SPEED_OF_LIGHT, ScenarioConfig

_ANGLE_EPS = 1e-6

TRAJECTORY_COLUMNS = (
    "slot", "k", "theta", "d", "v", "theta_hat", "d_hat", "v_hat", "sinr_comm_db",
    "sinr_sens_db", "crlb_theta", "crlb_d", "rate_k", "sum_rate", "fairness", "reward",
)


class InvalidActionError(ValueError):
    pass


@dataclass
class Observation:
    """RSU-side estimates for every vehicle: angle, distance, speed, comm SINR."""

    est_angle: np.ndarray
    est_distance: np.ndarray
    est_speed: np.ndarray
    est_sinr: np.ndarray

    def vector(self) -> np.ndarray:
        """Raw estimates, interleaved per vehicle: length 4K."""
        return np.stack([self.est_angle, self.est_distance, self.est_speed, self.est_sinr],
                        axis=1).reshape(-1)

    def normalized(self, cfg: ScenarioConfig) -> np.ndarray:
        """Affine map of each estimate onto [-1, 1] (SINR via dB and clipping)."""
        lo, hi = cfg.sinr_db_clip
        with np.errstate(divide="ignore"):
            sinr_db = 10.0 * np.log10(np.maximum(self.est_sinr, 1e-300))
        cols = [
            2.0 * self.est_angle / np.pi - 1.0,
            2.0 * self.est_distance / cfg.max_distance - 1.0,
            2.0 * self.est_speed / cfg.max_speed - 1.0,
            2.0 * (np.clip(sinr_db, lo, hi) - lo) / (hi - lo) - 1.0,
        ]
        return np.clip(np.stack(cols, axis=1).reshape(-1), -1.0, 1.0)


@dataclass
class StepOutcome:
    observation: Observation
    reward: float
    diagnostics: Diagnostics
    done: bool
    rows: list = field(default_factory=list)


def kinematics_step(cfg: ScenarioConfig, states: Sequence[VehicleState],
                    rng: np.random.Generator) -> list[VehicleState]:
    """Constant-velocity motion along the lane with Gaussian evolution noise.

    The lane position advances by ``v * dt``; the speed then takes a random-walk
    step (clamped at 0), and the angle/distance seen by the RSU are the
    geometric values perturbed by fresh noise.
    """
    k = len(states)
    dv = rng.normal(0.0, cfg.sigma_v, size=k)
    dth = rng.normal(0.0, cfg.sigma_theta, size=k)
    dd = rng.normal(0.0, cfg.sigma_d, size=k)
    out = []
    for i, s in enumerate(states):
        x = s.x + s.speed * cfg.slot_duration
        y = s.y
        speed = max(s.speed + dv[i], 0.0)
        angle = float(np.clip(np.arctan2(y, x) + dth[i], _ANGLE_EPS, np.pi - _ANGLE_EPS))
        dist = max(float(np.hypot(x, y)) + dd[i], 1e-3)
        out.append(VehicleState(angle=angle, distance=dist, speed=speed, x=x, y=y))
    return out


def simulate_measurement(cfg: ScenarioConfig, state: VehicleState, noise_vars: tuple[float, float],
                         rng: np.random.Generator) -> tuple[float, float]:
    """Noisy round-trip delay (s) and Doppler shift (Hz) of one echo."""
    var_tau, var_mu = noise_vars
    tau = 2.0 * state.distance / SPEED_OF_LIGHT
    mu = 2.0 * state.speed * np.cos(state.angle) * cfg.carrier_freq / SPEED_OF_LIGHT
    z_tau, z_mu = rng.normal(0.0, 1.0, size=2)
    return tau + np.sqrt(var_tau) * z_tau, mu + np.sqrt(var_mu) * z_mu


def estimate_state(cfg: ScenarioConfig, tau: float, mu: float, est_angle: float,
                   prev_speed: float | None = None) -> tuple[float, float]:
    """Invert the delay/Doppler model for distance and speed.

    Near broadside (``|cos| < cos_guard``) the Doppler carries no speed
    information, so the previous estimate is held.
    """
    dist = SPEED_OF_LIGHT * tau / 2.0
    cos = np.cos(est_angle)
    if abs(cos) < cfg.cos_guard:
        if prev_speed is None:
            prev_speed = 0.5 * (cfg.speed_range[0] + cfg.speed_range[1])
        return float(dist), float(prev_speed)
    return float(dist), float(SPEED_OF_LIGHT * mu / (2.0 * cos * cfg.carrier_freq))


def broadside_action(cfg: ScenarioConfig) -> BeamAction:
    k = cfg.num_vehicles
    return BeamAction(np.full(k, np.pi / 2), np.full(k, cfg.max_power / k))


def db(x: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(x)


class V2XEnv:
    """Seedable single-RSU environment.

    ``reset`` places the vehicles, senses them once with a broadside beam and
    returns the first observation; ``step`` applies a beam action, scores it and
    advances one slot.
    """

    def __init__(self, cfg: ScenarioConfig, record: bool = False):
        self.cfg = cfg
        self.record = record
        self.rng = np.random.default_rng(cfg.rng_seed)
        self.states: list[VehicleState] = []
        self.observation: Observation | None = None
        self.slot = 0

    def reset(self, seed: int | None = None) -> Observation:
        cfg = self.cfg
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        speeds = self.rng.uniform(cfg.speed_range[0], cfg.speed_range[1], size=cfg.num_vehicles)
        self.states = [VehicleState.from_position(x, y, v)
                       for (x, y), v in zip(cfg.initial_positions, speeds)]
        self.slot = 0
        action = broadside_action(cfg)
        sinr_c = channel.comm_sinr_all(cfg, self.states, action)
        self.observation = self._sense(action, sinr_c, prev=None)
        return self.observation

    def _sense(self, action: BeamAction, sinr_comm: np.ndarray,
               prev: Observation | None) -> Observation:
        cfg = self.cfg
        var_tau, var_mu, crlb_th = channel.sensing_pass(cfg, self.states, action)
        ang_std = np.sqrt(np.minimum(crlb_th, cfg.angle_var_cap))
        angles = np.array([s.angle for s in self.states])
        dists = np.array([s.distance for s in self.states])
        speeds = np.array([s.speed for s in self.states])
        k = cfg.num_vehicles
        z = self.rng.normal(0.0, 1.0, size=(3, k))
        est_angle = np.clip(angles + ang_std * z[0], _ANGLE_EPS, np.pi - _ANGLE_EPS)
        tau = 2.0 * dists / SPEED_OF_LIGHT + np.sqrt(var_tau) * z[1]
        mu = 2.0 * speeds * np.cos(angles) * cfg.carrier_freq / SPEED_OF_LIGHT + np.sqrt(var_mu) * z[2]
        est_dist = SPEED_OF_LIGHT * tau / 2.0
        cos = np.cos(est_angle)
        held = np.abs(cos) < cfg.cos_guard
        if prev is None:
            fallback = np.full(k, 0.5 * (cfg.speed_range[0] + cfg.speed_range[1]))
        else:
            fallback = prev.est_speed
        with np.errstate(divide="ignore", invalid="ignore"):
            est_speed = np.where(held, fallback,
                                 SPEED_OF_LIGHT * mu / (2.0 * np.where(held, 1.0, cos) * cfg.carrier_freq))
        return Observation(est_angle, est_dist, est_speed, np.asarray(sinr_comm, dtype=float).copy())

    def validate_action(self, action: BeamAction) -> None:
        cfg = self.cfg
        if action.beam_angles.shape != (cfg.num_vehicles,):
            raise InvalidActionError(f"expected {cfg.num_vehicles} beams, got {action.beam_angles.shape}")
        if np.any(action.beam_angles <= 0) or np.any(action.beam_angles >= np.pi):
            raise InvalidActionError("beam angles must lie in (0, pi)")
        p = action.power_alloc
        if np.any(~np.isfinite(p)) or np.any(p <= 0):
            raise InvalidActionError("powers must be finite and > 0")
        if p.sum() > cfg.max_power + 1e-9 * max(cfg.max_power, 1.0):
            raise InvalidActionError(f"total power {p.sum()!r} exceeds P_max={cfg.max_power!r}")

    def step(self, action: BeamAction) -> StepOutcome:
        if self.observation is None:
            raise RuntimeError("call reset() before step()")
        if self.slot >= self.cfg.horizon:
            raise RuntimeError("episode finished; call reset()")
        self.validate_action(action)
        cfg = self.cfg
        diag = channel.diagnose(cfg, self.states, action)
        r = channel.reward(cfg, diag)
        rows = self._rows(diag, r) if self.record else []
        self.states = kinematics_step(cfg, self.states, self.rng)
        self.observation = self._sense(action, diag.sinr_comm, prev=self.observation)
        self.slot += 1
        return StepOutcome(self.observation, r, diag, self.slot >= cfg.horizon, rows)

    def _rows(self, diag: Diagnostics, r: float) -> list[tuple]:
        obs = self.observation
        sc, ss = db(diag.sinr_comm), db(diag.sinr_sense)
        return [
            (self.slot, i, s.angle, s.distance, s.speed, obs.est_angle[i], obs.est_distance[i],
             obs.est_speed[i], sc[i], ss[i], diag.crlb_theta[i], diag.crlb_d[i], diag.rates[i],
             diag.sum_rate, diag.fairness, r)
            for i, s in enumerate(self.states)
        ]
