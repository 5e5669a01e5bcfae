"""Deterministic classic-control environments: cartpole, acrobot, mountain car.

Pure functions of explicit state: `reset` draws an initial state, `step`
maps (state, action) to (next_state, reward, done). The episode step cap
(EnvSpec.max_steps) is enforced by the caller, keeping `step` stateless.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ctrlq.errors import ConfigurationError, TrainingError

ENV_IDS = ("cartpole", "acrobot", "mountaincar")


@dataclass(frozen=True)
class EnvSpec:
    """Static description of one environment."""

    env_id: str
    n_s: int
    n_a: int
    max_steps: int
    pass_score: float | None
    step_reward_scheme: str


@dataclass
class Transition:
    """One environment interaction (s, a, r, s', done)."""

    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    done: bool


_SPECS = {
    "cartpole": EnvSpec("cartpole", 4, 2, 200, 195.0, "plus_one_per_step"),
    "acrobot": EnvSpec("acrobot", 6, 3, 500, None, "minus_one_per_step"),
    "mountaincar": EnvSpec("mountaincar", 2, 3, 200, None, "minus_one_per_step"),
}

# Cartpole constants (canonical 200-step variant).
_CP_GRAVITY = 9.8
_CP_CART_MASS = 1.0
_CP_POLE_MASS = 0.1
_CP_TOTAL_MASS = _CP_CART_MASS + _CP_POLE_MASS
_CP_HALF_LENGTH = 0.5
_CP_POLEMASS_LENGTH = _CP_POLE_MASS * _CP_HALF_LENGTH
_CP_FORCE = 10.0
_CP_DT = 0.02
_CP_THETA_LIMIT = 12.0 * math.pi / 180.0
_CP_X_LIMIT = 2.4

# Mountain car constants.
_MC_FORCE = 0.001
_MC_GRAVITY = 0.0025
_MC_MIN_POS = -1.2
_MC_MAX_POS = 0.6
_MC_MAX_VEL = 0.07
_MC_GOAL_POS = 0.5

# Acrobot constants (two unit links, actuated middle joint).
_AB_M = 1.0
_AB_L1 = 1.0
_AB_LC = 0.5
_AB_I = 1.0
_AB_G = 9.8
_AB_DT = 0.2
_AB_VEL1_LIMIT = 4.0 * math.pi
_AB_VEL2_LIMIT = 9.0 * math.pi


def spec(env_id: str) -> EnvSpec:
    """Return the EnvSpec for a known environment id."""
    try:
        return _SPECS[env_id]
    except KeyError:
        raise ConfigurationError(f"unknown environment id: {env_id!r}") from None


def _as_rng(rng: int | np.random.Generator) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def reset(env_id: str, rng: int | np.random.Generator) -> np.ndarray:
    """Draw an initial state from the environment's standard distribution."""
    gen = _as_rng(rng)
    if env_id == "cartpole":
        return gen.uniform(-0.05, 0.05, size=4)
    if env_id == "mountaincar":
        return np.array([gen.uniform(-0.6, -0.4), 0.0])
    if env_id == "acrobot":
        th1, th2, dth1, dth2 = gen.uniform(-0.1, 0.1, size=4)
        return _acrobot_obs(th1, th2, dth1, dth2)
    raise ConfigurationError(f"unknown environment id: {env_id!r}")


def step(env_id: str, state: np.ndarray, action: int) -> tuple[np.ndarray, float, bool]:
    """Advance the physics one step; returns (next_state, reward, done).

    `done` reflects the physics thresholds only; the caller additionally
    terminates at EnvSpec.max_steps.
    """
    try:
        fn = _STEPPERS[env_id]
    except KeyError:
        raise ConfigurationError(f"unknown environment id: {env_id!r}") from None
    return fn(state, action)


def _check_action(action: int, n_a: int) -> None:
    if not 0 <= action < n_a:
        raise ValueError(f"action {action} out of range [0, {n_a})")


def _cartpole_step(state: np.ndarray, action: int) -> tuple[np.ndarray, float, bool]:
    _check_action(action, 2)
    x, x_dot, theta, theta_dot = state
    if not (math.isfinite(x) and math.isfinite(x_dot)
            and math.isfinite(theta) and math.isfinite(theta_dot)):
        raise TrainingError("non-finite cartpole state")
    force = _CP_FORCE if action == 1 else -_CP_FORCE
    sin_t = math.sin(theta)
    cos_t = math.cos(theta)
    temp = (force + _CP_POLEMASS_LENGTH * theta_dot * theta_dot * sin_t) / _CP_TOTAL_MASS
    theta_acc = (_CP_GRAVITY * sin_t - cos_t * temp) / (
        _CP_HALF_LENGTH * (4.0 / 3.0 - _CP_POLE_MASS * cos_t * cos_t / _CP_TOTAL_MASS)
    )
    x_acc = temp - _CP_POLEMASS_LENGTH * theta_acc * cos_t / _CP_TOTAL_MASS
    x = x + _CP_DT * x_dot
    x_dot = x_dot + _CP_DT * x_acc
    theta = theta + _CP_DT * theta_dot
    theta_dot = theta_dot + _CP_DT * theta_acc
    done = abs(x) > _CP_X_LIMIT or abs(theta) > _CP_THETA_LIMIT
    return np.array([x, x_dot, theta, theta_dot]), 1.0, done


def _mountaincar_step(state: np.ndarray, action: int) -> tuple[np.ndarray, float, bool]:
    _check_action(action, 3)
    pos, vel = state
    if not (math.isfinite(pos) and math.isfinite(vel)):
        raise TrainingError("non-finite mountain-car state")
    vel += (action - 1) * _MC_FORCE - _MC_GRAVITY * math.cos(3.0 * pos)
    vel = min(max(vel, -_MC_MAX_VEL), _MC_MAX_VEL)
    pos += vel
    pos = min(max(pos, _MC_MIN_POS), _MC_MAX_POS)
    if pos <= _MC_MIN_POS and vel < 0.0:
        vel = 0.0
    done = pos >= _MC_GOAL_POS
    return np.array([pos, vel]), -1.0, done


def _acrobot_obs(th1: float, th2: float, dth1: float, dth2: float) -> np.ndarray:
    return np.array([math.cos(th1), math.sin(th1), math.cos(th2), math.sin(th2), dth1, dth2])


def _acrobot_derivs(th1, th2, dth1, dth2, torque):
    m, l1, lc, inertia, g = _AB_M, _AB_L1, _AB_LC, _AB_I, _AB_G
    d1 = m * lc * lc + m * (l1 * l1 + lc * lc + 2.0 * l1 * lc * math.cos(th2)) + 2.0 * inertia
    d2 = m * (lc * lc + l1 * lc * math.cos(th2)) + inertia
    phi2 = m * lc * g * math.cos(th1 + th2 - math.pi / 2.0)
    phi1 = (
        -m * l1 * lc * dth2 * dth2 * math.sin(th2)
        - 2.0 * m * l1 * lc * dth2 * dth1 * math.sin(th2)
        + (m * lc + m * l1) * g * math.cos(th1 - math.pi / 2.0)
        + phi2
    )
    ddth2 = (
        torque + (d2 / d1) * phi1 - m * l1 * lc * dth1 * dth1 * math.sin(th2) - phi2
    ) / (m * lc * lc + inertia - d2 * d2 / d1)
    ddth1 = -(d2 * ddth2 + phi1) / d1
    return dth1, dth2, ddth1, ddth2


def _wrap_pi(angle: float) -> float:
    wrapped = math.fmod(angle + math.pi, 2.0 * math.pi)
    if wrapped < 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


def _acrobot_step(state: np.ndarray, action: int) -> tuple[np.ndarray, float, bool]:
    _check_action(action, 3)
    c1, s1, c2, s2, dth1, dth2 = state
    if not all(map(math.isfinite, (c1, s1, c2, s2, dth1, dth2))):
        raise TrainingError("non-finite acrobot state")
    th1 = math.atan2(s1, c1)
    th2 = math.atan2(s2, c2)
    torque = float(action - 1)

    # One RK4 step over the full 0.2 s control interval.
    h = _AB_DT
    y = (th1, th2, dth1, dth2)
    k1 = _acrobot_derivs(*y, torque)
    k2 = _acrobot_derivs(*(y[i] + 0.5 * h * k1[i] for i in range(4)), torque)
    k3 = _acrobot_derivs(*(y[i] + 0.5 * h * k2[i] for i in range(4)), torque)
    k4 = _acrobot_derivs(*(y[i] + h * k3[i] for i in range(4)), torque)
    th1, th2, dth1, dth2 = (
        y[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) for i in range(4)
    )

    th1 = _wrap_pi(th1)
    th2 = _wrap_pi(th2)
    dth1 = min(max(dth1, -_AB_VEL1_LIMIT), _AB_VEL1_LIMIT)
    dth2 = min(max(dth2, -_AB_VEL2_LIMIT), _AB_VEL2_LIMIT)
    done = -math.cos(th1) - math.cos(th1 + th2) > 1.0
    return _acrobot_obs(th1, th2, dth1, dth2), -1.0, done


_STEPPERS = {
    "cartpole": _cartpole_step,
    "acrobot": _acrobot_step,
    "mountaincar": _mountaincar_step,
}
