"""Exact utility and policy gradients for linear feedback profiles."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import Unstable
from .model import ModelParams, PolicyProfile, check_policy, check_stability
from .solvers import (
    coefficients,
    dare_value_iteration,
    solve_discounted_covariance,
    solve_discounted_lyapunov,
)


@dataclass(frozen=True)
class GradientBundle:
    dK1: np.ndarray
    dL1: np.ndarray
    dK2: np.ndarray
    dL2: np.ndarray
    Py: np.ndarray
    Pz: np.ndarray
    Sy: np.ndarray
    Sz: np.ndarray
    cost: float

    def player(self, i: int):
        return (self.dK1, self.dL1) if i == 1 else (self.dK2, self.dL2)

    def as_profile(self) -> PolicyProfile:
        return PolicyProfile(self.dK1, self.dL1, self.dK2, self.dL2)

    def norm(self) -> float:
        return float(np.linalg.norm(self.as_profile().as_vector()))


def _part(m: ModelParams, variant: str):
    """Coefficients plus initial second moment and step covariance of one component."""
    A, B1, B2, Q, R1, R2 = coefficients(m, variant)
    if variant == "y":
        return A, B1, B2, Q, R1, R2, m.init_cov_idio, m.Sigma1
    return A, B1, B2, Q, R1, R2, m.init_cov_common, m.Sigma0


def value_matrix(G1, G2, m: ModelParams, variant: str = "y"):
    """P solving P = Q + G1^T R1 G1 - G2^T R2 G2 + gamma F^T P F for one component."""
    A, B1, B2, Q, R1, R2, _, _ = _part(m, variant)
    F = A - B1 @ G1 + B2 @ G2
    return solve_discounted_lyapunov(F, Q + G1.T @ R1 @ G1 - G2.T @ R2 @ G2, m.gamma), F


def _component_cost(P, m, variant):
    _, _, _, _, _, _, S0, Sn = _part(m, variant)
    return float(np.trace(P @ S0) + m.gamma / (1.0 - m.gamma) * np.trace(P @ Sn))


def cost_y(K1, K2, m: ModelParams) -> float:
    Py, _ = value_matrix(np.atleast_2d(K1), np.atleast_2d(K2), m, "y")
    return _component_cost(Py, m, "y")


def cost_z(L1, L2, m: ModelParams) -> float:
    Pz, _ = value_matrix(np.atleast_2d(L1), np.atleast_2d(L2), m, "z")
    return _component_cost(Pz, m, "z")


def _require_theta(theta, m):
    theta = check_policy(theta, m)
    rep = check_stability(theta, m)
    if not rep.in_theta:
        raise Unstable(f"profile is outside the stabilizing set "
                       f"(gamma*|F_y|^2={m.gamma * rep.norm_y ** 2:.4g}, "
                       f"gamma*|F_z|^2={m.gamma * rep.norm_z ** 2:.4g})")
    return theta


def evaluate_cost(theta, m: ModelParams) -> float:
    """Expected discounted utility of a profile in the stabilizing set."""
    theta = _require_theta(theta, m)
    return cost_y(theta.K1, theta.K2, m) + cost_z(theta.L1, theta.L2, m)


def _component_gradient(G1, G2, m, variant):
    A, B1, B2, Q, R1, R2, S0, Sn = _part(m, variant)
    g = m.gamma
    P, F = value_matrix(G1, G2, m, variant)
    S = solve_discounted_covariance(F, S0, Sn, g)
    PB1, PB2 = P @ B1, P @ B2
    d1 = 2.0 * ((R1 + g * B1.T @ PB1) @ G1 - g * PB1.T @ B2 @ G2 - g * PB1.T @ A) @ S
    d2 = 2.0 * (-g * PB2.T @ B1 @ G1 + (g * B2.T @ PB2 - R2) @ G2 + g * PB2.T @ A) @ S
    return d1, d2, P, S


def exact_gradient(theta, m: ModelParams) -> GradientBundle:
    """Gradients of the utility with respect to (K1, L1, K2, L2)."""
    theta = _require_theta(theta, m)
    dK1, dK2, Py, Sy = _component_gradient(theta.K1, theta.K2, m, "y")
    dL1, dL2, Pz, Sz = _component_gradient(theta.L1, theta.L2, m, "z")
    cost = _component_cost(Py, m, "y") + _component_cost(Pz, m, "z")
    return GradientBundle(dK1, dL1, dK2, dL2, Py, Pz, Sy, Sz, cost)


def component_gradient(G1, G2, m: ModelParams, variant: str = "y"):
    """(d/dG1, d/dG2) of one component's cost; only needs a stable closed loop."""
    d1, d2, _, _ = _component_gradient(np.atleast_2d(G1), np.atleast_2d(G2), m, variant)
    return d1, d2


# ------------------------------------------------------------ best response

@dataclass(frozen=True)
class BestResponse:
    gain: np.ndarray
    P: np.ndarray
    residual_norm: float

    # names used by the single-component accessors
    @property
    def K1star(self):
        return self.gain

    @property
    def L1star(self):
        return self.gain

    @property
    def Py_K2(self):
        return self.P

    @property
    def Pz_L2(self):
        return self.P


def _best_response(G2, m, variant):
    A, B1, B2, Q, R1, R2 = coefficients(m, variant)
    G2 = np.atleast_2d(G2)
    A_g = A + B2 @ G2
    Q_g = Q - G2.T @ R2 @ G2
    P, _, res, _, gain = dare_value_iteration(A_g, B1, Q_g, R1, m.gamma)
    if m.gamma * np.linalg.norm(A_g - B1 @ gain, 2) ** 2 >= 1.0:
        raise Unstable("best response does not stabilize the closed loop")
    return BestResponse(gain, P, res)


def best_response_K1(K2, m: ModelParams) -> BestResponse:
    """Minimizing K1 against a fixed K2, from the K2-indexed Riccati equation."""
    return _best_response(K2, m, "y")


def best_response_L1(L2, m: ModelParams) -> BestResponse:
    return _best_response(L2, m, "z")

