"""Saddle points of the game and the checks that connect them."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    AssumptionViolated,
    ConditionFailedWarning,
    IndefiniteInnerMatrix,
    NoConvergence,
    SingularMatrix,
    Unstable,
    ZSMFTGError,
)
from .gradient import best_response_K1, best_response_L1, component_gradient
from .model import ModelParams, PolicyProfile, check_stability
from .solvers import (
    RICCATI_TOL,
    BlockOperators,
    OpenLoopRiccati,
    RiccatiSolution,
    assemble_blocks,
    is_singular,
    solve_are_saddle,
    solve_dare,
    solve_open_loop_riccati,
)


# ------------------------------------------------------------ closed loop

def saddle_gains(b: BlockOperators):
    """Solve N1 K1 - L12 K2 = L1^T, -L12^T K1 + N2 K2 = -L2^T.

    Uses the Schur-complement closed forms when N1, N2 and both complements are
    regular; otherwise solves the stacked system by least squares.  Returns
    (K1, K2, degenerate).
    """
    ell = b.N1.shape[0]
    try:
        for mat in (b.N1, b.N2):
            sing, smin = is_singular(mat)
            if sing:
                raise SingularMatrix("N block singular", smin)
        S1 = b.N1 - b.L12 @ np.linalg.solve(b.N2, b.L12.T)
        S2 = b.N2 - b.L12.T @ np.linalg.solve(b.N1, b.L12)
        for mat in (S1, S2):
            sing, smin = is_singular(mat)
            if sing:
                raise SingularMatrix("Schur complement singular", smin)
        K1 = np.linalg.solve(S1, b.L1.T - b.L12 @ np.linalg.solve(b.N2, b.L2.T))
        K2 = -np.linalg.solve(S2, b.L2.T - b.L12.T @ np.linalg.solve(b.N1, b.L1.T))
        return K1, K2, False
    except SingularMatrix:
        system = np.block([[b.N1, -b.L12], [-b.L12.T, b.N2]])
        rhs = np.vstack([b.L1.T, -b.L2.T])
        sol = np.linalg.lstsq(system, rhs, rcond=None)[0]
        return sol[:ell], sol[ell:], True


def stationarity_residual(b: BlockOperators, K1, K2) -> float:
    r1 = -b.N1 @ K1 + b.L12 @ K2 + b.L1.T
    r2 = -b.L12.T @ K1 + b.N2 @ K2 + b.L2.T
    return float(np.sqrt(np.linalg.norm(r1) ** 2 + np.linalg.norm(r2) ** 2))


@dataclass(frozen=True)
class SaddleSolution:
    P: np.ndarray
    Pbar: np.ndarray
    theta_star: PolicyProfile
    value: float
    value_terms: dict
    flags: dict
    are_y: RiccatiSolution
    are_z: RiccatiSolution
    stationarity: dict = field(default_factory=dict)


def closed_loop_saddle(m: ModelParams, *, tol=RICCATI_TOL, check_convexity=True,
                       warn=True) -> SaddleSolution:
    """Closed-loop saddle point from the two indefinite Riccati equations."""
    are_y = solve_are_saddle(m, "y", tol=tol)
    are_z = solve_are_saddle(m, "z", tol=tol)
    by = assemble_blocks(are_y.P, m, "y")
    bz = assemble_blocks(are_z.P, m, "z")
    K1, K2, deg_y = saddle_gains(by)
    L1, L2, deg_z = saddle_gains(bz)
    theta = PolicyProfile(K1, L1, K2, L2)
    g = m.gamma
    terms = {
        "init_y": float(np.trace(are_y.P @ m.init_cov_idio)),
        "init_z": float(np.trace(are_z.P @ m.init_cov_common)),
        "noise_y": float(g / (1 - g) * np.trace(are_y.P @ m.Sigma1)),
        "noise_z": float(g / (1 - g) * np.trace(are_z.P @ m.Sigma0)),
    }
    flags = {
        "cond_y": are_y.conditions["N1_pd"] and are_y.conditions["N2_nd"],
        "cond_z": are_z.conditions["N1_pd"] and are_z.conditions["N2_nd"],
        "in_Theta": check_stability(theta, m).in_theta,
    }
    if check_convexity:
        flags["convex_concave"] = check_convexity_concavity(m).holds
    flags["degenerate_y"] = deg_y
    flags["degenerate_z"] = deg_z
    failed = [k for k in ("cond_y", "cond_z", "in_Theta", "convex_concave") if flags.get(k) is False]
    if failed and warn:
        warnings.warn(f"sufficient conditions not met: {', '.join(failed)}",
                      ConditionFailedWarning, stacklevel=2)
    stationarity = {"y": stationarity_residual(by, K1, K2), "z": stationarity_residual(bz, L1, L2)}
    return SaddleSolution(are_y.P, are_z.P, theta, sum(terms.values()), terms, flags,
                          are_y, are_z, stationarity)


# -------------------------------------------------------------- open loop

@dataclass(frozen=True)
class OpenLoopFeedback:
    Gamma1P: np.ndarray
    Gamma2P: np.ndarray
    Lambda1Pbar: np.ndarray
    Lambda2Pbar: np.ndarray
    riccati: OpenLoopRiccati


def open_loop_feedback(m: ModelParams, *, tol=RICCATI_TOL) -> OpenLoopFeedback:
    """Coefficients of u_i = Gamma_i P^o (x - xbar) + Lambda_i Pbar^o xbar."""
    ol = solve_open_loop_riccati(m, tol=tol)
    P, Pb = ol.P_o.P, ol.Pbar_o.P
    return OpenLoopFeedback(ol.Gamma1 @ P, ol.Gamma2 @ P, ol.Lambda1 @ Pb, ol.Lambda2 @ Pb, ol)


@dataclass(frozen=True)
class ConnectionReport:
    Pc_from_Po: np.ndarray
    Pbar_c_from_Pbar_o: np.ndarray
    transform_residual_y: float
    transform_residual_z: float
    gain_identity_residual_y: float
    gain_identity_residual_z: float

    def max_residual(self) -> float:
        return max(self.transform_residual_y, self.transform_residual_z,
                   self.gain_identity_residual_y, self.gain_identity_residual_z)


def _check_connection_assumptions(m: ModelParams):
    if m.ell != m.d:
        raise AssumptionViolated(f"control and state dimensions differ (ell={m.ell}, d={m.d})")
    t = m.tilde
    named = (("B1", m.B1), ("B2", m.B2), ("R1", m.R1), ("R2", m.R2),
             ("B1+B1bar", t.B1til), ("B2+B2bar", t.B2til),
             ("R1+R1bar", t.R1til), ("R2+R2bar", t.R2til),
             ("A", m.A), ("A+Abar", t.Atil))
    for name, mat in named:
        sing, smin = is_singular(mat)
        if sing:
            raise AssumptionViolated(f"{name} is not invertible (smallest singular value {smin:.3e})")


def verify_connection(m: ModelParams, *, tol=RICCATI_TOL) -> ConnectionReport:
    """Residuals of the identities linking the open- and closed-loop Riccati solutions."""
    _check_connection_assumptions(m)
    sad = closed_loop_saddle(m, tol=tol, check_convexity=False, warn=False)
    fb = open_loop_feedback(m, tol=tol)
    ol = fb.riccati
    t = m.tilde
    K1, L1, K2, L2 = sad.theta_star.blocks()
    Pc = 0.5 * m.A.T @ ol.P_o.P + m.Q
    Pbc = 0.5 * t.Atil.T @ ol.Pbar_o.P + t.Qtil
    gy = -m.B1 @ K1 + m.B2 @ K2 - (m.B1 @ fb.Gamma1P + m.B2 @ fb.Gamma2P)
    gz = -t.B1til @ L1 + t.B2til @ L2 - (t.B1til @ fb.Lambda1Pbar + t.B2til @ fb.Lambda2Pbar)
    return ConnectionReport(
        Pc_from_Po=Pc,
        Pbar_c_from_Pbar_o=Pbc,
        transform_residual_y=float(np.linalg.norm(sad.P - Pc)),
        transform_residual_z=float(np.linalg.norm(sad.Pbar - Pbc)),
        gain_identity_residual_y=float(np.linalg.norm(gy)),
        gain_identity_residual_z=float(np.linalg.norm(gz)),
    )


# ----------------------------------------------------- convexity-concavity

@dataclass(frozen=True)
class ConvexityReport:
    holds: bool
    details: dict


DARE_NAMES = {(1, False): "DARE-1", (2, False): "DARE-2",
              (1, True): "DARE-MF-1", (2, True): "DARE-MF-2"}


def check_convexity_concavity(m: ModelParams, *, tol=RICCATI_TOL) -> ConvexityReport:
    """Solve the four single-player Riccati equations and test their inner matrices."""
    details = {}
    for (player, mf), name in DARE_NAMES.items():
        try:
            sol = solve_dare(m, player, mf, tol=tol)
        except (NoConvergence, IndefiniteInnerMatrix) as exc:
            details[name] = {"solved": False, "inner_pd": False, "stable": False,
                             "P": None, "residual": None, "error": str(exc)}
            continue
        details[name] = {"solved": True, **sol.conditions, "P": sol.P,
                         "residual": sol.residual_norm, "error": None}
    holds = all(d["solved"] and d["inner_pd"] for d in details.values())
    return ConvexityReport(holds, details)


# ---------------------------------------------------------- best response

def _root_on_second_player(m, variant, *, tol=1e-11, max_iter=100, fd_step=1e-7):
    """Newton search for G2 with d/dG2 C(G1*(G2), G2) = 0, backtracking on the residual norm."""
    best = best_response_K1 if variant == "y" else best_response_L1
    shape = (m.ell, m.d)

    def residual(vec):
        G2 = vec.reshape(shape)
        G1 = best(G2, m).gain
        return component_gradient(G1, G2, m, variant)[1].ravel()

    x = np.zeros(m.ell * m.d)
    r = residual(x)
    for it in range(max_iter):
        rn = np.linalg.norm(r)
        if rn <= tol:
            break
        J = np.empty((r.size, x.size))
        for j in range(x.size):
            e = np.zeros_like(x)
            e[j] = fd_step
            J[:, j] = (residual(x + e) - residual(x - e)) / (2 * fd_step)
        step = np.linalg.lstsq(J, -r, rcond=None)[0]
        lam = 1.0
        while lam > 1e-10:
            try:
                cand = x + lam * step
                rc = residual(cand)
                if np.linalg.norm(rc) < rn:
                    x, r = cand, rc
                    break
            except (ZSMFTGError, np.linalg.LinAlgError):
                pass
            lam /= 2
        else:
            break
    G2 = x.reshape(shape)
    if np.linalg.norm(r) > 1e-8:
        raise NoConvergence(f"best-response root search ({variant}) stalled",
                            iterations=it, residual=float(np.linalg.norm(r)))
    return best(G2, m).gain, G2


def saddle_via_best_response(m: ModelParams) -> PolicyProfile:
    """Saddle profile from the first player's best response and a root search on the second."""
    try:
        K1, K2 = _root_on_second_player(m, "y")
        L1, L2 = _root_on_second_player(m, "z")
    except Unstable as exc:
        raise NoConvergence(f"best-response path left the stable region: {exc}") from exc
    return PolicyProfile(K1, L1, K2, L2)
