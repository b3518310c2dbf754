"""Lyapunov and Riccati kernels.

All solvers are deterministic fixed-point or direct methods sized for small
state dimensions (d up to a few dozen).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_discrete_lyapunov

from .exceptions import (
    IndefiniteInnerMatrix,
    NoConvergence,
    SingularMatrix,
    SingularN,
    Unstable,
)
from .model import EIG_TOL, ModelParams

RICCATI_TOL = 1e-11
MAX_ITER = 100_000
SINGULAR_RTOL = 1e-10
LYAP_RTOL = 1e-11


def sym(a):
    return (a + a.T) / 2


def spectral_radius(F) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(F)), initial=0.0))


def is_singular(a) -> tuple[bool, float]:
    """Return (singular?, smallest singular value) under the relative threshold."""
    s = np.linalg.svd(np.atleast_2d(a), compute_uv=False)
    smin = float(s.min()) if s.size else 0.0
    smax = float(s.max()) if s.size else 0.0
    return (smax == 0.0 or smin < SINGULAR_RTOL * smax), smin


def pos_def(a, tol=EIG_TOL) -> bool:
    return bool(np.linalg.eigvalsh(sym(a)).min() > tol)


def neg_def(a, tol=EIG_TOL) -> bool:
    return bool(np.linalg.eigvalsh(sym(a)).max() < -tol)


# ----------------------------------------------------------------- Lyapunov

def solve_discounted_lyapunov(F, W, gamma, *, symmetric=True):
    """Solve P = W + gamma F^T P F.

    Stability is tested on the spectral radius (gamma rho(F)^2 < 1), which is
    exactly the condition for the series to converge; the norm condition of
    the stabilizing set implies it.
    """
    F = np.atleast_2d(np.asarray(F, dtype=float))
    W = np.atleast_2d(np.asarray(W, dtype=float))
    rho = spectral_radius(F)
    if not np.isfinite(rho) or gamma * rho ** 2 >= 1.0:
        raise Unstable(f"gamma * rho(F)^2 = {gamma * rho ** 2:.6g} >= 1")
    a = np.sqrt(gamma) * F.T
    if F.shape == (1, 1):
        P = W / (1.0 - gamma * F[0, 0] ** 2)
    else:
        P = solve_discrete_lyapunov(a, W)
    if symmetric:
        P = sym(P)
    # iterative refinement: solve for the correction driven by the residual
    for _ in range(5):
        res = W + gamma * F.T @ P @ F - P
        if np.linalg.norm(res) <= LYAP_RTOL * max(1.0, np.linalg.norm(P)):
            return P
        if F.shape == (1, 1):
            dP = res / (1.0 - gamma * F[0, 0] ** 2)
        else:
            dP = solve_discrete_lyapunov(a, res)
        P = P + (sym(dP) if symmetric else dP)
    res = W + gamma * F.T @ P @ F - P
    if np.linalg.norm(res) <= LYAP_RTOL * max(1.0, np.linalg.norm(P)):
        return P
    raise NoConvergence("discounted Lyapunov refinement stalled",
                        iterations=5, residual=float(np.linalg.norm(res)))


def solve_discounted_covariance(F, Sigma_init, Sigma_noise, gamma):
    """Discounted second moment sum_t gamma^t E[y_t y_t^T] of y' = F y + noise."""
    F = np.atleast_2d(np.asarray(F, dtype=float))
    W = np.atleast_2d(Sigma_init) + gamma / (1.0 - gamma) * np.atleast_2d(Sigma_noise)
    return solve_discounted_lyapunov(F.T, W, gamma)


# ----------------------------------------------------------- block operators

def coefficients(m: ModelParams, variant: str):
    """(A, B1, B2, Q, R1, R2) for the deviation ('y') or mean ('z') system."""
    if variant == "y":
        return m.A, m.B1, m.B2, m.Q, m.R1, m.R2
    if variant == "z":
        t = m.tilde
        return t.Atil, t.B1til, t.B2til, t.Qtil, t.R1til, t.R2til
    raise ValueError(f"variant must be 'y' or 'z', got {variant!r}")


@dataclass(frozen=True)
class BlockOperators:
    M: np.ndarray
    L1: np.ndarray
    L2: np.ndarray
    L12: np.ndarray
    N1: np.ndarray
    N2: np.ndarray

    @property
    def Lfull(self):
        return np.hstack([self.L1, self.L2])

    @property
    def Nfull(self):
        return np.block([[self.N1, self.L12], [self.L12.T, self.N2]])


def _blocks(P, A, B1, B2, Q, R1, R2, gamma) -> BlockOperators:
    PA = P @ A
    return BlockOperators(
        M=sym(gamma * A.T @ PA - P + Q),
        L1=gamma * PA.T @ B1,
        L2=gamma * PA.T @ B2,
        L12=gamma * B1.T @ P @ B2,
        N1=sym(gamma * B1.T @ P @ B1 + R1),
        N2=sym(gamma * B2.T @ P @ B2 - R2),
    )


def assemble_blocks(P, m: ModelParams, variant: str = "y") -> BlockOperators:
    P = np.atleast_2d(np.asarray(P, dtype=float))
    return _blocks(P, *coefficients(m, variant), m.gamma)


def _block_inverse_branch(b: BlockOperators, branch: int):
    """Block inverse via the Schur complement of N2 (branch 1) or N1 (branch 2)."""
    if branch == 1:
        sing, smin = is_singular(b.N1)
        if sing:
            raise SingularMatrix("N1 is singular", smin)
        N1i = np.linalg.inv(b.N1)
        S2 = b.N2 - b.L12.T @ N1i @ b.L12
        sing, smin = is_singular(S2)
        if sing:
            raise SingularMatrix("Schur complement N2 - L12^T N1^-1 L12 is singular", smin)
        S2i = np.linalg.inv(S2)
        X = N1i @ b.L12 @ S2i
        return np.block([[N1i + X @ b.L12.T @ N1i, -X], [-S2i @ b.L12.T @ N1i, S2i]])
    sing, smin = is_singular(b.N2)
    if sing:
        raise SingularMatrix("N2 is singular", smin)
    N2i = np.linalg.inv(b.N2)
    S1 = b.N1 - b.L12 @ N2i @ b.L12.T
    sing, smin = is_singular(S1)
    if sing:
        raise SingularMatrix("Schur complement N1 - L12 N2^-1 L12^T is singular", smin)
    S1i = np.linalg.inv(S1)
    Y = N2i @ b.L12.T @ S1i
    return np.block([[S1i, -S1i @ b.L12 @ N2i], [-Y, N2i + Y @ b.L12 @ N2i]])


def invert_block_N(b: BlockOperators) -> np.ndarray:
    """Inverse of [[N1, L12], [L12^T, N2]] by Schur complements."""
    for branch in (1, 2):
        try:
            return _block_inverse_branch(b, branch)
        except SingularMatrix:
            continue
    _, smin = is_singular(b.Nfull)
    raise SingularMatrix("neither Schur-complement branch applies to N", smin)


def _solve_N(b: BlockOperators, rhs):
    """N^-1 rhs, falling back to a direct solve when only N itself is regular."""
    try:
        return invert_block_N(b) @ rhs
    except SingularMatrix:
        sing, smin = is_singular(b.Nfull)
        if sing:
            raise SingularN("N(P) is singular at a Riccati iterate", smin) from None
        return np.linalg.solve(b.Nfull, rhs)


# ----------------------------------------------------------------- Riccati

@dataclass(frozen=True)
class RiccatiSolution:
    P: np.ndarray
    residual_norm: float
    iterations: int
    conditions: dict = field(default_factory=dict)
    gain: np.ndarray | None = None


def saddle_are_residual(P, m: ModelParams, variant: str = "y") -> np.ndarray:
    """M(P) - L(P) N(P)^-1 L(P)^T."""
    b = assemble_blocks(P, m, variant)
    return b.M - b.Lfull @ invert_block_N(b) @ b.Lfull.T


def alternative_are_residual(P, m: ModelParams, variant: str = "y") -> np.ndarray:
    """Q - P + A^T (P^-1/gamma + B1 R1^-1 B1^T - B2 R2^-1 B2^T)^-1 A (needs P invertible)."""
    A, B1, B2, Q, R1, R2 = coefficients(m, variant)
    P = np.atleast_2d(P)
    inner = (np.linalg.inv(P) / m.gamma + B1 @ np.linalg.solve(R1, B1.T)
             - B2 @ np.linalg.solve(R2, B2.T))
    return Q - P + A.T @ np.linalg.solve(inner, A)


def _fixed_point(step, residual, P0, tol, max_iter, what):
    """Damped fixed-point iteration P <- (1-a) P + a step(P), halving a when the residual grows."""
    P = P0
    res = residual(P)
    alpha = 1.0
    it = 0
    while res > tol:
        if it >= max_iter:
            raise NoConvergence(f"{what}: iteration cap reached", iterations=it, residual=res)
        it += 1
        target = step(P)
        cand = (1.0 - alpha) * P + alpha * target
        cand_res = residual(cand) if np.all(np.isfinite(cand)) else np.inf
        if cand_res > res:
            alpha /= 2.0
            if alpha < 1e-12:
                raise NoConvergence(f"{what}: damping exhausted", iterations=it, residual=res)
            continue
        P, res = cand, cand_res
    return P, it


def solve_are_saddle(m: ModelParams, variant: str = "y", *, tol=RICCATI_TOL,
                     max_iter=MAX_ITER) -> RiccatiSolution:
    """Symmetric solution of 0 = M(P) - L(P) N(P)^-1 L(P)^T."""
    A, B1, B2, Q, R1, R2 = coefficients(m, variant)
    g = m.gamma

    def step(P):
        b = _blocks(P, A, B1, B2, Q, R1, R2, g)
        return sym(Q + g * A.T @ P @ A - b.Lfull @ _solve_N(b, b.Lfull.T))

    def residual(P):
        return float(np.linalg.norm(step(P) - P))

    try:
        P0 = solve_discounted_lyapunov(A, Q, g)
    except Unstable:
        P0 = np.array(Q)
    P, it = _fixed_point(step, residual, P0, tol, max_iter, f"ARE-{variant}")
    b = _blocks(P, A, B1, B2, Q, R1, R2, g)
    res = float(np.linalg.norm(b.M - b.Lfull @ _solve_N(b, b.Lfull.T)))
    conditions = {"N1_pd": pos_def(b.N1), "N2_nd": neg_def(b.N2)}
    return RiccatiSolution(P, res, it, conditions)


def _dare_coefficients(m, player, meanfield):
    A, B1, B2, Q, R1, R2 = coefficients(m, "z" if meanfield else "y")
    if player == 1:
        return A, B1, Q, R1
    if player == 2:
        return A, B2, -Q, R2
    raise ValueError(f"player must be 1 or 2, got {player!r}")


def _dare_step(P, A, B, Q, R, g):
    """One value-iteration step and the inner matrix g B^T P B + R."""
    inner = sym(g * B.T @ P @ B + R)
    if not pos_def(inner):
        raise IndefiniteInnerMatrix(
            f"gamma B^T P B + R lost positive definiteness (min eig "
            f"{np.linalg.eigvalsh(inner).min():.3e})")
    BPA = B.T @ P @ A
    return sym(Q + g * A.T @ P @ A - g ** 2 * BPA.T @ np.linalg.solve(inner, BPA)), inner


def dare_value_iteration(A, B, Q, R, gamma, *, tol=RICCATI_TOL, max_iter=MAX_ITER):
    """Value iteration from 0 for P = Q + g A^T P A - g^2 A^T P B (g B^T P B + R)^-1 B^T P A.

    Returns (P, inner, residual, iterations, gain) with gain = g inner^-1 B^T P A.
    """
    P = np.zeros_like(np.atleast_2d(Q), dtype=float)
    delta = np.inf
    for it in range(1, max_iter + 1):
        P_next, _ = _dare_step(P, A, B, Q, R, gamma)
        if not np.all(np.isfinite(P_next)):
            raise NoConvergence("DARE iterate is not finite", iterations=it)
        delta = float(np.linalg.norm(P_next - P))
        P = P_next
        if delta <= tol:
            break
    else:
        raise NoConvergence("DARE value iteration cap reached", iterations=max_iter, residual=delta)
    P_next, inner = _dare_step(P, A, B, Q, R, gamma)
    res = float(np.linalg.norm(P_next - P))
    K = gamma * np.linalg.solve(inner, B.T @ P @ A)
    return P, inner, res, it, K


def solve_dare(m: ModelParams, player: int = 1, meanfield: bool = False, *,
               tol=RICCATI_TOL, max_iter=MAX_ITER) -> RiccatiSolution:
    """Single-player discounted Riccati equation with signed state cost.

    Player 1 uses +Q, player 2 uses -Q (tilde coefficients when ``meanfield``).
    Value iteration from P = 0; raises when the inner matrix stops being
    positive definite along the way or the iteration does not settle.
    """
    A, B, Q, R = _dare_coefficients(m, player, meanfield)
    P, inner, res, it, K = dare_value_iteration(A, B, Q, R, m.gamma, tol=tol, max_iter=max_iter)
    closed = np.linalg.norm(A - B @ K, 2)
    conditions = {"inner_pd": pos_def(inner), "stable": bool(m.gamma * closed ** 2 < 1.0)}
    return RiccatiSolution(P, res, it, conditions, gain=K)


# ------------------------------------------------------- open-loop Riccati

@dataclass(frozen=True)
class OpenLoopRiccati:
    P_o: RiccatiSolution
    Pbar_o: RiccatiSolution
    Gamma1: np.ndarray
    Gamma2: np.ndarray
    Lambda1: np.ndarray
    Lambda2: np.ndarray
    Xi1: np.ndarray
    Xi2: np.ndarray

    def __iter__(self):
        yield self.P_o
        yield self.Pbar_o


def open_loop_coefficients(m: ModelParams):
    t = m.tilde
    G1 = -0.5 * np.linalg.solve(m.R1, m.B1.T)
    G2 = 0.5 * np.linalg.solve(m.R2, m.B2.T)
    L1 = -0.5 * np.linalg.solve(t.R1til, t.B1til.T)
    L2 = 0.5 * np.linalg.solve(t.R2til, t.B2til.T)
    X1 = -0.5 * np.linalg.solve(m.R1, m.B1bar.T - m.R1bar @ np.linalg.solve(t.R1til, t.B1til.T))
    X2 = 0.5 * np.linalg.solve(m.R2, m.B2bar.T - m.R2bar @ np.linalg.solve(t.R2til, t.B2til.T))
    return G1, G2, L1, L2, X1, X2


def open_loop_residual(P, A, Q, G, gamma):
    """gamma (A^T P + 2Q)(A + G P) - P, with G = B1 Gamma1 + B2 Gamma2."""
    return gamma * (A.T @ P + 2.0 * Q) @ (A + G @ P) - P


def _solve_open_loop(A, Q, G, gamma, tol, max_iter, what):
    def step(P):
        return gamma * (A.T @ P + 2.0 * Q) @ (A + G @ P)

    def residual(P):
        return float(np.linalg.norm(step(P) - P))

    P, it = _fixed_point(step, residual, np.zeros_like(Q), tol, max_iter, what)
    res = float(np.linalg.norm(open_loop_residual(P, A, Q, G, gamma)))
    return RiccatiSolution(P, res, it, {})


def solve_open_loop_riccati(m: ModelParams, *, tol=RICCATI_TOL, max_iter=MAX_ITER) -> OpenLoopRiccati:
    """Open-loop Riccati pair; solutions need not be symmetric."""
    G1, G2, L1, L2, X1, X2 = open_loop_coefficients(m)
    t = m.tilde
    Gy = m.B1 @ G1 + m.B2 @ G2
    Gz = t.B1til @ L1 + t.B2til @ L2
    P_o = _solve_open_loop(m.A, m.Q, Gy, m.gamma, tol, max_iter, "open-loop Riccati (y)")
    Pbar_o = _solve_open_loop(t.Atil, t.Qtil, Gz, m.gamma, tol, max_iter, "open-loop Riccati (z)")
    return OpenLoopRiccati(P_o, Pbar_o, G1, G2, L1, L2, X1, X2)
