"""Monte-Carlo engines: mean-field rollouts, the N-agent system and the
sphere-smoothing gradient estimator.

Randomness is organised in fixed-size chunks of samples; each chunk draws from
its own substream keyed by its index, and chunk results are reduced in index
order.  The output therefore does not depend on how many worker threads run
the chunks.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import rng as streams
from .exceptions import ConfigError, NonFiniteSample
from .gradient import value_matrix
from .model import ModelParams, PolicyProfile, check_policy, closed_loop_y, closed_loop_z
from .rng import Stream, as_stream

CHUNK = 2048


@dataclass(frozen=True)
class SimSpec:
    horizon: int = 50
    n_agents: int = 1
    n_perturbations: int = 10_000
    radius: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("horizon", "n_agents", "n_perturbations"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if not self.radius > 0:
            raise ConfigError(f"radius must be positive, got {self.radius!r}")
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "seed", int(self.seed))

    def stream(self) -> Stream:
        return Stream(self.seed)


@dataclass(frozen=True)
class RolloutSample:
    utility: float
    per_step: tuple | None = None


def _stage_costs(theta: PolicyProfile, m: ModelParams):
    """Quadratic weights of the per-step utility on y and on z under ``theta``."""
    t = m.tilde
    Cy = m.Q + theta.K1.T @ m.R1 @ theta.K1 - theta.K2.T @ m.R2 @ theta.K2
    Cz = t.Qtil + theta.L1.T @ t.R1til @ theta.L1 - theta.L2.T @ t.R2til @ theta.L2
    return Cy, Cz


def _quad(x, C):
    """Row-wise x^T C x for x of shape (n, d) and C of shape (d, d) or (n, d, d)."""
    if C.ndim == 2:
        return np.einsum("ni,ij,nj->n", x, C, x)
    return np.einsum("ni,nij,nj->n", x, C, x)


def _apply(F, x):
    if F.ndim == 2:
        return x @ F.T
    return np.einsum("nij,nj->ni", F, x)


def _draw_noise(m: ModelParams, gen, n, horizon, crn=False):
    """Initial states and step shocks for ``n`` rollouts (shared across rollouts with ``crn``)."""
    d = m.d
    k = 1 if crn else n
    noise = m.noise
    y0 = noise.init_idio.sample(gen, (k,), d)
    z0 = noise.init_common.sample(gen, (k,), d)
    e1 = noise.step_idio.sample(gen, (horizon - 1, k), d)
    e0 = noise.step_common.sample(gen, (horizon - 1, k), d)
    if crn:
        y0, z0 = np.broadcast_to(y0, (n, d)), np.broadcast_to(z0, (n, d))
        e1, e0 = np.broadcast_to(e1, (horizon - 1, n, d)), np.broadcast_to(e0, (horizon - 1, n, d))
    return y0, z0, e1, e0


def _rollout_kernel(Fy, Fz, Cy, Cz, gamma, y0, z0, e1, e0, record=False):
    """Discounted utilities of a batch of (y, z) paths.

    Closed-loop and weight matrices may be shared (2-d) or per sample (3-d).
    The scalar case runs on flat arrays.
    """
    horizon = e1.shape[0] + 1
    n, d = y0.shape
    steps = [] if record else None
    if d == 1:
        fy, fz = Fy.reshape(-1), Fz.reshape(-1)
        cy, cz = Cy.reshape(-1), Cz.reshape(-1)
        y, z = y0[:, 0].copy(), z0[:, 0].copy()
        total = np.zeros(n)
        disc = 1.0
        for t in range(horizon):
            c = cy * y * y + cz * z * z
            total += disc * c
            if record:
                steps.append(c.copy())
            if t + 1 < horizon:
                y = fy * y + e1[t, :, 0]
                z = fz * z + e0[t, :, 0]
            disc *= gamma
        return total, steps
    y, z = np.array(y0), np.array(z0)
    total = np.zeros(n)
    disc = 1.0
    for t in range(horizon):
        c = _quad(y, Cy) + _quad(z, Cz)
        total += disc * c
        if record:
            steps.append(c.copy())
        if t + 1 < horizon:
            y = _apply(Fy, y) + e1[t]
            z = _apply(Fz, z) + e0[t]
        disc *= gamma
    return total, steps


def _profile_matrices(theta, m):
    Cy, Cz = _stage_costs(theta, m)
    return closed_loop_y(theta.K1, theta.K2, m), closed_loop_z(theta.L1, theta.L2, m), Cy, Cz


def mkv_rollout(theta, m: ModelParams, spec: SimSpec, stream=None, *, y0=None, z0=None,
                record=False) -> RolloutSample:
    """One truncated discounted utility sample of the mean-field dynamics.

    ``y0``/``z0`` override the initial deviation and mean drawn from the noise laws.
    """
    theta = check_policy(theta, m)
    stream = as_stream(stream if stream is not None else spec.seed)
    gen = stream.child(streams.ROLLOUT).generator()
    Y0, Z0, e1, e0 = _draw_noise(m, gen, 1, spec.horizon)
    if y0 is not None:
        Y0 = np.asarray(y0, dtype=float).reshape(1, m.d)
    if z0 is not None:
        Z0 = np.asarray(z0, dtype=float).reshape(1, m.d)
    Fy, Fz, Cy, Cz = _profile_matrices(theta, m)
    with np.errstate(over="ignore", invalid="ignore"):
        total, steps = _rollout_kernel(Fy, Fz, Cy, Cz, m.gamma, Y0, Z0, e1, e0, record)
    per_step = None
    if record:
        per_step = tuple((t, float(c[0])) for t, c in enumerate(steps))
    return RolloutSample(float(total[0]), per_step)


def _chunks(n):
    return [(i, min(CHUNK, n - i)) for i in range(0, n, CHUNK)]


def _map_chunks(fn, n, n_jobs):
    jobs = _chunks(n)
    if n_jobs is None or n_jobs <= 1 or len(jobs) == 1:
        return [fn(k, start, size) for k, (start, size) in enumerate(jobs)]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        futures = [pool.submit(fn, k, start, size) for k, (start, size) in enumerate(jobs)]
        return [f.result() for f in futures]


def mkv_utilities(theta, m: ModelParams, horizon: int, n_samples: int, stream=0,
                  *, n_jobs=None) -> np.ndarray:
    """Utilities of ``n_samples`` independent mean-field rollouts."""
    theta = check_policy(theta, m)
    stream = as_stream(stream)
    Fy, Fz, Cy, Cz = _profile_matrices(theta, m)

    def run(k, start, size):
        gen = stream.child(streams.ROLLOUT, k).generator()
        y0, z0, e1, e0 = _draw_noise(m, gen, size, horizon)
        with np.errstate(over="ignore", invalid="ignore"):
            return _rollout_kernel(Fy, Fz, Cy, Cz, m.gamma, y0, z0, e1, e0)[0]

    return np.concatenate(_map_chunks(run, n_samples, n_jobs))


def truncation_tail(theta, m: ModelParams, horizon: int) -> float:
    """Expected utility accumulated from ``horizon`` on, for a stable profile."""
    theta = check_policy(theta, m)
    g = m.gamma
    total = 0.0
    for variant, G1, G2, S0, Sn in (("y", theta.K1, theta.K2, m.init_cov_idio, m.Sigma1),
                                    ("z", theta.L1, theta.L2, m.init_cov_common, m.Sigma0)):
        P, F = value_matrix(G1, G2, m, variant)
        S = np.array(S0)
        for _ in range(horizon):
            S = F @ S @ F.T + Sn
        total += g ** horizon * (np.trace(P @ S) + g / (1 - g) * np.trace(P @ Sn))
    return float(total)


def truncated_component_cost(G1, G2, m: ModelParams, variant: str, horizon: int) -> float:
    """Exact expectation of one component of the utility summed over ``horizon`` steps."""
    theta = (PolicyProfile(G1, np.zeros_like(G1), G2, np.zeros_like(G2)) if variant == "y"
             else PolicyProfile(np.zeros_like(G1), G1, np.zeros_like(G2), G2))
    theta = check_policy(theta, m)
    Cy, Cz = _stage_costs(theta, m)
    if variant == "y":
        F, C, S, Sn = closed_loop_y(theta.K1, theta.K2, m), Cy, m.init_cov_idio, m.Sigma1
    else:
        F, C, S, Sn = closed_loop_z(theta.L1, theta.L2, m), Cz, m.init_cov_common, m.Sigma0
    S = np.array(S)
    total, disc = 0.0, 1.0
    for _ in range(horizon):
        total += disc * np.trace(C @ S)
        S = F @ S @ F.T + Sn
        disc *= m.gamma
    return float(total)


def expected_truncated_utility(theta, m: ModelParams, horizon: int) -> float:
    theta = check_policy(theta, m)
    return (truncated_component_cost(theta.K1, theta.K2, m, "y", horizon)
            + truncated_component_cost(theta.L1, theta.L2, m, "z", horizon))


# ------------------------------------------------------------- sphere

def _sphere(gen, shape, n_entries, tau):
    g = gen.standard_normal(tuple(shape) + (n_entries,))
    return tau * g / np.linalg.norm(g, axis=-1, keepdims=True)


def sample_sphere(n_entries: int, tau: float, stream=0) -> np.ndarray:
    """A uniformly distributed point of the radius-``tau`` sphere in R^n_entries."""
    if n_entries < 1 or not tau > 0:
        raise ConfigError("sample_sphere needs n_entries >= 1 and tau > 0")
    gen = as_stream(stream).child(streams.SPHERE).generator()
    return _sphere(gen, (), n_entries, tau)


# ----------------------------------------------------------- estimator

@dataclass(frozen=True)
class GradientEstimate:
    dK: np.ndarray
    dL: np.ndarray
    n_samples: int
    mean_utility: float


def estimate_gradient_player(theta, player: int, m: ModelParams, spec: SimSpec, stream=None,
                             *, crn=False, baseline=False, n_jobs=None) -> GradientEstimate:
    """Sphere-smoothing estimate of the gradient of the utility in (K_i, L_i).

    Each of the ``spec.n_perturbations`` perturbations shifts K_i and L_i by
    independent radius-tau sphere draws and runs one rollout with fresh noise
    (or with noise shared by all perturbations when ``crn``).  The scale is
    D / tau^2 with D = ell * d, the number of entries in one gain block.
    ``baseline`` subtracts the sample mean utility before weighting.
    """
    theta = check_policy(theta, m)
    if player not in (1, 2):
        raise ValueError(f"player must be 1 or 2, got {player!r}")
    stream = as_stream(stream if stream is not None else spec.seed)
    ell, d = m.ell, m.d
    D = ell * d
    tau = spec.radius
    T = spec.horizon
    K, L = theta.player(player)
    t = m.tilde
    if player == 1:
        B_y, B_z, R_y, R_z, sign = m.B1, t.B1til, m.R1, t.R1til, -1.0
        K_o, L_o = theta.K2, theta.L2
        B_oy, B_oz, R_oy, R_oz = m.B2, t.B2til, m.R2, t.R2til
    else:
        B_y, B_z, R_y, R_z, sign = m.B2, t.B2til, m.R2, t.R2til, 1.0
        K_o, L_o = theta.K1, theta.L1
        B_oy, B_oz, R_oy, R_oz = m.B1, t.B1til, m.R1, t.R1til
    # other player's contribution to closed loop and stage weights is fixed
    base_y = m.A - sign * B_oy @ K_o
    base_z = t.Atil - sign * B_oz @ L_o
    wq_y = m.Q + sign * K_o.T @ R_oy @ K_o
    wq_z = t.Qtil + sign * L_o.T @ R_oz @ L_o
    crn_noise = None
    if crn:
        crn_noise = _draw_noise(m, stream.child(streams.ROLLOUT).generator(), 1, T)

    def run(k, start, size):
        gen = stream.child(streams.PERTURBATION, k).generator()
        v = _sphere(gen, (size, 2), D, tau)
        vK = v[:, 0].reshape(size, ell, d)
        vL = v[:, 1].reshape(size, ell, d)
        Kp = K + vK
        Lp = L + vL
        if crn_noise is None:
            y0, z0, e1, e0 = _draw_noise(m, gen, size, T)
        else:
            y0, z0, e1, e0 = (np.broadcast_to(a, (a.shape[0], size, d)) if a.ndim == 3
                              else np.broadcast_to(a, (size, d)) for a in crn_noise)
        if d == 1 and ell == 1:
            kp, lp = Kp[:, 0, 0], Lp[:, 0, 0]
            Fy = base_y[0, 0] + sign * B_y[0, 0] * kp
            Fz = base_z[0, 0] + sign * B_z[0, 0] * lp
            Cy = wq_y[0, 0] - sign * R_y[0, 0] * kp * kp
            Cz = wq_z[0, 0] - sign * R_z[0, 0] * lp * lp
        else:
            Fy = base_y + sign * np.einsum("ij,njk->nik", B_y, Kp)
            Fz = base_z + sign * np.einsum("ij,njk->nik", B_z, Lp)
            Cy = wq_y - sign * np.einsum("nji,jk,nkl->nil", Kp, R_y, Kp)
            Cz = wq_z - sign * np.einsum("nji,jk,nkl->nil", Lp, R_z, Lp)
        with np.errstate(over="ignore", invalid="ignore"):
            util, _ = _rollout_kernel(np.asarray(Fy), np.asarray(Fz), np.asarray(Cy),
                                      np.asarray(Cz), m.gamma, y0, z0, e1, e0)
        bad = np.flatnonzero(~np.isfinite(util))
        if bad.size:
            return ("bad", start + int(bad[0]))
        flatK = vK.reshape(size, D)
        flatL = vL.reshape(size, D)
        return ("ok", util @ flatK, util @ flatL, flatK.sum(0), flatL.sum(0), float(util.sum()))

    parts = _map_chunks(run, spec.n_perturbations, n_jobs)
    for p in parts:
        if p[0] == "bad":
            raise NonFiniteSample(f"rollout for perturbation {p[1]} diverged", index=p[1])
    sK = sum(p[1] for p in parts)
    sL = sum(p[2] for p in parts)
    total = sum(p[5] for p in parts)
    M = spec.n_perturbations
    mean_u = total / M
    if baseline:
        sK = sK - mean_u * sum(p[3] for p in parts)
        sL = sL - mean_u * sum(p[4] for p in parts)
    scale = D / tau ** 2 / M
    return GradientEstimate((scale * sK).reshape(ell, d), (scale * sL).reshape(ell, d), M, mean_u)


# ------------------------------------------------------------- N agents

def _n_agent_paths(theta, m, horizon, x0, eps_idio, eps_common, record=False):
    """Simulate R independent populations of N agents.

    x0: (R, N, d); eps_idio: (T-1, R, N, d); eps_common: (T-1, R, d).
    Returns the discounted average utilities (R,), the empirical-mean paths
    (T, R, d) and optionally per-step costs.
    """
    t = m.tilde
    K1, L1, K2, L2 = theta.blocks()
    x = np.array(x0)
    R = x.shape[0]
    total = np.zeros(R)
    steps = [] if record else None
    means = []
    disc = 1.0
    for s in range(horizon):
        xbar = x.mean(axis=1, keepdims=True)
        means.append(xbar[:, 0])
        y = x - xbar
        u1 = -(y @ K1.T) - xbar @ L1.T
        u2 = y @ K2.T + xbar @ L2.T
        u1bar = u1.mean(axis=1, keepdims=True)
        u2bar = u2.mean(axis=1, keepdims=True)
        du1, du2 = u1 - u1bar, u2 - u2bar
        c = (np.einsum("rni,ij,rnj->r", y, m.Q, y)
             + np.einsum("rni,ij,rnj->r", du1, m.R1, du1)
             - np.einsum("rni,ij,rnj->r", du2, m.R2, du2)) / x.shape[1]
        xb, ub1, ub2 = xbar[:, 0], u1bar[:, 0], u2bar[:, 0]
        c = c + (np.einsum("ri,ij,rj->r", xb, t.Qtil, xb)
                 + np.einsum("ri,ij,rj->r", ub1, t.R1til, ub1)
                 - np.einsum("ri,ij,rj->r", ub2, t.R2til, ub2))
        total += disc * c
        if record:
            steps.append(c.copy())
        if s + 1 < horizon:
            x = (x @ m.A.T + xbar @ m.Abar.T + u1 @ m.B1.T + u1bar @ m.B1bar.T
                 + u2 @ m.B2.T + u2bar @ m.B2bar.T + eps_idio[s] + eps_common[s][:, None, :])
        disc *= m.gamma
    return total, np.stack(means), steps


def n_agent_rollout(theta, m: ModelParams, spec: SimSpec, stream=None, *, x0=None,
                    record=False) -> RolloutSample:
    """One truncated discounted average-utility sample of the N-agent system.

    ``x0`` (N x d) overrides the initial states.
    """
    theta = check_policy(theta, m)
    stream = as_stream(stream if stream is not None else spec.seed)
    N, d, T = spec.n_agents, m.d, spec.horizon
    gc = stream.child(streams.N_AGENT, streams.COMMON).generator()
    gi = stream.child(streams.N_AGENT, streams.IDIO).generator()
    z0 = m.noise.init_common.sample(gc, (1,), d)
    e0 = m.noise.step_common.sample(gc, (T - 1, 1), d)
    y0 = m.noise.init_idio.sample(gi, (1, N), d)
    e1 = m.noise.step_idio.sample(gi, (T - 1, 1, N), d)
    X0 = y0 + z0[:, None, :] if x0 is None else np.asarray(x0, dtype=float).reshape(1, N, d)
    with np.errstate(over="ignore", invalid="ignore"):
        total, _, steps = _n_agent_paths(theta, m, T, X0, e1, e0, record)
    per_step = tuple((t, float(c[0])) for t, c in enumerate(steps)) if record else None
    return RolloutSample(float(total[0]), per_step)


def n_agent_bias(theta, m: ModelParams, horizon: int, n_agents: int) -> float:
    """Exact E[N-agent utility] - E[mean-field utility] over ``horizon`` steps.

    The empirical mean carries the averaged idiosyncratic shocks; they inflate
    the mean-process cost and deflate the deviation cost by the same
    propagated covariance, scaled by 1/N.
    """
    theta = check_policy(theta, m)
    Cy, Cz = _stage_costs(theta, m)
    Fy = closed_loop_y(theta.K1, theta.K2, m)
    Fz = closed_loop_z(theta.L1, theta.L2, m)
    Sy = np.array(m.init_cov_idio) / n_agents
    Sz = Sy.copy()
    noise = m.Sigma1 / n_agents
    total, disc = 0.0, 1.0
    for _ in range(horizon):
        total += disc * (np.trace(Cz @ Sz) - np.trace(Cy @ Sy))
        Sy = Fy @ Sy @ Fy.T + noise
        Sz = Fz @ Sz @ Fz.T + noise
        disc *= m.gamma
    return float(total)


@dataclass(frozen=True)
class ChaosStats:
    n_agents: int
    mean_utility: float
    stderr: float
    raw_error: float
    paired_error: float
    paired_stderr: float
    exact_bias: float


def propagation_of_chaos(theta, m: ModelParams, horizon: int, agent_counts, n_reps: int,
                         stream=0, *, block=50) -> list[ChaosStats]:
    """Compare N-agent utilities with coupled mean-field utilities.

    Replication r uses the same common shocks for every N.  Its mean-field
    reference runs N independent deviation paths on the agents' own
    idiosyncratic shocks and one mean path on the common shocks, so most of
    the sampling noise cancels in the difference.  The remaining first-order
    term 2 sum_t gamma^t z_t^T C_z (xbar_t - z_t) has zero mean and is removed
    as a control variate.  ``raw_error`` compares the plain N-agent mean with
    the exact expected mean-field utility.
    """
    theta = check_policy(theta, m)
    stream = as_stream(stream)
    d, T, g = m.d, horizon, m.gamma
    Fy = closed_loop_y(theta.K1, theta.K2, m)
    Fz = closed_loop_z(theta.L1, theta.L2, m)
    Cy, Cz = _stage_costs(theta, m)
    mf_value = expected_truncated_utility(theta, m, T)
    disc = g ** np.arange(T)

    z0s, e0s = [], []
    for r in range(n_reps):
        gen = stream.child(streams.N_AGENT, streams.COMMON, r).generator()
        z0s.append(m.noise.init_common.sample(gen, (1,), d)[0])
        e0s.append(m.noise.step_common.sample(gen, (T - 1,), d))
    z0s = np.stack(z0s)
    e0s = np.stack(e0s, axis=1)
    z_paths = [z0s]
    for t in range(T - 1):
        z_paths.append(z_paths[-1] @ Fz.T + e0s[t])
    z_paths = np.stack(z_paths)                               # (T, R, d)
    z_cost = np.einsum("t,tri,ij,trj->r", disc, z_paths, Cz, z_paths)

    out = []
    for N in agent_counts:
        utils = np.empty(n_reps)
        paired = np.empty(n_reps)
        for b0 in range(0, n_reps, block):
            sl = slice(b0, min(n_reps, b0 + block))
            ys, es = [], []
            for r in range(sl.start, sl.stop):
                gen = stream.child(streams.N_AGENT, streams.IDIO, N, r).generator()
                ys.append(m.noise.init_idio.sample(gen, (N,), d))
                es.append(m.noise.step_idio.sample(gen, (T - 1, N), d))
            y0 = np.stack(ys)
            e1 = np.stack(es, axis=1)
            x0 = y0 + z0s[sl, None, :]
            u, means, _ = _n_agent_paths(theta, m, T, x0, e1, e0s[:, sl])
            # coupled mean-field deviation paths
            y = y0
            y_cost = np.zeros(y0.shape[0])
            for t in range(T):
                y_cost += disc[t] * np.einsum("rni,ij,rnj->r", y, Cy, y) / N
                if t + 1 < T:
                    y = y @ Fy.T + e1[t]
            zp = z_paths[:, sl]
            cv = 2.0 * np.einsum("t,tri,ij,trj->r", disc, zp, Cz, means - zp)
            utils[sl] = u
            paired[sl] = u - (y_cost + z_cost[sl]) - cv
        root = np.sqrt(n_reps)
        out.append(ChaosStats(
            int(N), float(utils.mean()), float(utils.std(ddof=1) / root),
            float(abs(utils.mean() - mf_value)), float(abs(paired.mean())),
            float(paired.std(ddof=1) / root), n_agent_bias(theta, m, T, N)))
    return out
