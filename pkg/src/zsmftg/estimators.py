"""scikit-learn style wrappers.

``fit`` takes a game (ModelParams or a config mapping) instead of a data
matrix; ``predict`` maps states and conditional means to the two players'
controls under the fitted profile.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .equilibrium import closed_loop_saddle
from .gradient import exact_gradient
from .model import PolicyProfile, as_model
from .optimize import TrainSpec, train
from .simulator import SimSpec
from .solvers import RICCATI_TOL


class _ProfileMixin:
    def predict(self, X, X_mean):
        """Controls [u1, u2] (n x 2*ell) for states X (n x d) and conditional means X_mean."""
        check_is_fitted(self, "theta_")
        u1, u2 = self.theta_.controls(X, X_mean)
        return np.hstack([u1, u2])

    def gradient_norm(self, model):
        check_is_fitted(self, "theta_")
        return exact_gradient(self.theta_, as_model(model)).norm()


class RiccatiSaddleSolver(_ProfileMixin, BaseEstimator):
    def __init__(self, tol=RICCATI_TOL, check_convexity=True):
        self.tol = tol
        self.check_convexity = check_convexity

    def fit(self, model, y=None):
        m = as_model(model)
        sol = closed_loop_saddle(m, tol=self.tol, check_convexity=self.check_convexity, warn=False)
        self.solution_ = sol
        self.P_ = sol.P
        self.Pbar_ = sol.Pbar
        self.theta_ = sol.theta_star
        self.value_ = sol.value
        self.flags_ = dict(sol.flags)
        return self

    def score(self, model, y=None):
        """Negative gradient norm of the utility at the fitted profile."""
        return -self.gradient_norm(model)


class PolicyGradientSolver(_ProfileMixin, BaseEstimator):
    """Trains the profile by AG or GDA, model-based or from rollouts."""

    def __init__(self, method="gda", mode="exact", eta1=0.1, eta2=0.1, n1max=10, n2max=200,
                 iters=2000, horizon=50, n_perturbations=10_000, radius=0.1, seed=0,
                 log_every=1, crn=False, baseline=False, n_jobs=None):
        self.method = method
        self.mode = mode
        self.eta1 = eta1
        self.eta2 = eta2
        self.n1max = n1max
        self.n2max = n2max
        self.iters = iters
        self.horizon = horizon
        self.n_perturbations = n_perturbations
        self.radius = radius
        self.seed = seed
        self.log_every = log_every
        self.crn = crn
        self.baseline = baseline
        self.n_jobs = n_jobs

    def _spec(self, theta0=None):
        est = SimSpec(horizon=self.horizon, n_perturbations=self.n_perturbations,
                      radius=self.radius, seed=self.seed)
        return TrainSpec(method=self.method, mode=self.mode, eta1=self.eta1, eta2=self.eta2,
                         n1max=self.n1max, n2max=self.n2max, iters=self.iters, theta0=theta0,
                         estimator=est, log_every=self.log_every, crn=self.crn,
                         baseline=self.baseline, n_jobs=self.n_jobs)

    def fit(self, model, y=None, theta0: PolicyProfile | None = None):
        m = as_model(model)
        ref = closed_loop_saddle(m, check_convexity=False, warn=False).value
        self.log_ = train(m, self._spec(theta0), reference=ref)
        self.theta_ = self.log_.final.theta
        self.reference_value_ = ref
        self.value_ = self.log_.final.cost
        return self

    def score(self, model, y=None):
        """Negative relative utility error against the Riccati saddle value."""
        check_is_fitted(self, "theta_")
        return -abs(self.value_ - self.reference_value_) / abs(self.reference_value_)
