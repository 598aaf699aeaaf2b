"""Likelihood-based nonparametric estimation of the interaction function:
discretized log-likelihood ratios, normal equations, regularized least
squares, and errors in the empirical distance norm.
"""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import BasisFamily, pairwise_force
from .errors import BasisSupportError
from .measures import (DEFAULT_BINS, EmpiricalDistanceMeasure, empirical_rho,
                       l2_inner, pairwise_distances)
from .simulate import TrajectoryEnsemble


@dataclass(frozen=True, eq=False)
class NormalEquations:
    a: np.ndarray  # (n, n), symmetric PSD
    b: np.ndarray  # (n,)
    basis: BasisFamily
    n_steps: int
    M: int


@dataclass(frozen=True, eq=False)
class EstimatorResult:
    coeffs: np.ndarray
    basis: BasisFamily
    regularization: dict
    cond: float
    min_eig: float
    plain_coeffs: np.ndarray = field(repr=False, default=None)
    l2_error: float | None = None
    measure: EmpiricalDistanceMeasure | None = None

    def phi(self, r):
        """The estimated interaction function on distances r."""
        r = np.atleast_1d(np.asarray(r, float))
        return self.basis.design_matrix(r) @ self.coeffs

    def to_dict(self) -> dict:
        return {
            "coeffs": [float(c) for c in self.coeffs],
            "basis": self.basis.describe(),
            "regularization": self.regularization,
            "cond": self.cond,
            "min_eig": self.min_eig,
            "plain_coeffs": [float(c) for c in self.plain_coeffs],
            "l2_error": self.l2_error,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def _candidate_phi(basis, coeffs):
    coeffs = np.asarray(coeffs, float)
    if coeffs.shape != (basis.n,):
        raise ValueError("coefficient vector length must match the basis size")
    return lambda r: basis.design_matrix(r) @ coeffs


def log_likelihood_ratio(ensemble: TrajectoryEnsemble, basis: BasisFamily,
                         coeffs, trajectory: int = 0) -> float:
    """Discretized average log-likelihood ratio of one trajectory.

    Left-endpoint discretization of
    -(1/2TN) int (|grad J|^2 dt + 2 <grad J, dX>), with the gradient
    assembled from drift evaluations (linear in the coefficients).
    """
    phi = _candidate_phi(basis, coeffs)
    pos = ensemble.positions[trajectory]
    t = ensemble.times
    n_particles = ensemble.config.N
    horizon = float(t[-1])
    dt = float(t[1] - t[0])
    force = pairwise_force(phi, pos[:-1])          # (L, N, d), -grad J
    dx = pos[1:] - pos[:-1]
    quad = float(np.sum(force * force)) * dt
    cross = float(np.sum(force * dx))
    return (2.0 * cross - quad) / (2.0 * horizon * n_particles)


def mean_log_likelihood(ensemble: TrajectoryEnsemble, basis: BasisFamily,
                        coeffs) -> float:
    """Sample mean of the log-likelihood ratio over all trajectories."""
    return float(np.mean([
        log_likelihood_ratio(ensemble, basis, coeffs, m)
        for m in range(ensemble.M)
    ]))


def assemble_normal_equations(ensemble: TrajectoryEnsemble, basis: BasisFamily,
                              workers: int = 1) -> NormalEquations:
    """Normal equations of the quadratic likelihood over the basis.

    A_pq = (1/MTN) sum_m sum_l <F_p, F_q>(X_l) dt and
    b_p  = (1/MTN) sum_m sum_l <F_p(X_l), X_{l+1} - X_l>, where F_p is the
    drift field of basis member p; maximizing the empirical likelihood is
    solving A c = b.
    """
    pos = ensemble.positions
    M, S, N, d = pos.shape
    if S < 2:
        raise ValueError("need at least two snapshots")
    t = ensemble.times
    dt = float(t[1] - t[0])
    horizon = float(t[-1])
    n = basis.n
    radial = basis.mode == "radial"
    a_units = np.zeros((M, n, n))
    b_units = np.zeros((M, n))

    def worker(span):
        lo, hi = span
        for m in range(lo, hi):
            x = pos[m, :-1]                      # (L, N, d)
            diff = x[:, None, :, :] - x[:, :, None, :]
            rr = np.sqrt(np.sum(diff * diff, axis=-1))
            mask = rr > 0
            inv = np.zeros_like(rr)
            inv[mask] = 1.0 / rr[mask]
            unit = diff * inv[..., None]
            psi = basis.design_matrix(rr) if radial else basis.design_matrix(-diff)
            psi = psi * mask[..., None]
            v = np.einsum("lijp,lijd->lipd", psi, unit) / N  # F_p at particle i
            dx = pos[m, 1:] - pos[m, :-1]
            a_units[m] = np.einsum("lipd,liqd->pq", v, v) * dt
            b_units[m] = np.einsum("lipd,lid->p", v, dx)

    spans = [(lo, min(lo + max(1, M // max(1, 4 * workers)), M))
             for lo in range(0, M, max(1, M // max(1, 4 * workers)))]
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=int(workers)) as ex:
            list(ex.map(worker, spans))
    else:
        for span in spans:
            worker(span)
    scale = 1.0 / (M * horizon * N)
    a = a_units.sum(axis=0) * scale
    return NormalEquations(a=0.5 * (a + a.T), b=b_units.sum(axis=0) * scale,
                           basis=basis, n_steps=S - 1, M=M)


def solve_regularized(a, b, method: str = "plain", gamma: float | None = None,
                      tau: float | None = None):
    """Solve the (PSD) normal equations with the chosen regularization.

    'plain' is a minimum-norm pseudo-inverse solve with relative cutoff
    1e-12 (reporting the null-space dimension when singular); 'tikhonov'
    solves (A + gamma I) c = b; 'truncated-spectrum' zeroes eigen-directions
    below tau * max_eig. Returns (coeffs, info).
    """
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    evals, vecs = np.linalg.eigh(0.5 * (a + a.T))
    top = float(evals[-1]) if evals.size else 0.0
    info = {
        "method": method,
        "min_eig": float(evals[0]),
        "cond": float(np.inf if evals[0] <= 0 else top / evals[0]),
    }
    proj = vecs.T @ b
    if method == "plain":
        cutoff = 1e-12 * top
        live = evals > cutoff
        info["nullspace_dim"] = int(np.sum(~live))
        coeffs = vecs @ np.where(live, proj / np.where(live, evals, 1.0), 0.0)
    elif method == "tikhonov":
        if gamma is None or gamma < 0:
            raise ValueError("tikhonov needs gamma >= 0")
        info["gamma"] = float(gamma)
        coeffs = vecs @ (proj / (evals + gamma))
    elif method == "truncated-spectrum":
        if tau is None or tau <= 0:
            raise ValueError("truncated-spectrum needs tau > 0")
        info["tau"] = float(tau)
        live = evals >= tau * top
        info["truncated_dim"] = int(np.sum(~live))
        coeffs = vecs @ np.where(live, proj / np.where(live, evals, 1.0), 0.0)
    else:
        raise ValueError(f"unknown regularization method {method!r}")
    return coeffs, info


def error_l2rho(estimate: Callable, truth: Callable,
                measure: EmpiricalDistanceMeasure) -> float:
    """Distance between two interaction functions in the empirical norm."""
    diff = lambda r: np.asarray(estimate(r), float) - np.asarray(truth(r), float)
    return float(np.sqrt(max(0.0, l2_inner(measure, diff, diff))))


def estimate_phi(ensemble: TrajectoryEnsemble, basis: BasisFamily,
                 method: str = "truncated-spectrum", gamma: float | None = None,
                 tau: float = 1e-8, truth=None, bins: int = DEFAULT_BINS,
                 workers: int = 1) -> EstimatorResult:
    """Full estimation pipeline: assemble, regularize, solve, diagnose.

    Basis members without empirical mass under the data's distance
    distribution are rejected up front. When ``truth`` (a model or callable)
    is supplied the result carries the error in the empirical norm.
    """
    dist = pairwise_distances(ensemble, "all")
    measure = empirical_rho(dist, bins)
    design = basis.design_matrix(measure.midpoints)
    mass = (design * design * measure.masses[:, None]).sum(axis=0)
    dead = [int(p) for p in np.nonzero(mass == 0.0)[0]]
    if dead:
        raise BasisSupportError(dead)
    eqs = assemble_normal_equations(ensemble, basis, workers)
    coeffs, info = solve_regularized(eqs.a, eqs.b, method, gamma=gamma, tau=tau)
    plain, _ = solve_regularized(eqs.a, eqs.b, "plain")
    result = EstimatorResult(
        coeffs=coeffs, basis=basis, regularization=info,
        cond=info["cond"], min_eig=info["min_eig"], plain_coeffs=plain,
        measure=measure,
    )
    if truth is not None:
        truth_fn = truth.phi if hasattr(truth, "phi") else truth
        err = error_l2rho(result.phi, truth_fn, measure)
        result = EstimatorResult(
            coeffs=coeffs, basis=basis, regularization=info,
            cond=info["cond"], min_eig=info["min_eig"], plain_coeffs=plain,
            l2_error=err, measure=measure,
        )
    return result


def estimate_grid_csv(result: EstimatorResult, path, truth=None,
                      n_grid: int = 200) -> None:
    """Sample the estimated function on a grid: (r, phi_hat[, phi_true])."""
    lo, hi = result.basis.support
    r = np.linspace(max(0.0, lo), hi, n_grid)
    hat = result.phi(r)
    truth_fn = None
    if truth is not None:
        truth_fn = truth.phi if hasattr(truth, "phi") else truth
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "phi_hat"] + (["phi_true"] if truth_fn else []))
        for i, rv in enumerate(r):
            row = [repr(float(rv)), repr(float(hat[i]))]
            if truth_fn:
                row.append(repr(float(truth_fn(np.array([rv]))[0])))
            w.writerow(row)
