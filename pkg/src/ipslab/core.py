"""Shared domain types: system configuration, interaction models, hypothesis
bases, and the pairwise forces used by both simulation and inference.

Positions are plain float arrays of shape (N, d) (or batched (..., N, d));
all operations here are pure and safe to call concurrently.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from scipy.interpolate import BSpline


# ---------------------------------------------------------------------------
# system configuration


@dataclass(frozen=True)
class SystemConfig:
    """Particle count, dimension, horizon, and integration step."""

    N: int
    d: int
    T: float
    dt: float
    sigma: float = 1.0

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("need at least two particles (N >= 2)")
        if self.d < 1:
            raise ValueError("space dimension must be >= 1")
        if not self.T > 0:
            raise ValueError("time horizon T must be positive")
        if not 0 < self.dt < self.T:
            raise ValueError("require 0 < dt < T")
        if self.sigma < 0:
            raise ValueError("noise strength sigma must be nonnegative")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def to_dict(self) -> dict:
        return {"N": self.N, "d": self.d, "T": self.T, "dt": self.dt, "sigma": self.sigma}


# ---------------------------------------------------------------------------
# interaction models
#
# Each variant exposes phi(r) (the interaction function, the derivative of the
# pair potential) and potential(r) (the pair potential itself), vectorized
# over nonnegative arrays.


@dataclass(frozen=True)
class Linear:
    """phi(r) = theta * r, quadratic pair potential."""

    theta: float

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError("theta must be positive")

    def phi(self, r):
        return self.theta * np.asarray(r, float)

    def potential(self, r):
        r = np.asarray(r, float)
        return 0.5 * self.theta * r * r

    def to_dict(self):
        return {"variant": "linear", "theta": self.theta}


@dataclass(frozen=True)
class PowerPotential:
    """Pair potential a * r**(2*beta); phi(r) = 2*a*beta * r**(2*beta - 1)."""

    a: float
    beta: float

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("a must be positive")
        if not 0.5 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [1/2, 1]")

    def phi(self, r):
        r = np.asarray(r, float)
        return 2.0 * self.a * self.beta * r ** (2.0 * self.beta - 1.0)

    def potential(self, r):
        r = np.asarray(r, float)
        return self.a * r ** (2.0 * self.beta)

    def to_dict(self):
        return {"variant": "power", "a": self.a, "beta": self.beta}


@dataclass(frozen=True)
class PerturbedPower:
    """Power potential plus a smooth perturbation.

    ``phi0`` is the perturbation of the pair potential and ``dphi0`` its
    derivative; the total potential must still grow to infinity for the
    stationary samplers to apply.
    """

    a: float
    beta: float
    phi0: Callable = field(compare=False)
    dphi0: Callable = field(compare=False)
    phi0_info: dict | None = None

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("a must be positive")
        if not 0.5 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [1/2, 1]")

    def phi(self, r):
        r = np.asarray(r, float)
        return 2.0 * self.a * self.beta * r ** (2.0 * self.beta - 1.0) + self.dphi0(r)

    def potential(self, r):
        r = np.asarray(r, float)
        return self.a * r ** (2.0 * self.beta) + self.phi0(r)

    def to_dict(self):
        return {
            "variant": "perturbed-power",
            "a": self.a,
            "beta": self.beta,
            "phi0": self.phi0_info or "<callable>",
        }


@dataclass(frozen=True, eq=False)
class Tabulated:
    """Interaction function given on a grid over [0, r_max].

    Linear interpolation inside the grid, constant extrapolation outside; the
    potential is the exact integral of that interpolant (piecewise quadratic,
    linear continuation past r_max).
    """

    r: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, float)
        v = np.asarray(self.values, float)
        if r.ndim != 1 or r.shape != v.shape or r.size < 2:
            raise ValueError("need matching 1-d grids with at least two nodes")
        if r[0] != 0.0 or np.any(np.diff(r) <= 0):
            raise ValueError("grid must start at 0 and be strictly increasing")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "values", v)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(r))])
        object.__setattr__(self, "_cum", cum)

    def phi(self, rr):
        return np.interp(np.asarray(rr, float), self.r, self.values)

    def potential(self, rr):
        rr = np.asarray(rr, float)
        idx = np.clip(np.searchsorted(self.r, rr, side="right") - 1, 0, self.r.size - 2)
        r0, r1 = self.r[idx], self.r[idx + 1]
        v0, v1 = self.values[idx], self.values[idx + 1]
        x = np.clip(rr, self.r[0], self.r[-1]) - r0
        slope = (v1 - v0) / (r1 - r0)
        inside = self._cum[idx] + v0 * x + 0.5 * slope * x * x
        beyond = np.maximum(rr - self.r[-1], 0.0) * self.values[-1]
        return inside + beyond

    def to_dict(self):
        return {"variant": "tabulated", "r": self.r.tolist(), "phi": self.values.tolist()}


InteractionModel = Union[Linear, PowerPotential, PerturbedPower, Tabulated]


def eval_phi(model: InteractionModel, r):
    """Interaction function of the model at distances ``r`` (>= 0)."""
    return model.phi(r)


def eval_potential(model: InteractionModel, r):
    """Pair potential of the model at distances ``r`` (>= 0)."""
    return model.potential(r)


# ---------------------------------------------------------------------------
# drift / potential of a configuration


def pairwise_force(phi: Callable, positions) -> np.ndarray:
    """Mean pairwise force field for an interaction function ``phi``.

    Component i is (1/N) * sum_{j != i} phi(|x_j - x_i|) (x_j - x_i)/|x_j - x_i|.
    Accepts one configuration (N, d) or a batch (..., N, d). Coincident pairs
    contribute nothing.
    """
    x = np.asarray(positions, float)
    if x.ndim < 2 or x.shape[-2] < 2:
        raise ValueError("positions must have shape (..., N, d) with N >= 2")
    diff = x[..., None, :, :] - x[..., :, None, :]  # (..., i, j, d) = x_j - x_i
    rr = np.sqrt(np.sum(diff * diff, axis=-1))
    w = np.zeros_like(rr)
    mask = rr > 0
    w[mask] = phi(rr[mask]) / rr[mask]
    return np.einsum("...ij,...ijd->...id", w, diff) / x.shape[-2]


def drift(model: InteractionModel, positions) -> np.ndarray:
    """Drift of the particle system at ``positions`` under ``model``."""
    return pairwise_force(model.phi, positions)


def potential_J(model: InteractionModel, positions) -> float:
    """Total interaction energy (1/2N) sum_{i != j} Phi(|x_i - x_j|)."""
    x = np.asarray(positions, float)
    if x.ndim < 2 or x.shape[-2] < 2:
        raise ValueError("positions must have shape (..., N, d) with N >= 2")
    n = x.shape[-2]
    diff = x[..., None, :, :] - x[..., :, None, :]
    rr = np.sqrt(np.sum(diff * diff, axis=-1))
    iu, ju = np.triu_indices(n, k=1)
    val = np.sum(model.potential(rr[..., iu, ju]), axis=-1) / n
    return float(val) if val.ndim == 0 else val


# ---------------------------------------------------------------------------
# hypothesis bases


@dataclass(frozen=True, eq=False)
class BasisFamily:
    """Finite family of hypothesis functions with a common support.

    ``design_matrix(x)`` evaluates all members at once: for radial bases x is
    a 1-d array of distances, for non-radial bases an (m, d) array of
    difference vectors. ``breakpoints`` are the members' knot locations,
    used to align quadrature panels.
    """

    kind: str
    n: int
    support: tuple
    mode: str = "radial"
    degree: int | None = None
    dim: int | None = None
    breakpoints: np.ndarray = field(default=None, repr=False)
    _design: Callable = field(default=None, repr=False)

    def design_matrix(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        return self._design(x)

    def member(self, p: int) -> Callable:
        """Member p as a standalone vectorized function."""
        if not 0 <= p < self.n:
            raise IndexError("no such basis member")

        def f(x):
            x = np.atleast_1d(np.asarray(x, float))
            return self.design_matrix(x)[..., p]

        return f

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "n": self.n,
            "support": list(np.ravel(self.support).astype(float)),
            "mode": self.mode,
            "degree": self.degree,
            "dim": self.dim,
        }


def pwc_basis(n: int, r_lo: float, r_hi: float) -> BasisFamily:
    """Indicators of n equal bins of [r_lo, r_hi] (last bin closed)."""
    if n < 1 or not r_hi > r_lo:
        raise ValueError("need n >= 1 and r_hi > r_lo")
    edges = np.linspace(r_lo, r_hi, n + 1)

    def design(x):
        idx = np.searchsorted(edges, x, side="right") - 1
        idx = np.where(x == edges[-1], n - 1, idx)
        out = np.zeros(x.shape + (n,))
        ok = (idx >= 0) & (idx < n)
        out[ok, idx[ok]] = 1.0
        return out

    return BasisFamily(
        kind="piecewise-constant", n=n, support=(r_lo, r_hi),
        breakpoints=edges, _design=design,
    )


def pwl_basis(n: int, r_lo: float, r_hi: float) -> BasisFamily:
    """Hat functions at n equally spaced knots spanning [r_lo, r_hi]."""
    if n < 2 or not r_hi > r_lo:
        raise ValueError("need n >= 2 and r_hi > r_lo")
    knots = np.linspace(r_lo, r_hi, n)
    h = knots[1] - knots[0]

    def design(x):
        inside = (x >= r_lo) & (x <= r_hi)
        t = np.maximum(0.0, 1.0 - np.abs(x[..., None] - knots) / h)
        return np.where(inside[..., None], t, 0.0)

    return BasisFamily(
        kind="piecewise-linear", n=n, support=(r_lo, r_hi),
        breakpoints=knots, _design=design,
    )


def bspline_basis(n: int, degree: int, r_lo: float, r_hi: float) -> BasisFamily:
    """n B-splines of the given degree on a clamped uniform knot vector."""
    if degree < 0 or n < degree + 1 or not r_hi > r_lo:
        raise ValueError("need n >= degree + 1 and r_hi > r_lo")
    inner = np.linspace(r_lo, r_hi, n - degree + 1)
    t = np.concatenate([np.full(degree, r_lo), inner, np.full(degree, r_hi)])

    def design(x):
        flat = np.ravel(x)
        out = np.zeros((flat.size, n))
        ok = (flat >= r_lo) & (flat <= r_hi)
        if np.any(ok):
            out[ok] = BSpline.design_matrix(flat[ok], t, degree).toarray()
        return out.reshape(x.shape + (n,))

    return BasisFamily(
        kind="bspline", n=n, support=(r_lo, r_hi), degree=degree,
        breakpoints=inner, _design=design,
    )


def nonradial_pwl_basis(per_axis: int, half_width: float, d: int) -> BasisFamily:
    """Tensor-product hat functions on the box [-w, w]^d, d <= 2 only."""
    if d not in (1, 2):
        raise ValueError("non-radial bases are restricted to d <= 2")
    if per_axis < 2 or not half_width > 0:
        raise ValueError("need per_axis >= 2 and a positive half width")
    knots = np.linspace(-half_width, half_width, per_axis)
    h = knots[1] - knots[0]
    n = per_axis ** d

    def axis_design(xc):
        inside = (xc >= -half_width) & (xc <= half_width)
        t = np.maximum(0.0, 1.0 - np.abs(xc[..., None] - knots) / h)
        return np.where(inside[..., None], t, 0.0)

    def design(x):
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[-1] != d:
            raise ValueError(f"expected difference vectors with d={d}")
        if d == 1:
            return axis_design(x[..., 0])
        a = axis_design(x[..., 0])
        b = axis_design(x[..., 1])
        return (a[..., :, None] * b[..., None, :]).reshape(x.shape[:-1] + (n,))

    return BasisFamily(
        kind="piecewise-linear", n=n, support=(-half_width, half_width),
        mode="nonradial", dim=d, breakpoints=knots, _design=design,
    )


def custom_basis(functions: Sequence[Callable], r_lo: float, r_hi: float,
                 breakpoints=None) -> BasisFamily:
    """Radial basis from explicit member functions (testing and experiments)."""
    funcs = tuple(functions)
    if not funcs:
        raise ValueError("need at least one member")

    def design(x):
        return np.stack([np.asarray(f(x), float) for f in funcs], axis=-1)

    bp = np.asarray([r_lo, r_hi] if breakpoints is None else breakpoints, float)
    return BasisFamily(
        kind="custom", n=len(funcs), support=(r_lo, r_hi),
        breakpoints=np.unique(bp), _design=design,
    )
