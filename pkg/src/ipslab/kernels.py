"""Closed-form Gaussian pair kernels, quadrature evaluation of the coercivity
bilinear form, positive/negative-definiteness Gram testers, a library of
radial kernels with known verdicts, and the Gamma-integral and comparison
checks used by the nonlinear theory.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, special

from ._rng import derive_rng
from .coercivity import GramPair
from .core import BasisFamily
from .errors import QuadratureError
from .measures import EmpiricalDistanceMeasure, sphere_moment_exact

_PD_KEY = 4  # rng stream tag for gram trials


# ---------------------------------------------------------------------------
# Gaussian pair density and kernel


def gaussian_q_density(lam: float, d: int, r):
    """Density of |X - Y| for the exchangeable Gaussian pair family.

    q(r) = C^{-1} r^{d-1} exp(-r^2 / (4 lam)), C = (1/2) (4 lam)^{d/2} Gamma(d/2).
    """
    if not lam > 0 or d < 1:
        raise ValueError("need lam > 0 and d >= 1")
    r = np.asarray(r, float)
    c = 0.5 * (4.0 * lam) ** (d / 2.0) * special.gamma(d / 2.0)
    with np.errstate(divide="ignore"):
        out = np.where(r < 0, 0.0, r ** (d - 1) * np.exp(-r * r / (4.0 * lam)) / c)
    return float(out) if out.ndim == 0 else out


def gaussian_pair_kernel_series(lam: float, d: int, r, s, rtol: float = 1e-14,
                                kmax: int = 201):
    """Series evaluation of the radial pair kernel.

    K(r, s) = C_d exp(-(r^2+s^2)/(12 lam)) * sum_{k odd} b_{k+1} (c rs)^k / k!
    with c = 1/(3 lam) and b_k the sphere moments. Terms are accumulated in
    scaled form so large arguments do not overflow; truncation stops once the
    next term contributes less than ``rtol`` relatively, or at ``kmax``.
    """
    if not lam > 0 or d < 1:
        raise ValueError("need lam > 0 and d >= 1")
    r = np.asarray(r, float)
    s = np.asarray(s, float)
    c = 1.0 / (3.0 * lam)
    cd = (2.0 / np.sqrt(3.0)) ** d
    x = c * r * s
    pos = x > 0
    logx = np.where(pos, np.log(np.where(pos, x, 1.0)), 0.0)
    total = np.zeros(np.broadcast(r, s).shape)
    k = 1
    while k <= kmax:
        b = sphere_moment_exact(d, k + 1)
        term = np.where(pos, b * np.exp(k * logx - special.gammaln(k + 1) - x), 0.0)
        total = total + term
        done = (k > x) | ~pos
        if np.all(done) and np.all(term <= rtol * np.maximum(total, 1e-300)):
            break
        k += 2
    out = cd * np.exp(-(r * r + s * s) / (12.0 * lam) + x) * total
    return float(out) if out.ndim == 0 else out


def gaussian_pair_kernel(lam: float, d: int, r, s):
    """Radial pair kernel; sinh closed form at d = 1, series otherwise."""
    if d == 1:
        r = np.asarray(r, float)
        s = np.asarray(s, float)
        base = -(r * r + s * s) / (12.0 * lam)
        x = r * s / (3.0 * lam)
        out = (2.0 / np.sqrt(3.0)) * 0.5 * (np.exp(base + x) - np.exp(base - x))
        return float(out) if out.ndim == 0 else out
    return gaussian_pair_kernel_series(lam, d, r, s)


@dataclass(frozen=True)
class GaussianDistanceDensity:
    """Closed-form distance density for quadrature inputs."""

    lam: float
    d: int

    def __call__(self, r):
        return gaussian_q_density(self.lam, self.d, r)

    def domain_radius(self, tail_mass: float) -> float:
        return float(np.sqrt(4.0 * self.lam
                             * special.gammainccinv(self.d / 2.0, tail_mass)))


# ---------------------------------------------------------------------------
# kernel handles


@dataclass(frozen=True, eq=False)
class KernelHandle:
    """A kernel plus evaluation metadata.

    kind 'gaussian-pair' wraps the radial K(r, s); 'pointwise' and 'library'
    wrap k(u, v) acting on point clouds: fn(U, V) with U (m, d), V (k, d)
    returns the (m, k) cross matrix.
    """

    kind: str
    fn: Callable = field(repr=False)
    params: dict = field(default_factory=dict)
    name: str | None = None
    expected: str | None = None  # declared verdict for library kernels


def make_gaussian_pair_kernel(lam: float, d: int, rtol: float = 1e-14,
                              kmax: int = 201) -> KernelHandle:
    if d == 1:
        fn = lambda r, s: gaussian_pair_kernel(lam, 1, r, s)
    else:
        fn = lambda r, s: gaussian_pair_kernel_series(lam, d, r, s, rtol, kmax)
    return KernelHandle(kind="gaussian-pair", fn=fn,
                        params={"lam": lam, "d": d, "rtol": rtol, "kmax": kmax})


def radial_pointwise(g: Callable, name=None, expected=None, params=None) -> KernelHandle:
    """Pointwise kernel k(u, v) = g(|u - v|)."""

    def fn(U, V):
        U = np.atleast_2d(np.asarray(U, float))
        V = np.atleast_2d(np.asarray(V, float))
        diff = U[:, None, :] - V[None, :, :]
        return g(np.sqrt(np.sum(diff * diff, axis=-1)))

    return KernelHandle(kind="pointwise", fn=fn, name=name, expected=expected,
                        params=params or {})


def inner_product_kernel() -> KernelHandle:
    def fn(U, V):
        return np.atleast_2d(np.asarray(U, float)) @ np.atleast_2d(np.asarray(V, float)).T

    return KernelHandle(kind="pointwise", fn=fn, name="inner-product", expected="PD")


def power_exponential_kernel(t: float, beta: float) -> KernelHandle:
    """k(u, v) = exp(-t |u - v|^(2 beta))."""
    if not t > 0 or not beta > 0:
        raise ValueError("need t > 0 and beta > 0")
    return radial_pointwise(
        lambda rr: np.exp(-t * rr ** (2.0 * beta)),
        name=f"power-exponential(t={t}, beta={beta})",
        params={"t": t, "beta": beta},
    )


def nd_kernel_library(name: str, a: float = 1.0, alpha: float = 1.0,
                      gamma: float = 1.0, c: float = 1.0, k: int = 1) -> KernelHandle:
    """Radial kernels with known negative/positive-definiteness verdicts.

    phi1 = (a + t^alpha)^gamma and phi2 = log(1 + (a + t^alpha)^gamma) are
    negative definite for a >= 0, alpha in (0, 2], gamma in (0, 1]; their
    exponentials exp(-c phi_i) and the inverse powers phi2^{-k} (a > 0,
    integer k >= 1) are positive definite.
    """
    if a < 0 or not 0 < alpha <= 2 or not 0 < gamma <= 1:
        raise ValueError("require a >= 0, alpha in (0, 2], gamma in (0, 1]")

    def phi1(t):
        return (a + t ** alpha) ** gamma

    def phi2(t):
        return np.log1p(phi1(t))

    params = {"a": a, "alpha": alpha, "gamma": gamma}
    if name == "phi1":
        return radial_pointwise(phi1, name="phi1", expected="ND", params=params)
    if name == "phi2":
        return radial_pointwise(phi2, name="phi2", expected="ND", params=params)
    if name == "exp-neg-phi1":
        if not c > 0:
            raise ValueError("require c > 0")
        return radial_pointwise(lambda t: np.exp(-c * phi1(t)), name="exp-neg-phi1",
                                expected="PD", params={**params, "c": c})
    if name == "exp-neg-phi2":
        if not c > 0:
            raise ValueError("require c > 0")
        return radial_pointwise(lambda t: np.exp(-c * phi2(t)), name="exp-neg-phi2",
                                expected="PD", params={**params, "c": c})
    if name == "phi2-inverse-power":
        if not (isinstance(k, (int, np.integer)) and k >= 1):
            raise ValueError("require integer k >= 1")
        if not a > 0:
            raise ValueError("phi2-inverse-power requires a > 0 (phi2(0) > 0)")
        return radial_pointwise(lambda t: phi2(t) ** (-float(k)),
                                name="phi2-inverse-power", expected="PD",
                                params={**params, "k": int(k)})
    raise ValueError(f"unknown library kernel {name!r}")


def nd_potential(name: str, a: float = 1.0, alpha: float = 1.0, gamma: float = 1.0):
    """(Phi0, Phi0') callables for using a library kernel as a potential
    perturbation. alpha >= 1 keeps the derivative bounded at 0."""
    if a < 0 or not 0 < alpha <= 2 or not 0 < gamma <= 1:
        raise ValueError("require a >= 0, alpha in (0, 2], gamma in (0, 1]")

    def phi1(t):
        t = np.asarray(t, float)
        return (a + t ** alpha) ** gamma

    def dphi1(t):
        t = np.asarray(t, float)
        return gamma * (a + t ** alpha) ** (gamma - 1.0) * alpha * t ** (alpha - 1.0)

    if name == "phi1":
        return phi1, dphi1
    if name == "phi2":
        return (lambda t: np.log1p(phi1(t)),
                lambda t: dphi1(t) / (1.0 + phi1(t)))
    raise ValueError("potential perturbations come from 'phi1' or 'phi2'")


# ---------------------------------------------------------------------------
# point-cloud samplers for Gram trials


def gaussian_cloud(d: int, scale: float = 1.0):
    return lambda rng, n: scale * rng.standard_normal((n, d))


def uniform_cloud(d: int, half_width: float = 1.0):
    return lambda rng, n: rng.uniform(-half_width, half_width, size=(n, d))


def fixed_cloud(points):
    pts = np.atleast_2d(np.asarray(points, float))
    return lambda rng, n: pts


# ---------------------------------------------------------------------------
# Gram matrix definiteness tests


@dataclass(frozen=True, eq=False)
class GramTestResult:
    test: str  # 'pd' or 'nd'
    extreme_eigs: np.ndarray  # min eigs (pd) or max constrained eigs (nd)
    tolerances: np.ndarray
    verdict: str  # PASS | FAIL | MARGINAL
    kernel_name: str | None = None

    def to_dict(self):
        return {
            "test": self.test,
            "verdict": self.verdict,
            "kernel": self.kernel_name,
            "extreme_eigs": [float(x) for x in self.extreme_eigs],
            "tolerances": [float(x) for x in self.tolerances],
        }


def _kernel_fn(kernel):
    if isinstance(kernel, KernelHandle):
        if kernel.kind == "gaussian-pair":
            raise ValueError("gram tests need a pointwise kernel")
        return kernel.fn, kernel.name
    return kernel, None


def _check_symmetry(fn, rng, d_probe):
    pts = rng.standard_normal((8, d_probe))
    mat = np.asarray(fn(pts, pts), float)
    scale = max(1.0, float(np.abs(mat).max()))
    if np.abs(mat - mat.T).max() > 1e-12 * scale:
        raise ValueError("kernel is not symmetric on sampled pairs")


def gram_pd_test(kernel, sampler, n: int, trials: int, seed: int = 0,
                 fail_threshold: float = 1e-6) -> GramTestResult:
    """Positive-definiteness check on sampled Gram matrices.

    PASS requires every minimum eigenvalue >= -n * 1e-12 * max|entry|;
    a FAIL verdict needs an eigenvalue below -``fail_threshold`` so that
    floating-point noise cannot refute a kernel.
    """
    fn, name = _kernel_fn(kernel)
    probe = sampler(derive_rng(seed, _PD_KEY, 0), n)
    _check_symmetry(fn, derive_rng(seed, _PD_KEY, 0), probe.shape[1])
    mins, tols = [], []
    for t in range(trials):
        pts = sampler(derive_rng(seed, _PD_KEY, t), n)
        mat = np.asarray(fn(pts, pts), float)
        mat = 0.5 * (mat + mat.T)
        eigs = np.linalg.eigvalsh(mat)
        mins.append(eigs[0])
        tols.append(len(pts) * 1e-12 * max(1e-300, float(np.abs(mat).max())))
    mins = np.asarray(mins)
    tols = np.asarray(tols)
    if np.all(mins >= -tols):
        verdict = "PASS"
    elif np.any(mins <= -fail_threshold):
        verdict = "FAIL"
    else:
        verdict = "MARGINAL"
    return GramTestResult("pd", mins, tols, verdict, name)


def gram_nd_test(kernel, sampler, n: int, trials: int, seed: int = 0,
                 fail_threshold: float = 1e-6) -> GramTestResult:
    """Negative-definiteness check on the zero-sum subspace.

    The Gram matrix is projected with P = I - 11^T/n; PASS requires the
    maximum eigenvalue of P K P to stay below the floating-point tolerance.
    """
    fn, name = _kernel_fn(kernel)
    probe = sampler(derive_rng(seed, _PD_KEY, 0), n)
    _check_symmetry(fn, derive_rng(seed, _PD_KEY, 0), probe.shape[1])
    maxs, tols = [], []
    for t in range(trials):
        pts = sampler(derive_rng(seed, _PD_KEY, t), n)
        mat = np.asarray(fn(pts, pts), float)
        mat = 0.5 * (mat + mat.T)
        m = len(pts)
        proj = np.eye(m) - np.full((m, m), 1.0 / m)
        eigs = np.linalg.eigvalsh(proj @ mat @ proj)
        maxs.append(eigs[-1])
        tols.append(m * 1e-12 * max(1e-300, float(np.abs(mat).max())))
    maxs = np.asarray(maxs)
    tols = np.asarray(tols)
    if np.all(maxs <= tols):
        verdict = "PASS"
    elif np.any(maxs >= fail_threshold):
        verdict = "FAIL"
    else:
        verdict = "MARGINAL"
    return GramTestResult("nd", maxs, tols, verdict, name)


def scan_power_kernel_violation(beta: float, d: int = 1, t_grid=None,
                                seed: int = 0) -> dict:
    """Search for a Gram matrix refuting positive-definiteness of
    exp(-t |u-v|^(2 beta)).

    Scans a dyadic t grid against a small point-set library (the {0, 1, 2}
    lattice direction, a longer arithmetic progression, and random clouds);
    existence is guaranteed for beta > 1 but no location is, hence the scan.
    """
    ts = np.asarray(2.0 ** np.arange(-6, 7) if t_grid is None else t_grid, float)
    ones = np.ones(d)
    clouds = {
        "lattice-012": np.outer([0.0, 1.0, 2.0], ones),
        "lattice-05": np.outer(np.arange(5.0), ones),
    }
    rng = derive_rng(seed, _PD_KEY, 99)
    for j in range(3):
        clouds[f"random-{j}"] = 1.5 * rng.standard_normal((8, d))
    best = {"found": False, "min_eig": np.inf, "t": None, "points": None}
    for t in ts:
        handle = power_exponential_kernel(float(t), beta)
        for label, pts in clouds.items():
            mat = handle.fn(pts, pts)
            low = float(np.linalg.eigvalsh(0.5 * (mat + mat.T))[0])
            if low < best["min_eig"]:
                best.update(min_eig=low, t=float(t), points=label)
    best["found"] = best["min_eig"] <= -1e-6
    return best


# ---------------------------------------------------------------------------
# quadrature evaluation of the bilinear form


def _gl_nodes(edges, order):
    x, w = np.polynomial.legendre.leggauss(order)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * np.diff(edges)
    nodes = (mid[:, None] + half[:, None] * x).ravel()
    weights = (half[:, None] * w).ravel()
    return nodes, weights


def _split_panels(edges):
    mid = 0.5 * (edges[1:] + edges[:-1])
    return np.sort(np.concatenate([edges, mid]))


def kernel_quadrature_form(kernel, density, basis: BasisFamily,
                           rtol: float = 1e-8, tail_mass: float = 1e-10,
                           order: int = 12, max_refine: int = 6) -> GramPair:
    """Deterministic counterpart of the Monte Carlo Gram pair.

    B_pq = iint psi_p(r) psi_q(s) K(r, s) q(r) q(s) dr ds and
    G_pq = int psi_p psi_q q dr, by composite Gauss-Legendre panels aligned
    with the basis breakpoints (and histogram edges), refined by doubling
    until successive values agree to ``rtol``.
    """
    if basis.mode != "radial":
        raise ValueError("quadrature form is defined for radial bases")
    if isinstance(kernel, KernelHandle):
        kfn = kernel.fn
    else:
        kfn = kernel
    if isinstance(density, EmpiricalDistanceMeasure):
        r_max = float(density.edges[-1])
        dens_edges = density.edges
        dens = density.densities

        def q(r):
            idx = np.clip(np.searchsorted(dens_edges, r, side="right") - 1,
                          0, len(dens) - 1)
            out = dens[idx]
            return np.where((r < dens_edges[0]) | (r > dens_edges[-1]), 0.0, out)

        base = dens_edges
    elif isinstance(density, GaussianDistanceDensity):
        r_max = density.domain_radius(tail_mass)
        q = density
        base = np.array([0.0, r_max])
    else:
        raise TypeError("density must be GaussianDistanceDensity or "
                        "EmpiricalDistanceMeasure")

    bp = np.asarray(basis.breakpoints, float)
    edges = np.unique(np.concatenate([
        base, [0.0, r_max], bp[(bp > 0) & (bp < r_max)],
    ]))
    edges = edges[(edges >= 0) & (edges <= r_max)]

    def evaluate(panel_edges):
        nodes, weights = _gl_nodes(panel_edges, order)
        design = basis.design_matrix(nodes)
        qw = np.asarray(q(nodes), float) * weights
        scaled = design * qw[:, None]
        kmat = np.asarray(kfn(nodes[:, None], nodes[None, :]), float)
        b = scaled.T @ kmat @ scaled
        g = design.T @ (design * qw[:, None])
        return 0.5 * (b + b.T), 0.5 * (g + g.T)

    b_prev, g_prev = evaluate(edges)
    err = np.inf
    for _ in range(max_refine):
        edges = _split_panels(edges)
        b_new, g_new = evaluate(edges)
        scale = max(float(np.abs(b_new).max()), float(np.abs(g_new).max()), 1e-300)
        err = max(float(np.abs(b_new - b_prev).max()),
                  float(np.abs(g_new - g_prev).max())) / scale
        b_prev, g_prev = b_new, g_new
        if err <= rtol:
            break
    else:
        raise QuadratureError(
            f"panel refinement stalled at relative error {err:.2e} (> {rtol:.0e})"
        )
    return GramPair(
        b=b_prev, g=g_prev, basis=basis, mode="quadrature", N=3,
        n_triples=0, quad_error=err,
    )


# ---------------------------------------------------------------------------
# Gamma representation of the power function


def gamma_representation_check(beta: float, x: float, epsrel: float = 1e-12) -> float:
    """Relative error of the identity
    x^(2 beta) = beta/Gamma(1-beta) * int_0^inf (1 - exp(-l x^2)) l^(-beta-1) dl.

    The substitution l = exp(s) tames both endpoints; the exponential tails
    are added in closed form.
    """
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    if not x > 0:
        raise ValueError("x must be positive")
    s_lo = np.log(1e-9) - 2.0 * np.log(x)
    s_hi = np.log(45.0) - 2.0 * np.log(x)

    def f(s):
        return (1.0 - np.exp(-np.exp(s) * x * x)) * np.exp(-beta * s)

    mid, abserr = integrate.quad(f, s_lo, s_hi, limit=400, epsabs=0.0, epsrel=epsrel)
    right = np.exp(-beta * s_hi) / beta
    left = sum(cj * x ** (2 * j) * np.exp((j - beta) * s_lo) / (j - beta)
               for j, cj in ((1, 1.0), (2, -0.5), (3, 1.0 / 6.0)))
    value = (mid + right + left) * beta / special.gamma(1.0 - beta)
    target = x ** (2.0 * beta)
    if abserr > 1e-6 * abs(value):
        raise QuadratureError("improper integral did not converge")
    return abs(value - target) / target


# ---------------------------------------------------------------------------
# comparison bound for perturbed power potentials (d = 1)


@dataclass(frozen=True)
class ComparisonBoundResult:
    value: float        # the coercivity integral I under the stationary weight
    lower_bound: float  # Gaussian-comparison lower bound
    holds: bool
    quad_error: float


def comparison_bound_check(a: float, beta: float, phi0, h,
                           r_max: float, base_panels: int = 24,
                           order: int = 12, max_refine: int = 4,
                           rtol: float = 1e-7) -> ComparisonBoundResult:
    """Check I >= lower bound for Phi(r) = a r^(2 beta) + Phi0(r) in d = 1.

    I = iint h(|u|) h(|v|) sign(uv) e^{-(2/3)[Phi(|u|)+Phi(|v|)+Phi(|u-v|)]},
    and the bound replaces the u-v factor by e^{-(2/3) a |u-v|^(2 beta)} while
    folding e^{-(2/3)(Phi+Phi0)} into the test function. Both sides reduce to
    the first quadrant by symmetry and are evaluated on one tensor grid.
    """
    if not a > 0 or not 0 < beta <= 1:
        raise ValueError("need a > 0 and beta in (0, 1]")
    if phi0 is None:
        phi0 = lambda r: np.zeros_like(np.asarray(r, float))
    two3 = 2.0 / 3.0

    def phi_total(r):
        return a * r ** (2.0 * beta) + phi0(r)

    def evaluate(edges):
        nodes, weights = _gl_nodes(edges, order)
        hv = np.asarray(h(nodes), float)
        pt = phi_total(nodes)
        f = hv * np.exp(-two3 * pt) * weights
        g = hv * np.exp(-two3 * (pt + phi0(nodes))) * weights
        rm = np.abs(nodes[:, None] - nodes[None, :])
        rp = nodes[:, None] + nodes[None, :]
        k_full = np.exp(-two3 * phi_total(rm)) - np.exp(-two3 * phi_total(rp))
        k_pow = (np.exp(-two3 * a * rm ** (2.0 * beta))
                 - np.exp(-two3 * a * rp ** (2.0 * beta)))
        return 2.0 * float(f @ k_full @ f), 2.0 * float(g @ k_pow @ g)

    edges = np.linspace(0.0, float(r_max), base_panels + 1)
    i_prev, lb_prev = evaluate(edges)
    err = np.inf
    for _ in range(max_refine):
        edges = _split_panels(edges)
        i_new, lb_new = evaluate(edges)
        scale = max(abs(i_new), abs(lb_new), 1e-300)
        err = max(abs(i_new - i_prev), abs(lb_new - lb_prev)) / scale
        i_prev, lb_prev = i_new, lb_new
        if err <= rtol:
            break
    else:
        raise QuadratureError(
            f"comparison-bound quadrature stalled at relative error {err:.2e}"
        )
    scale = max(abs(i_prev), abs(lb_prev), 1e-12)
    tol = max(10.0 * err * scale, 1e-12 * scale)
    return ComparisonBoundResult(i_prev, lb_prev, bool(i_prev >= lb_prev - tol), err)


# ---------------------------------------------------------------------------
# exports


def kernel_grid_to_csv(kernel: KernelHandle, r_values, s_values, path) -> None:
    """(r, s, K) rows for plotting a radial pair kernel on a grid."""
    if kernel.kind != "gaussian-pair":
        raise ValueError("grid export is for radial pair kernels")
    r = np.asarray(r_values, float)
    s = np.asarray(s_values, float)
    kmat = np.asarray(kernel.fn(r[:, None], s[None, :]), float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "s", "K"])
        for i, rv in enumerate(r):
            for j, sv in enumerate(s):
                w.writerow([repr(float(rv)), repr(float(sv)), repr(float(kmat[i, j]))])
