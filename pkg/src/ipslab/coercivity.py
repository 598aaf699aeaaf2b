"""Monte Carlo Gram pairs, coercivity constants as generalized eigenvalues,
identifiability margins, the triple decomposition of the gradient energy,
and the relation between the old and new coercivity constants.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._rng import derive_rng
from .core import BasisFamily, custom_basis, pairwise_force
from .errors import BasisSupportError, IllConditionedGramError
from .measures import (DEFAULT_BINS, EmpiricalDistanceMeasure, empirical_rho,
                       l2_inner, pairwise_distances)
from .simulate import PairSampleSet, TrajectoryEnsemble

_BOOT_KEY = 5
_DROP_MASS = 1e-8
_COND_MAX = 1e10


# ---------------------------------------------------------------------------
# containers


@dataclass(frozen=True, eq=False)
class GramPair:
    """Bilinear-form matrix B and basis Gram G estimated on shared data.

    ``unit_b``/``unit_g`` hold per-unit (trajectory or sample-block) versions
    for bootstrap resampling; quadrature-built pairs carry ``quad_error``
    instead.
    """

    b: np.ndarray
    g: np.ndarray
    basis: BasisFamily
    mode: str                       # 'interval' | 'time' | 'quadrature'
    N: int
    n_triples: int
    time: float | None = None
    b_std_err: np.ndarray | None = None
    unit_b: np.ndarray | None = field(default=None, repr=False)
    unit_g: np.ndarray | None = field(default=None, repr=False)
    measure: EmpiricalDistanceMeasure | None = None
    quad_error: float | None = None


@dataclass(frozen=True, eq=False)
class CoercivityReport:
    constant: float
    ci_low: float | None
    ci_high: float | None
    std_err: float | None
    margin: float
    identifiable: bool
    N: int
    mode: str
    time: float | None
    basis_info: dict
    dropped: list
    cond_g: float
    n_triples: int
    n_boot: int

    def to_dict(self) -> dict:
        return {
            "constant": self.constant,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "std_err": self.std_err,
            "margin": self.margin,
            "identifiable": self.identifiable,
            "N": self.N,
            "mode": self.mode,
            "time": self.time,
            "basis": self.basis_info,
            "dropped_members": self.dropped,
            "cond_g": self.cond_g,
            "n_triples": self.n_triples,
            "n_boot": self.n_boot,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# shared per-snapshot statistics
#
# For vertex i with neighbors j, k the ordered-distinct-triple average of
# psi_p psi_q cos splits as sum_i [V_p(i).V_q(i) - W_pq(i)] where
# V_p(i) = sum_j psi_p(r_ij) unit_ij and W collects the coincident j = k
# terms; (1/N)|grad J_h|^2 recombines from the same pieces.


def _snapshot_stats(x, basis, radial):
    """Triple and pair forms per snapshot.

    x: (S, N, d). Returns (bb, ww): bb the ordered distinct-triple mean of
    psi_p psi_q cos, ww the ordered-pair mean of psi_p psi_q (both (S, n, n));
    zero-separation pairs contribute nothing to either.
    """
    n_particles = x.shape[-2]
    diff = x[..., None, :, :] - x[..., :, None, :]  # (..., i, j, d) = x_j - x_i
    rr = np.sqrt(np.sum(diff * diff, axis=-1))
    mask = rr > 0
    inv = np.zeros_like(rr)
    inv[mask] = 1.0 / rr[mask]
    unit = diff * inv[..., None]
    if radial:
        psi = basis.design_matrix(rr)
    else:
        psi = basis.design_matrix(-diff)  # vertex-to-neighbor orientation
    psi = psi * mask[..., None]
    v = np.einsum("...ijp,...ijd->...ipd", psi, unit)
    vv = np.einsum("...ipd,...iqd->...pq", v, v)
    ww_full = np.einsum("...ijp,...ijq->...pq", psi, psi)
    triples = n_particles * (n_particles - 1) * (n_particles - 2)
    pairs = n_particles * (n_particles - 1)
    return (vv - ww_full) / triples, ww_full / pairs


def _ensemble_units(ensemble, basis, snap_idx, workers=1, budget=6_000_000):
    """Per-trajectory means of the triple and pair forms."""
    pos = ensemble.positions[:, snap_idx]
    M, S, N, d = pos.shape
    n = basis.n
    radial = basis.mode == "radial"
    unit_b = np.empty((M, n, n))
    unit_w = np.empty((M, n, n))
    s_block = max(1, min(S, budget // max(1, N * N * max(n, d))))

    def worker(span):
        lo, hi = span
        for m in range(lo, hi):
            acc_b = np.zeros((n, n))
            acc_w = np.zeros((n, n))
            for s0 in range(0, S, s_block):
                bb, ww = _snapshot_stats(pos[m, s0:s0 + s_block], basis, radial)
                acc_b += bb.sum(axis=0)
                acc_w += ww.sum(axis=0)
            unit_b[m] = acc_b / S
            unit_w[m] = acc_w / S

    step = max(1, -(-M // max(1, 4 * int(workers or 1))))
    spans = [(lo, min(lo + step, M)) for lo in range(0, M, step)]
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=int(workers)) as ex:
            list(ex.map(worker, spans))
    else:
        for span in spans:
            worker(span)
    return unit_b, unit_w


def _ensemble_pair_data(ensemble, snap_idx, radial):
    """Per-trajectory ordered-pair data: distances (radial) or vectors."""
    pos = ensemble.positions[:, snap_idx]
    M, S, N, d = pos.shape
    iu, ju = np.nonzero(~np.eye(N, dtype=bool))
    for m in range(M):
        diff = pos[m][:, ju, :] - pos[m][:, iu, :]
        flat = diff.reshape(-1, d)
        yield np.sqrt(np.sum(flat * flat, axis=1)) if radial else flat


def _pair_triple_vectors(u, v):
    """Vertex-oriented difference pairs of the reconstructed 3-particle
    configuration: (r12, r13), (r21, r23), (r31, r32)."""
    return ((u, v), (-u, v - u), (-v, u - v))


def _resolve_snapshots(ensemble, mode, time):
    if mode == "interval":
        return np.arange(ensemble.n_snapshots), None
    if mode == "time":
        if time is None:
            raise ValueError("single-time mode needs a time")
        l = ensemble.snapshot_index(time)
        return np.array([l]), float(ensemble.times[l])
    raise ValueError("mode must be 'interval' or 'time'")


def _pair_block_contrib(u, v, basis, radial, vertices):
    """Symmetrized triple-form contribution per pair sample, (m, n, n)."""
    pair_list = (_pair_triple_vectors(u, v) if vertices == "all"
                 else ((u, v),))
    m = u.shape[0]
    n = basis.n
    out = np.zeros((m, n, n))
    for a, b in pair_list:
        ra = np.sqrt(np.sum(a * a, axis=1))
        rb = np.sqrt(np.sum(b * b, axis=1))
        ok = (ra > 0) & (rb > 0)
        cos = np.zeros(m)
        cos[ok] = np.sum(a * b, axis=1)[ok] / (ra[ok] * rb[ok])
        pa = basis.design_matrix(ra if radial else a)
        pb = basis.design_matrix(rb if radial else b)
        out += cos[:, None, None] * pa[:, :, None] * pb[:, None, :]
    out /= len(pair_list)
    return 0.5 * (out + np.swapaxes(out, 1, 2))


def assemble_gram_pair(data, basis: BasisFamily, mode: str = "interval",
                       time: float | None = None, bins: int = DEFAULT_BINS,
                       workers: int = 1, n_unit_blocks: int = 256,
                       vertices: str = "all") -> GramPair:
    """Monte Carlo Gram pair from an ensemble or a pair-sample set.

    B averages psi_p psi_q times the angle cosine over all ordered distinct
    triples (all trajectories; all snapshots in interval mode, the snapshot
    nearest ``time`` otherwise); triples with a zero-length difference vector
    contribute nothing. G is the basis Gram under the empirical distance
    measure of the same data. Members with zero empirical mass are rejected.

    Pair samples are treated as reconstructed 3-particle snapshots; by the
    exchangeability of the targeted laws all three vertices are averaged
    (``vertices="first"`` keeps only the sampled (u, v) vertex).
    """
    radial = basis.mode == "radial"
    if isinstance(data, TrajectoryEnsemble):
        if data.config.N < 3:
            raise ValueError("Gram assembly needs N >= 3 for distinct triples")
        if not radial and data.config.d > 2:
            raise ValueError("non-radial bases are restricted to d <= 2")
        snap_idx, actual_time = _resolve_snapshots(data, mode, time)
        unit_b, _ = _ensemble_units(data, basis, snap_idx, workers)
        n_particles = data.config.N
        n_triples = (data.M * snap_idx.size
                     * n_particles * (n_particles - 1) * (n_particles - 2))
        pair_chunks = list(_ensemble_pair_data(data, snap_idx, radial))
    elif isinstance(data, PairSampleSet):
        if vertices not in ("all", "first"):
            raise ValueError("vertices must be 'all' or 'first'")
        if not radial and data.d > 2:
            raise ValueError("non-radial bases are restricted to d <= 2")
        actual_time = time
        n_units = int(min(n_unit_blocks, data.M))
        blocks = np.array_split(np.arange(data.M), n_units)
        unit_b = np.empty((n_units, basis.n, basis.n))
        pair_chunks = []
        w = data.u - data.v
        for k, blk in enumerate(blocks):
            u, v = data.u[blk], data.v[blk]
            unit_b[k] = _pair_block_contrib(u, v, basis, radial, vertices).mean(axis=0)
            if radial:
                pair_chunks.append(np.concatenate([
                    np.linalg.norm(u, axis=1),
                    np.linalg.norm(v, axis=1),
                    np.linalg.norm(w[blk], axis=1),
                ]))
            else:
                pair_chunks.append(np.concatenate(
                    [u, -u, v, -v, w[blk], -w[blk]]))
        n_particles = 3
        n_triples = data.M * (6 if vertices == "all" else 2)
    else:
        raise TypeError("data must be a TrajectoryEnsemble or PairSampleSet")

    # G under the empirical distance measure of the same data
    if radial:
        r_max = max(float(np.max(c, initial=0.0)) for c in pair_chunks)
        hi = 1.05 * r_max if r_max > 0 else 1.0
        edges = np.linspace(0.0, hi, int(bins) + 1)
        counts = np.stack([np.histogram(c, bins=edges)[0] for c in pair_chunks])
        total = counts.sum()
        measure = EmpiricalDistanceMeasure(
            edges=edges, masses=counts.sum(axis=0) / total,
            kind="time-averaged" if mode == "interval" else "single-time",
            n_samples=int(total), time=actual_time,
        )
        design_mid = basis.design_matrix(measure.midpoints)
        per = counts / counts.sum(axis=1, keepdims=True)
        unit_g = np.einsum("ub,bp,bq->upq", per, design_mid, design_mid)
        g = design_mid.T @ (design_mid * measure.masses[:, None])
    else:
        measure = None
        unit_g = np.stack([
            basis.design_matrix(c).T @ basis.design_matrix(c) / len(c)
            for c in pair_chunks
        ])
        g = unit_g.mean(axis=0)

    g = 0.5 * (g + g.T)
    zero_mass = [int(p) for p in range(basis.n) if g[p, p] == 0.0]
    if zero_mass:
        raise BasisSupportError(zero_mass)
    b_mean = unit_b.mean(axis=0)
    se = (unit_b.std(axis=0, ddof=1) / np.sqrt(len(unit_b))
          if len(unit_b) > 1 else None)
    return GramPair(
        b=0.5 * (b_mean + b_mean.T), g=g, basis=basis, mode=mode,
        N=n_particles, n_triples=int(n_triples), time=actual_time,
        b_std_err=se, unit_b=unit_b, unit_g=unit_g, measure=measure,
    )


# ---------------------------------------------------------------------------
# generalized eigenvalue machinery


def _whiten(g, cond_max=_COND_MAX, clip=False):
    evals, vecs = np.linalg.eigh(0.5 * (g + g.T))
    if clip:
        evals = np.maximum(evals, 1e-14 * max(evals[-1], 1e-300))
    if evals[0] <= 0 or evals[-1] / evals[0] > cond_max:
        cond = np.inf if evals[0] <= 0 else evals[-1] / evals[0]
        raise IllConditionedGramError(
            f"G condition number {cond:.3e} exceeds {cond_max:.0e}; "
            "refusing to regularize silently"
        )
    return vecs @ np.diag(evals ** -0.5) @ vecs.T, float(evals[-1] / evals[0])


def min_generalized_eig(b, g, cond_max=_COND_MAX, clip=False) -> float:
    """Smallest eigenvalue of (B, G) via symmetric factorization of G."""
    w, _ = _whiten(np.asarray(g, float), cond_max, clip)
    b = np.asarray(b, float)
    m = w @ (0.5 * (b + b.T)) @ w
    return float(np.linalg.eigvalsh(0.5 * (m + m.T))[0])


def _keep_indices(gram):
    diag = np.diag(gram.g)
    keep = np.nonzero(diag >= _DROP_MASS)[0]
    dropped = [int(p) for p in np.nonzero(diag < _DROP_MASS)[0]]
    if keep.size == 0:
        raise BasisSupportError(dropped, "all basis members lost empirical mass")
    return keep, dropped


def coercivity_constant(gram: GramPair, n_boot: int = 200, seed: int = 0,
                        ci_level: float = 0.95) -> CoercivityReport:
    """Coercivity constant with a bootstrap confidence interval.

    The constant is the minimum generalized eigenvalue of (B, G) restricted
    to basis members with empirical mass >= 1e-8 (dropped members are
    reported). Units are resampled with replacement for the percentile
    interval; an ill-conditioned G (condition number > 1e10) raises instead
    of being silently regularized.
    """
    keep, dropped = _keep_indices(gram)
    sub = np.ix_(keep, keep)
    w, cond = _whiten(gram.g[sub])
    mat = w @ (0.5 * (gram.b[sub] + gram.b[sub].T)) @ w
    point = float(np.linalg.eigvalsh(0.5 * (mat + mat.T))[0])
    lo = hi = se = None
    if gram.unit_b is not None and len(gram.unit_b) > 1 and n_boot > 0:
        rng = derive_rng(seed, _BOOT_KEY)
        n_units = len(gram.unit_b)
        ub = gram.unit_b[:, keep[:, None], keep[None, :]]
        ug = gram.unit_g[:, keep[:, None], keep[None, :]]
        vals = np.empty(n_boot)
        for r in range(n_boot):
            idx = rng.integers(0, n_units, size=n_units)
            vals[r] = min_generalized_eig(ub[idx].mean(axis=0),
                                          ug[idx].mean(axis=0), clip=True)
        alpha = 0.5 * (1.0 - ci_level)
        lo = float(min(np.quantile(vals, alpha), point))
        hi = float(max(np.quantile(vals, 1.0 - alpha), point))
        se = float(vals.std(ddof=1))
    elif gram.quad_error is not None:
        se = float(gram.quad_error * max(1.0, abs(point)))
    margin = point + 1.0 / (gram.N - 2) if gram.N > 2 else np.inf
    return CoercivityReport(
        constant=point, ci_low=lo, ci_high=hi, std_err=se,
        margin=float(margin), identifiable=bool(margin > 0), N=gram.N,
        mode=gram.mode, time=gram.time, basis_info=gram.basis.describe(),
        dropped=dropped, cond_g=cond, n_triples=gram.n_triples, n_boot=n_boot,
    )


@dataclass(frozen=True)
class MarginResult:
    constant: float
    margin: float
    identifiable: bool
    N: int


def identifiability_margin(gram: GramPair, N: int | None = None) -> MarginResult:
    """Margin of the identifiability inequality: min eig + 1/(N - 2) > 0."""
    n_particles = gram.N if N is None else int(N)
    if n_particles < 3:
        raise ValueError("identifiability margin needs N >= 3")
    keep, _ = _keep_indices(gram)
    sub = np.ix_(keep, keep)
    const = min_generalized_eig(gram.b[sub], gram.g[sub])
    margin = const + 1.0 / (n_particles - 2)
    return MarginResult(const, float(margin), bool(margin > 0), n_particles)


# ---------------------------------------------------------------------------
# triple decomposition of the gradient energy


@dataclass(frozen=True)
class TripleDecomposition:
    avg_i123: float
    avg_i122: float
    l2_norm_sq: float
    recombined: float   # (N-1)(N-2)/N^2 I123 + (N-1)/N^2 I122
    direct: float       # (1/TN) int E|grad J_h|^2 from drift evaluations
    se_i123: float
    se_i122: float
    se_direct: float
    N: int


def triple_decomposition(ensemble: TrajectoryEnsemble, h: Callable,
                         bins: int = DEFAULT_BINS,
                         workers: int = 1) -> TripleDecomposition:
    """Time-averaged I123/I122 estimates, their recombination, and the same
    gradient energy computed independently from drift evaluations."""
    if ensemble.config.N < 3:
        raise ValueError("triple decomposition needs N >= 3")
    basis = custom_basis([h], 0.0, 1.0)
    snap_idx = np.arange(ensemble.n_snapshots)
    unit_b, unit_w = _ensemble_units(ensemble, basis, snap_idx, workers)
    i123 = unit_b[:, 0, 0]
    i122 = unit_w[:, 0, 0]
    n_particles = ensemble.config.N

    # independent route: drift evaluations, (1/N) |grad J_h|^2 per snapshot
    pos = ensemble.positions
    direct_units = np.empty(ensemble.M)
    for m in range(ensemble.M):
        force = pairwise_force(h, pos[m])  # (S, N, d)
        direct_units[m] = np.mean(np.sum(force * force, axis=(1, 2))) / n_particles
    c123 = (n_particles - 1) * (n_particles - 2) / n_particles ** 2
    c122 = (n_particles - 1) / n_particles ** 2
    rec = c123 * i123.mean() + c122 * i122.mean()
    dist = pairwise_distances(ensemble, "all")
    norm_sq = l2_inner(empirical_rho(dist, bins), h, h)

    def se(x):
        return float(x.std(ddof=1) / np.sqrt(len(x))) if len(x) > 1 else 0.0

    return TripleDecomposition(
        avg_i123=float(i123.mean()), avg_i122=float(i122.mean()),
        l2_norm_sq=float(norm_sq), recombined=float(rec),
        direct=float(direct_units.mean()), se_i123=se(i123), se_i122=se(i122),
        se_direct=se(direct_units), N=n_particles,
    )


# ---------------------------------------------------------------------------
# old/new coercivity-constant relation


def old_coercivity_constant(ensemble: TrajectoryEnsemble, basis: BasisFamily,
                            bins: int = DEFAULT_BINS, n_boot: int = 200,
                            seed: int = 0, workers: int = 1):
    """Infimum of the normalized gradient-energy quadratic form.

    Estimates the earlier-style constant: the minimum over unit-norm h in
    the basis span of (1/(2TN)) int E|grad J_h|^2 dt, via the same Gram
    machinery applied to the gradient form. Returns (value, std_err).
    """
    gram = assemble_gram_pair(ensemble, basis, mode="interval", bins=bins,
                              workers=workers)
    snap_idx = np.arange(ensemble.n_snapshots)
    unit_b, unit_w = _ensemble_units(ensemble, basis, snap_idx, workers)
    n_particles = ensemble.config.N
    c123 = (n_particles - 1) * (n_particles - 2) / n_particles ** 2
    c122 = (n_particles - 1) / n_particles ** 2
    keep, _ = _keep_indices(gram)
    sub = np.ix_(keep, keep)

    def value(bm, wm, g):
        return min_generalized_eig(0.5 * (c123 * bm + c122 * wm), g, clip=True)

    point = value(unit_b.mean(axis=0)[sub], unit_w.mean(axis=0)[sub], gram.g[sub])
    se = 0.0
    if n_boot > 0 and len(unit_b) > 1:
        rng = derive_rng(seed, _BOOT_KEY, 1)
        vals = np.empty(n_boot)
        ub = unit_b[:, keep[:, None], keep[None, :]]
        uw = unit_w[:, keep[:, None], keep[None, :]]
        ug = gram.unit_g[:, keep[:, None], keep[None, :]]
        for r in range(n_boot):
            idx = rng.integers(0, len(ub), size=len(ub))
            vals[r] = value(ub[idx].mean(axis=0), uw[idx].mean(axis=0),
                            ug[idx].mean(axis=0))
        se = float(vals.std(ddof=1))
    return float(point), se


def coercivity_relation_check(c_old: float, c_new: float, N: int,
                              se_old: float = 0.0, se_new: float = 0.0,
                              n_se: float = 3.0) -> bool:
    """Check c_old - (N-1)/(2N^2) <= (N-1)(N-2)/(2N^2) c_new within the
    combined Monte Carlo error of the two estimates."""
    if N < 3:
        raise ValueError("the relation needs N >= 3")
    lhs = c_old - (N - 1) / (2.0 * N * N)
    coef = (N - 1) * (N - 2) / (2.0 * N * N)
    rhs = coef * c_new
    tol = n_se * float(np.hypot(se_old, coef * se_new))
    return bool(lhs <= rhs + tol)
