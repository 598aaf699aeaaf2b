"""Empirical pairwise-distance distributions, weighted inner products, and
sphere moments.

The histogram measure follows numpy's binning convention: bins are closed on
the left and open on the right, with the final bin closed on both ends.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ._rng import derive_rng

DEFAULT_BINS = 200


@dataclass(frozen=True, eq=False)
class EmpiricalDistanceMeasure:
    """Histogram estimate of a pairwise-distance distribution."""

    edges: np.ndarray   # (B+1,), starts at 0
    masses: np.ndarray  # (B,), sums to 1
    kind: str           # 'single-time' or 'time-averaged'
    n_samples: int
    time: float | None = None

    def __post_init__(self):
        edges = np.asarray(self.edges, float)
        masses = np.asarray(self.masses, float)
        if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
            raise ValueError("edges must be strictly increasing")
        if edges[0] != 0.0:
            raise ValueError("distance histograms start at 0")
        if masses.shape != (edges.size - 1,) or np.any(masses < 0):
            raise ValueError("masses must be nonnegative, one per bin")
        if abs(masses.sum() - 1.0) > 1e-12:
            raise ValueError("masses must sum to 1")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "masses", masses)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def densities(self) -> np.ndarray:
        return self.masses / self.widths


def pairwise_distances(ensemble, selector="all") -> np.ndarray:
    """All ordered-pair distances |x_i - x_j| (i != j) of an ensemble.

    ``selector`` is a snapshot index or "all". Ordered pairs mean every
    unordered pair appears twice, matching exchangeability conventions.
    """
    pos = ensemble.positions
    if selector == "all":
        snaps = pos.reshape(-1, pos.shape[-2], pos.shape[-1])
    else:
        l = int(selector)
        if not 0 <= l < pos.shape[1]:
            raise IndexError("snapshot index out of range")
        snaps = pos[:, l]
    n = snaps.shape[-2]
    iu, ju = np.nonzero(~np.eye(n, dtype=bool))
    diff = snaps[:, ju, :] - snaps[:, iu, :]
    return np.sqrt(np.sum(diff * diff, axis=-1)).ravel()


def empirical_rho(samples, bins=DEFAULT_BINS, kind="time-averaged",
                  time=None) -> EmpiricalDistanceMeasure:
    """Histogram measure of nonnegative distance samples.

    ``bins`` is a bin count (uniform bins on [0, 1.05 * max]) or an explicit
    edge array. Samples outside explicit edges are discarded before the
    masses are normalized.
    """
    x = np.ravel(np.asarray(samples, float))
    if x.size == 0:
        raise ValueError("need at least one sample")
    if np.any(x < 0):
        raise ValueError("distance samples must be nonnegative")
    if np.isscalar(bins) or np.ndim(bins) == 0:
        hi = 1.05 * float(x.max())
        if hi <= 0:
            hi = 1.0
        edges = np.linspace(0.0, hi, int(bins) + 1)
    else:
        edges = np.asarray(bins, float)
    counts, edges = np.histogram(x, bins=edges)
    total = counts.sum()
    if total == 0:
        raise ValueError("no samples fall inside the given edges")
    return EmpiricalDistanceMeasure(
        edges=edges, masses=counts / total, kind=kind,
        n_samples=int(x.size), time=time,
    )


def l2_inner(measure: EmpiricalDistanceMeasure, f, g) -> float:
    """Weighted inner product sum_b mass_b f(c_b) g(c_b) at bin midpoints."""
    c = measure.midpoints
    return float(np.sum(measure.masses * np.asarray(f(c), float) * np.asarray(g(c), float)))


def sphere_moment_exact(d: int, k: int) -> float:
    """Exact moment of <xi, eta> over independent uniform sphere points.

    Closed form: zero for odd k; for k = 2m the recursion
    prod_{j<m} (2j+1)/(d+2j). For d = 1 every even moment equals 1.
    """
    if d < 1 or k < 0:
        raise ValueError("need d >= 1 and k >= 0")
    if k % 2 == 1:
        return 0.0
    val = 1.0
    for j in range(k // 2):
        val *= (2 * j + 1) / (d + 2 * j)
    return val


def sphere_moment(d: int, k: int, n_mc: int = 100_000, seed: int = 0) -> float:
    """Monte Carlo estimate of the sphere moment E[<xi, eta>^k].

    d = 1 is enumerated exactly over {-1, +1}^2. Antithetic pairing in xi
    makes odd-k estimates exactly zero.
    """
    if d < 1 or k < 0:
        raise ValueError("need d >= 1 and k >= 0")
    if d == 1:
        return 0.25 * sum((xi * eta) ** k for xi in (-1, 1) for eta in (-1, 1))
    rng = derive_rng(seed, 3)
    xi = rng.standard_normal((n_mc, d))
    eta = rng.standard_normal((n_mc, d))
    xi /= np.linalg.norm(xi, axis=1, keepdims=True)
    eta /= np.linalg.norm(eta, axis=1, keepdims=True)
    t = np.sum(xi * eta, axis=1)
    return float(0.5 * (np.mean(t ** k) + np.mean((-t) ** k)))


def measure_to_csv(measure: EmpiricalDistanceMeasure, path) -> None:
    """Write (bin_lo, bin_hi, mass, density) rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "mass", "density"])
        for lo, hi, m, q in zip(measure.edges[:-1], measure.edges[1:],
                                measure.masses, measure.densities):
            w.writerow([repr(float(lo)), repr(float(hi)), repr(float(m)), repr(float(q))])
