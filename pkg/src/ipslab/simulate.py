"""Trajectory generation: Euler-Maruyama integration, exact Gaussian sampling
of the linear system's centered fluctuations, the reduced three-particle pair
system, and Metropolis sampling of the stationary pair density.

Every trajectory draws from its own stream derived from (seed, index), so
serial and parallel runs are bit-identical for any worker count.
"""
from __future__ import annotations

import csv
import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from ._rng import derive_rng
from .core import InteractionModel, SystemConfig, pairwise_force
from .errors import AcceptanceRateError, BlowUpError

# stream tags
_TRAJ = 0
_INIT = 1
_MCMC = 2

_NOISE_BUDGET = 8_000_000  # floats per pre-drawn noise block


# ---------------------------------------------------------------------------
# ensemble container


@dataclass(frozen=True, eq=False)
class TrajectoryEnsemble:
    """M trajectories of N particles on a uniform stored time grid."""

    positions: np.ndarray  # (M, S, N, d)
    times: np.ndarray      # (S,)
    config: SystemConfig
    seed: int
    provenance: str        # euler-maruyama | exact-linear | pair-system
    model_info: dict | None = None

    def __post_init__(self):
        pos = np.asarray(self.positions, float)
        t = np.asarray(self.times, float)
        if pos.ndim != 4:
            raise ValueError("positions must have shape (M, S, N, d)")
        if t.ndim != 1 or t.size != pos.shape[1]:
            raise ValueError("times must match the snapshot axis")
        if t[0] != 0.0:
            raise ValueError("time grid must start at 0")
        if t.size > 1:
            steps = np.diff(t)
            if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
                raise ValueError("time grid must be uniform and increasing")
        if pos.shape[2] != self.config.N or pos.shape[3] != self.config.d:
            raise ValueError("positions do not match the system configuration")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "times", t)

    @property
    def M(self) -> int:
        return self.positions.shape[0]

    @property
    def n_snapshots(self) -> int:
        return self.positions.shape[1]

    def snapshot_index(self, time: float) -> int:
        """Index of the stored snapshot nearest the requested time."""
        return int(np.argmin(np.abs(self.times - float(time))))


# ---------------------------------------------------------------------------
# initial-distribution descriptors


@dataclass(frozen=True)
class IIDGaussian:
    mean: float = 0.0
    variance: float = 1.0

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError("variance must be positive")


@dataclass(frozen=True)
class ExchangeableGaussian:
    """X_i = Z_i + W with iid Z_i ~ N(0, lambda0 I) and a shared W."""

    lambda0: float
    common_variance: float = 0.0

    def __post_init__(self):
        if not self.lambda0 > 0:
            raise ValueError("lambda0 must be positive")
        if self.common_variance < 0:
            raise ValueError("common variance must be nonnegative")


@dataclass(frozen=True)
class StationaryPairLift:
    """Start N = 3 systems from the stationary pair density (MCMC)."""

    mcmc: "McmcParams | None" = None


@dataclass(frozen=True, eq=False)
class ExplicitSamples:
    positions: np.ndarray  # (N, d) shared or (M, N, d)


InitialDistribution = Union[IIDGaussian, ExchangeableGaussian, StationaryPairLift,
                            ExplicitSamples]


def _draw_initials(config, model, init, M, seed):
    """Initial configurations (M, N, d); per-trajectory streams where iid."""
    N, d = config.N, config.d
    if isinstance(init, IIDGaussian):
        out = np.empty((M, N, d))
        for m in range(M):
            rng = derive_rng(seed, _INIT, m)
            out[m] = init.mean + np.sqrt(init.variance) * rng.standard_normal((N, d))
        return out
    if isinstance(init, ExchangeableGaussian):
        out = np.empty((M, N, d))
        for m in range(M):
            rng = derive_rng(seed, _INIT, m)
            z = np.sqrt(init.lambda0) * rng.standard_normal((N, d))
            w = np.sqrt(init.common_variance) * rng.standard_normal(d)
            out[m] = z + w
        return out
    if isinstance(init, StationaryPairLift):
        if N != 3:
            raise ValueError("the stationary pair lift is defined for N = 3 only")
        params = init.mcmc or McmcParams()
        pairs = sample_stationary_pair(model, d, M, params, seed=_derive_seed(seed, _INIT))
        out = np.zeros((M, N, d))
        out[:, 1] = -pairs.u
        out[:, 2] = -pairs.v
        return out
    if isinstance(init, ExplicitSamples):
        x0 = np.asarray(init.positions, float)
        if x0.ndim == 2:
            x0 = np.broadcast_to(x0, (M,) + x0.shape)
        if x0.shape != (M, N, d):
            raise ValueError("explicit initial positions must have shape (M, N, d)")
        return np.array(x0, float)
    raise TypeError(f"unknown initial distribution {init!r}")


def _derive_seed(seed, *key):
    return int(derive_rng(seed, *key).integers(0, 2 ** 63 - 1))


def _chunks(total, size):
    return [(lo, min(lo + size, total)) for lo in range(0, total, size)]


def _run_chunks(chunks, worker, workers):
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=int(workers)) as ex:
            list(ex.map(worker, chunks))
    else:
        for ch in chunks:
            worker(ch)


# ---------------------------------------------------------------------------
# Euler-Maruyama


def simulate_em(config: SystemConfig, model: InteractionModel,
                init: InitialDistribution, M: int, seed: int,
                workers: int = 1, store_stride: int = 1) -> TrajectoryEnsemble:
    """Integrate the particle system with the explicit Euler-Maruyama scheme.

    X_{l+1} = X_l + drift(X_l) dt + sigma sqrt(dt) xi_l. Only every
    ``store_stride``-th step is stored (the stored grid stays uniform).
    Raises BlowUpError with the offending step on non-finite positions.
    """
    if M < 1:
        raise ValueError("need M >= 1 trajectories")
    L = config.n_steps
    if L < 1 or L % store_stride != 0:
        raise ValueError("store_stride must divide the number of steps")
    N, d, dt, sig = config.N, config.d, config.dt, config.sigma
    S = L // store_stride + 1
    out = np.empty((M, S, N, d))
    x0 = _draw_initials(config, model, init, M, seed)
    phi = model.phi
    sq = np.sqrt(dt)
    batch = max(1, min(M, _NOISE_BUDGET // max(1, L * N * d)))

    def worker(span):
        lo, hi = span
        x = x0[lo:hi].copy()
        noise = None
        if sig > 0:
            noise = np.stack([
                derive_rng(seed, _TRAJ, m).standard_normal((L, N, d))
                for m in range(lo, hi)
            ])
        out[lo:hi, 0] = x
        for l in range(L):
            x = x + pairwise_force(phi, x) * dt
            if sig > 0:
                x += sig * sq * noise[:, l]
            if not np.all(np.isfinite(x)):
                bad = np.nonzero(~np.all(np.isfinite(x), axis=(1, 2)))[0][0]
                raise BlowUpError(step=l + 1, trajectory=lo + int(bad))
            if (l + 1) % store_stride == 0:
                out[lo:hi, (l + 1) // store_stride] = x

    _run_chunks(_chunks(M, batch), worker, workers)
    times = np.arange(S) * (dt * store_stride)
    info = model.to_dict() if hasattr(model, "to_dict") else None
    return TrajectoryEnsemble(out, times, config, int(seed), "euler-maruyama", info)


# ---------------------------------------------------------------------------
# exact sampling of the linear system's centered process


def lambda_of_t(theta: float, lambda0: float, t):
    """Pair-fluctuation variance scale of the linear system.

    lambda(t) = exp(-2 theta t) lambda0 + (1 - exp(-2 theta t)) / (2 theta).
    """
    if not theta > 0 or not lambda0 > 0:
        raise ValueError("theta and lambda0 must be positive")
    t = np.asarray(t, float)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    decay = np.exp(-2.0 * theta * t)
    out = decay * lambda0 + (1.0 - decay) / (2.0 * theta)
    return float(out) if out.ndim == 0 else out


def sample_linear_exact(theta: float, lambda0: float, times, N: int, d: int,
                        M: int, seed: int, workers: int = 1) -> TrajectoryEnsemble:
    """Exact Gaussian sampling of the centered linear system.

    At every grid time the snapshot is exactly N(0, lambda(t) A), with A the
    centering projection; consecutive snapshots follow the exact transition
    kernel, so paths are genuine. Requires a uniform grid starting at 0.
    """
    if not lambda0 > 0:
        raise ValueError("lambda0 must be positive")
    if not theta > 0:
        raise ValueError("theta must be positive")
    t = np.asarray(times, float)
    if t.ndim != 1 or t.size < 2 or t[0] != 0.0:
        raise ValueError("times must be a grid starting at 0 with at least two points")
    steps = np.diff(t)
    if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
        raise ValueError("times must be uniformly spaced")
    dt = float(steps[0])
    L, S = t.size - 1, t.size
    alpha = np.exp(-theta * dt)
    beta = np.sqrt((1.0 - alpha * alpha) / (2.0 * theta))
    out = np.empty((M, S, N, d))
    batch = max(1, min(M, _NOISE_BUDGET // max(1, (L + 1) * N * d)))

    def centered(z):
        return z - z.mean(axis=-2, keepdims=True)

    def worker(span):
        lo, hi = span
        noise = np.stack([
            derive_rng(seed, _TRAJ, m).standard_normal((L + 1, N, d))
            for m in range(lo, hi)
        ])
        y = np.sqrt(lambda0) * centered(noise[:, 0])
        out[lo:hi, 0] = y
        for l in range(L):
            y = alpha * y + beta * centered(noise[:, l + 1])
            out[lo:hi, l + 1] = y

    _run_chunks(_chunks(M, batch), worker, workers)
    config = SystemConfig(N=N, d=d, T=float(t[-1]), dt=dt, sigma=1.0)
    info = {"variant": "linear", "theta": theta, "lambda0": lambda0}
    return TrajectoryEnsemble(out, t, config, int(seed), "exact-linear", info)


# ---------------------------------------------------------------------------
# pair samples


@dataclass(frozen=True, eq=False)
class PairSampleSet:
    """Samples of the difference pair (u, v) = (X1 - X2, X1 - X3)."""

    u: np.ndarray  # (M, d)
    v: np.ndarray  # (M, d)
    provenance: str  # stationary-mcmc | pair-simulation | exact-gaussian
    acceptance_rate: float | None = None
    seed: int | None = None

    def __post_init__(self):
        u = np.atleast_2d(np.asarray(self.u, float))
        v = np.atleast_2d(np.asarray(self.v, float))
        if u.shape != v.shape or u.ndim != 2 or u.shape[0] < 1:
            raise ValueError("u and v must be matching (M, d) arrays with M >= 1")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def M(self) -> int:
        return self.u.shape[0]

    @property
    def d(self) -> int:
        return self.u.shape[1]


def sample_gaussian_pairs(lam: float, d: int, M: int, seed: int) -> PairSampleSet:
    """Exact centered Gaussian pairs with covariance lam * [[2I, I], [I, 2I]]."""
    if not lam > 0:
        raise ValueError("lam must be positive")
    rng = derive_rng(seed, _TRAJ)
    z = rng.standard_normal((M, 3, d))
    root = np.sqrt(lam)
    return PairSampleSet(
        u=root * (z[:, 0] - z[:, 1]), v=root * (z[:, 0] - z[:, 2]),
        provenance="exact-gaussian", seed=int(seed),
    )


# ---------------------------------------------------------------------------
# reduced pair system (N = 3)


@dataclass(frozen=True, eq=False)
class PairTrajectories:
    """Time series of the reduced pair process (u, v)."""

    u: np.ndarray  # (M, S, d)
    v: np.ndarray  # (M, S, d)
    times: np.ndarray
    seed: int
    model_info: dict | None = None
    provenance: str = "pair-system"

    def at_time(self, l: int) -> PairSampleSet:
        return PairSampleSet(self.u[:, l], self.v[:, l],
                             provenance="pair-simulation", seed=self.seed)

    def pooled(self, t_min: float = 0.0, stride: int = 1) -> PairSampleSet:
        """Pool snapshots with t >= t_min, keeping every stride-th one."""
        keep = np.nonzero(self.times >= t_min)[0][::stride]
        if keep.size == 0:
            raise ValueError("no snapshots at or after t_min")
        d = self.u.shape[-1]
        return PairSampleSet(self.u[:, keep].reshape(-1, d),
                             self.v[:, keep].reshape(-1, d),
                             provenance="pair-simulation", seed=self.seed)


def pair_drift(phi: Callable, u, v) -> np.ndarray:
    """Drift F(u, v) of the reduced pair system; zero at zero separations.

    F(u, v) = -(1/3) [2 phi(|u|) u/|u| + phi(|v|) v/|v| + phi(|u-v|)(u-v)/|u-v|].
    """
    u = np.asarray(u, float)
    v = np.asarray(v, float)

    def term(w):
        r = np.sqrt(np.sum(w * w, axis=-1))
        scale = np.zeros_like(r)
        mask = r > 0
        scale[mask] = phi(r[mask]) / r[mask]
        return scale[..., None] * w

    return -(2.0 * term(u) + term(v) + term(u - v)) / 3.0


def simulate_pair_system(model: InteractionModel, init, M: int, T: float,
                         dt: float, seed: int, workers: int = 1,
                         store_stride: int = 1) -> PairTrajectories:
    """Euler-Maruyama for the reduced pair system of the three-particle case.

    Noise increments are (B1 - B2, B1 - B3) built from three independent
    Brownian motions, so one step has covariance [[2I, I], [I, 2I]] dt.
    ``init`` is a pair (u0, v0), a PairSampleSet, or a callable
    (rng, count) -> (u0, v0).
    """
    L = int(round(T / dt))
    if L < 1 or L % store_stride != 0:
        raise ValueError("store_stride must divide the number of steps")
    if isinstance(init, PairSampleSet):
        if init.M < M:
            raise ValueError("initial sample set smaller than M")
        u0, v0 = init.u[:M].copy(), init.v[:M].copy()
    elif callable(init):
        u0, v0 = init(derive_rng(seed, _INIT), M)
        u0, v0 = np.asarray(u0, float), np.asarray(v0, float)
    else:
        u0, v0 = (np.asarray(w, float) for w in init)
        if u0.ndim == 1:
            u0 = np.broadcast_to(u0, (M,) + u0.shape).copy()
            v0 = np.broadcast_to(v0, (M,) + v0.shape).copy()
    if u0.shape != v0.shape or u0.shape[0] != M:
        raise ValueError("initial pair samples must both have shape (M, d)")
    d = u0.shape[1]
    S = L // store_stride + 1
    uu = np.empty((M, S, d))
    vv = np.empty((M, S, d))
    phi = model.phi
    sq = np.sqrt(dt)
    batch = max(1, min(M, _NOISE_BUDGET // max(1, L * 3 * d)))

    def worker(span):
        lo, hi = span
        u, v = u0[lo:hi].copy(), v0[lo:hi].copy()
        noise = np.stack([
            derive_rng(seed, _TRAJ, m).standard_normal((L, 3, d))
            for m in range(lo, hi)
        ])
        uu[lo:hi, 0], vv[lo:hi, 0] = u, v
        for l in range(L):
            du = pair_drift(phi, u, v)
            dv = pair_drift(phi, v, u)
            b = noise[:, l]
            u = u + du * dt + sq * (b[:, 0] - b[:, 1])
            v = v + dv * dt + sq * (b[:, 0] - b[:, 2])
            if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
                ok = np.all(np.isfinite(u), axis=1) & np.all(np.isfinite(v), axis=1)
                raise BlowUpError(step=l + 1, trajectory=lo + int(np.nonzero(~ok)[0][0]))
            if (l + 1) % store_stride == 0:
                uu[lo:hi, (l + 1) // store_stride] = u
                vv[lo:hi, (l + 1) // store_stride] = v

    _run_chunks(_chunks(M, batch), worker, workers)
    times = np.arange(S) * (dt * store_stride)
    info = model.to_dict() if hasattr(model, "to_dict") else None
    return PairTrajectories(uu, vv, times, int(seed), info)


# ---------------------------------------------------------------------------
# stationary pair sampling (random-walk Metropolis)


@dataclass(frozen=True)
class McmcParams:
    """Random-walk Metropolis settings for the stationary pair density."""

    step: float = 1.0
    burn_in: int = 4000
    thinning: int = 5
    chains: int = 8
    target_rate: float = 0.234
    adapt_batch: int = 50

    def __post_init__(self):
        if self.step <= 0 or self.burn_in < 0 or self.thinning < 1 or self.chains < 1:
            raise ValueError("invalid MCMC parameters")


def sample_stationary_pair(model: InteractionModel, d: int, M: int,
                           mcmc: McmcParams | None = None,
                           seed: int = 0) -> PairSampleSet:
    """Sample the stationary pair density by random-walk Metropolis.

    The target is proportional to
    exp(-(2/3) [Phi(|u|) + Phi(|v|) + Phi(|u - v|)]) on R^{2d}; the model's
    potential must grow to infinity. The proposal scale is adapted toward
    acceptance 0.234 during burn-in and then frozen; a post-burn-in rate
    outside [0.05, 0.7] raises AcceptanceRateError.
    """
    params = mcmc or McmcParams()
    pot = model.potential

    def log_density(state):  # state: (C, 2d)
        u, v = state[:, :d], state[:, d:]
        ru = np.sqrt(np.sum(u * u, axis=1))
        rv = np.sqrt(np.sum(v * v, axis=1))
        rw = np.sqrt(np.sum((u - v) ** 2, axis=1))
        return -(2.0 / 3.0) * (pot(ru) + pot(rv) + pot(rw))

    rng = derive_rng(seed, _MCMC)
    C = params.chains
    state = 0.5 * rng.standard_normal((C, 2 * d))
    logp = log_density(state)
    step = float(params.step)

    def sweep(n_steps, adapt):
        nonlocal state, logp, step
        accepted = 0
        batch_acc = 0
        for it in range(n_steps):
            prop = state + step * rng.standard_normal((C, 2 * d))
            lp = log_density(prop)
            accept = np.log(rng.random(C)) < lp - logp
            state = np.where(accept[:, None], prop, state)
            logp = np.where(accept, lp, logp)
            acc = int(accept.sum())
            accepted += acc
            batch_acc += acc
            if adapt and (it + 1) % params.adapt_batch == 0:
                rate = batch_acc / (params.adapt_batch * C)
                step *= float(np.exp(0.6 * (rate - params.target_rate)))
                batch_acc = 0
        return accepted / max(1, n_steps * C)

    sweep(params.burn_in, adapt=True)

    per_chain = -(-M // C)  # ceil
    kept = np.empty((per_chain, C, 2 * d))
    accepted = 0
    for j in range(per_chain):
        accepted += sweep(params.thinning, adapt=False) * params.thinning * C
        kept[j] = state
    rate = accepted / (per_chain * params.thinning * C)
    if not 0.05 <= rate <= 0.7:
        raise AcceptanceRateError(
            f"post burn-in acceptance rate {rate:.3f} outside [0.05, 0.7]; "
            "the proposal scale is mis-adapted for this target"
        )
    flat = kept.reshape(-1, 2 * d)[:M]
    return PairSampleSet(flat[:, :d], flat[:, d:], provenance="stationary-mcmc",
                         acceptance_rate=float(rate), seed=int(seed))


# ---------------------------------------------------------------------------
# serialization

_MAGIC = b"IPSLAB01"


def ensemble_to_csv(ensemble: TrajectoryEnsemble, path) -> None:
    """Columnar dump: m, l, t, i, then the d position components."""
    d = ensemble.config.d
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "l", "t", "i"] + [f"x{k}" for k in range(d)])
        for m in range(ensemble.M):
            for l, t in enumerate(ensemble.times):
                for i in range(ensemble.config.N):
                    row = [m, l, repr(float(t)), i]
                    row += [repr(float(x)) for x in ensemble.positions[m, l, i]]
                    w.writerow(row)


def save_ensemble(ensemble: TrajectoryEnsemble, path) -> None:
    """Binary dump: magic, JSON header (config/model/seed/provenance), raw data."""
    header = {
        "config": ensemble.config.to_dict(),
        "model": ensemble.model_info,
        "seed": ensemble.seed,
        "provenance": ensemble.provenance,
        "shape": list(ensemble.positions.shape),
        "dtype": "float64",
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(ensemble.times, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ensemble.positions, dtype="<f8").tobytes())


def load_ensemble(path) -> TrajectoryEnsemble:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError("not an ensemble dump")
        (n,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(n).decode())
        shape = tuple(header["shape"])
        times = np.frombuffer(fh.read(8 * shape[1]), dtype="<f8")
        pos = np.frombuffer(fh.read(8 * int(np.prod(shape))), dtype="<f8").reshape(shape)
    config = SystemConfig(**header["config"])
    return TrajectoryEnsemble(pos.copy(), times.copy(), config, header["seed"],
                              header["provenance"], header.get("model"))


def pair_samples_to_csv(samples: PairSampleSet, path) -> None:
    d = samples.d
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"u{k}" for k in range(d)] + [f"v{k}" for k in range(d)])
        for m in range(samples.M):
            row = [repr(float(x)) for x in samples.u[m]]
            row += [repr(float(x)) for x in samples.v[m]]
            w.writerow(row)
