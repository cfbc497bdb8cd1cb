"""Monte Carlo estimators for killed processes.

Paths are split into fixed-size chunks by path index; each chunk runs in a
compiled kernel and per-chunk integer histograms are summed in chunk order,
so results are bitwise identical for any number of worker threads.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import norm

from qsdlab.errors import AllPathsKilled, TooFewSurvivors
from qsdlab.model.domain import DomainSpec, GridSpec
from qsdlab.model.fields import PotentialField
from qsdlab.simulate.kernels import kernels_for

Z95 = float(norm.ppf(0.975))


class MassCollapse(UserWarning):
    pass


class FewSurvivors(UserWarning):
    pass


@dataclass(frozen=True)
class RngPolicy:
    """Master seed plus the fixed chunking used to parallelise paths.

    ``threads`` only changes scheduling; results depend on
    (master_seed, chunk_size) and the run parameters.
    """

    master_seed: int
    chunk_size: int = 8192
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "master_seed", int(self.master_seed) & 0xFFFFFFFFFFFFFFFF)
        if self.chunk_size < 1 or self.threads < 1:
            raise ValueError("chunk_size and threads must be positive")


@dataclass(frozen=True)
class InitialLaw:
    """Finitely supported initial distribution."""

    points: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        p = np.asarray(self.probs, dtype=float).reshape(-1)
        if pts.shape[0] != p.size or np.any(p < 0) or p.sum() <= 0:
            raise ValueError("initial law needs one nonnegative weight per point")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "probs", p / p.sum())

    @classmethod
    def dirac(cls, x0) -> "InitialLaw":
        return cls(np.atleast_2d(np.asarray(x0, dtype=float)), np.ones(1))

    @classmethod
    def on_grid(cls, grid: GridSpec, masses) -> "InitialLaw":
        m = np.asarray(masses, dtype=float)
        keep = m > 0
        return cls(grid.nodes[keep], m[keep])

    @property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.probs)
        c[-1] = 1.0
        return c


@dataclass(frozen=True)
class Binning:
    """Nearest-node binning onto the interior nodes of a grid.

    States whose nearest lattice node is exterior are assigned to the closest
    interior node, so conditioned histograms live on interior cells.
    """

    grid: GridSpec

    @cached_property
    def arrays(self):
        g = self.grid
        tree = cKDTree(g.nodes / g.spacing)
        _, nearest = tree.query(g.all_nodes / g.spacing)
        lookup = np.asarray(nearest, dtype=np.int64)
        lookup[g.interior_flat] = np.arange(g.n)
        shape = np.array(g.shape, dtype=np.int64)
        strides = np.ones(g.dim, dtype=np.int64)
        for a in range(g.dim - 2, -1, -1):
            strides[a] = strides[a + 1] * shape[a + 1]
        return g.domain.lo.copy(), 1.0 / g.spacing, shape, strides, lookup


@dataclass
class EmpiricalMeasure:
    """Histogram over interior grid cells."""

    counts: np.ndarray
    total_weight: float
    grid: GridSpec | None = None

    @property
    def bin_masses(self) -> np.ndarray:
        if self.total_weight <= 0:
            return np.zeros_like(self.counts, dtype=float)
        return np.asarray(self.counts, dtype=float) / self.total_weight

    def density(self) -> np.ndarray:
        return self.grid.density(self.bin_masses)

    def tv(self, other) -> float:
        q = other.bin_masses if isinstance(other, EmpiricalMeasure) else np.asarray(other, dtype=float)
        return 0.5 * float(np.abs(self.bin_masses - q).sum())


@dataclass
class EnsembleStats:
    n_paths: int
    n_survivors: int
    survival_prob: float
    survival_ci: tuple[float, float]
    mean_occupation: EmpiricalMeasure
    terminal_marginal: EmpiricalMeasure
    dt: float
    T: float
    exit_steps: np.ndarray = field(repr=False)
    log_weights: np.ndarray | None = field(repr=False, default=None)
    checkpoints: np.ndarray | None = field(repr=False, default=None)
    terminal_states: np.ndarray | None = field(repr=False, default=None)
    few_survivors: bool = False

    def survival_curve(self, times) -> tuple[np.ndarray, np.ndarray]:
        """P[t < sigma] at the given times and its 95% half-widths."""
        steps = np.rint(np.asarray(times, dtype=float) / self.dt).astype(np.int64)
        ex = np.where(self.exit_steps < 0, np.iinfo(np.int64).max, self.exit_steps)
        ex_sorted = np.sort(ex)
        alive = self.n_paths - np.searchsorted(ex_sorted, steps, side="right")
        p = alive / self.n_paths
        hw = Z95 * np.sqrt(p * (1 - p) / self.n_paths)
        return p, hw


@dataclass
class PathSample:
    states: np.ndarray
    dt: float
    exit_time: float
    exited: bool


def _default_grid(domain: DomainSpec) -> GridSpec:
    per_axis = {1: 400, 2: 100, 3: 30}[domain.ambient_dim]
    return GridSpec(domain, (per_axis,) * domain.ambient_dim)


def _check_start(process, domain, nu: InitialLaw):
    d = process.dim
    sd = 2 * d if hasattr(process, "gamma") else d
    if nu.points.shape[1] != sd:
        raise ValueError(f"initial points need {sd} coordinates")
    if domain is not None and not np.all(domain.contains(nu.points[:, :d])):
        raise ValueError("initial law charges points outside D")


def _run(process, domain, grid, nu, dt, n_steps, n_paths, policy, vvals, checkpoints, keep_states):
    k = kernels_for(process, domain, grid.dim)
    sd = k["state_dim"]
    lo, inv_h, shape, strides, lookup = Binning(grid).arrays
    nb = grid.n
    cdf = nu.cdf
    starts = nu.points
    chunks = [(s, min(policy.chunk_size, n_paths - s)) for s in range(0, n_paths, policy.chunk_size)]
    nck = checkpoints.size

    def work(chunk):
        first, count = chunk
        occ = np.zeros(nb, dtype=np.int64)
        term = np.zeros(nb, dtype=np.int64)
        ex = np.empty(count, dtype=np.int64)
        lw = np.full((count, nck), np.nan)
        st = np.full((count if keep_states else 0, sd), np.nan)
        k["ensemble"](policy.master_seed, first, count, starts, cdf, dt, n_steps, lo, inv_h,
                      shape, strides, lookup, vvals, checkpoints, occ, term, ex, lw,
                      st if keep_states else np.empty((1, sd)), keep_states)
        return occ, term, ex, lw, st

    if policy.threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=policy.threads) as pool:
            results = list(pool.map(work, chunks))
    else:
        results = [work(c) for c in chunks]
    occ = np.zeros(nb, dtype=np.int64)
    term = np.zeros(nb, dtype=np.int64)
    for r in results:
        occ += r[0]
        term += r[1]
    ex = np.concatenate([r[2] for r in results])
    lw = np.concatenate([r[3] for r in results]) if nck else None
    st = np.concatenate([r[4] for r in results]) if keep_states else None
    return occ, term, ex, lw, st


def rejection_conditional_ensemble(process, domain: DomainSpec, nu: InitialLaw, dt: float, T: float,
                                   n_paths: int, rng_policy: RngPolicy, grid: GridSpec | None = None,
                                   *, V: PotentialField | None = None, checkpoints=None,
                                   keep_states: bool = False, min_survivors: int = 100,
                                   strict: bool = False) -> EnsembleStats:
    """Run ``n_paths`` killed paths to time T and condition on survival.

    Survivors contribute their left-endpoint occupation histogram over the
    ``round(T/dt)`` steps and their terminal cell.  With fewer than
    ``min_survivors`` survivors a ``FewSurvivors`` warning is issued and the
    stats are flagged (or ``TooFewSurvivors`` raised when ``strict``).
    """
    if dt <= 0 or T <= 0 or n_paths < 1:
        raise ValueError("need dt > 0, T > 0 and at least one path")
    grid = _default_grid(domain) if grid is None else grid
    _check_start(process, domain, nu)
    n_steps = max(1, int(round(T / dt)))
    vvals = np.zeros(0) if V is None else np.asarray(V.values, dtype=float)
    if vvals.size not in (0, grid.n):
        raise ValueError("potential must live on the binning grid")
    cks = np.zeros(0, dtype=np.int64) if checkpoints is None else np.asarray(checkpoints, dtype=np.int64)
    occ, term, ex, lw, st = _run(process, domain, grid, nu, dt, n_steps, n_paths, rng_policy,
                                 vvals, cks, keep_states)
    n_surv = int(np.sum(ex < 0))
    p = n_surv / n_paths
    hw = Z95 * np.sqrt(p * (1 - p) / n_paths)
    stats = EnsembleStats(
        n_paths=n_paths, n_survivors=n_surv, survival_prob=p, survival_ci=(p - hw, p + hw),
        mean_occupation=EmpiricalMeasure(occ, float(n_surv * n_steps), grid),
        terminal_marginal=EmpiricalMeasure(term, float(n_surv), grid),
        dt=dt, T=n_steps * dt, exit_steps=ex, log_weights=lw, checkpoints=cks,
        terminal_states=st, few_survivors=n_surv < min_survivors,
    )
    if n_surv == 0 or (strict and stats.few_survivors):
        raise TooFewSurvivors(f"{n_surv} of {n_paths} paths survived to T={T}", stats=stats)
    if stats.few_survivors:
        warnings.warn(f"only {n_surv} survivors; conditioned estimates are noisy", FewSurvivors)
    return stats


def sample_killed_path(process, domain: DomainSpec, x0, dt: float, T: float, rng_policy: RngPolicy,
                       index: int = 0) -> PathSample:
    """One path with all states recorded up to the first state outside D or time T.

    Path ``index`` uses the same random stream as path ``index`` of an
    ensemble run started from a Dirac at x0 with the same policy.
    """
    k = kernels_for(process, domain)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    nu = InitialLaw.dirac(x0)
    _check_start(process, domain, nu)
    n_steps = max(1, int(round(T / dt)))
    states, ex = k["single_path"](rng_policy.master_seed, index, x0, dt, n_steps)
    exited = ex >= 0
    return PathSample(states=states, dt=dt, exit_time=ex * dt if exited else np.inf, exited=exited)


def free_terminal_states(process, x0, dt: float, n_steps: int, n_paths: int,
                         rng_policy: RngPolicy) -> np.ndarray:
    """Terminal states of unkilled paths (no domain), e.g. for moment checks."""
    k = kernels_for(process, None)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    chunks = [(s, min(rng_policy.chunk_size, n_paths - s)) for s in range(0, n_paths, rng_policy.chunk_size)]
    parts = [k["free_states"](rng_policy.master_seed, f, c, x0, dt, int(n_steps)) for f, c in chunks]
    return np.concatenate(parts)


@dataclass
class FeynmanKacEstimate:
    """Log-growth estimates of E_nu[exp(int_0^T V) 1{T < sigma}].

    ``estimate`` is (1/T) log of the weighted mean.  ``rate`` is the slope of
    the log weighted mean between T/2 and T, which removes the O(1/T) bias
    from the eigenfunction prefactor.  Both carry delta-method 95% CIs.
    """

    estimate: float
    ci: tuple[float, float]
    rate: float
    rate_ci: tuple[float, float]
    log_mean: float
    log_mean_half: float
    n_paths: int
    n_survivors: int
    T: float


def _log_mean(w_log: np.ndarray, alive: np.ndarray, n: int):
    """log of (1/n) sum over alive of exp(w_log), with the scaled weights."""
    if not alive.any():
        return -np.inf, np.zeros(n), 0.0
    shift = float(np.max(w_log[alive]))
    w = np.zeros(n)
    w[alive] = np.exp(w_log[alive] - shift)
    return float(np.log(w.mean()) + shift), w, shift


def feynman_kac_mc(process, domain: DomainSpec, V: PotentialField, nu: InitialLaw, dt: float, T: float,
                   n_paths: int, rng_policy: RngPolicy, grid: GridSpec | None = None) -> FeynmanKacEstimate:
    """Monte Carlo Feynman-Kac growth rate with left-endpoint integration of V."""
    grid = _default_grid(domain) if grid is None else grid
    n_steps = max(2, int(round(T / dt)))
    half = n_steps // 2
    if V is None:
        V = PotentialField.zero(grid.n)
    stats = rejection_conditional_ensemble(process, domain, nu, dt, n_steps * dt, n_paths, rng_policy,
                                           grid, V=V, checkpoints=[half, n_steps], min_survivors=0)
    ex = stats.exit_steps
    alive_T = ex < 0
    alive_h = (ex < 0) | (ex > half)
    if not alive_T.any():
        raise AllPathsKilled("no path survived to T")
    lw = stats.log_weights
    LT, wT, _ = _log_mean(lw[:, 1], alive_T, n_paths)
    Lh, wh, _ = _log_mean(lw[:, 0], alive_h, n_paths)
    Tn = n_steps * dt
    Th = half * dt
    mT, mh = wT.mean(), wh.mean()
    var_T = wT.var() / (n_paths * mT * mT)
    var_h = wh.var() / (n_paths * mh * mh)
    cov = float(np.mean((wT - mT) * (wh - mh))) / (n_paths * mT * mh)
    est = LT / Tn
    hw = Z95 * np.sqrt(var_T) / Tn
    span = Tn - Th
    rate = (LT - Lh) / span
    var_rate = max(var_T + var_h - 2 * cov, 0.0) / span**2
    rhw = Z95 * np.sqrt(var_rate)
    return FeynmanKacEstimate(estimate=est, ci=(est - hw, est + hw), rate=rate,
                              rate_ci=(rate - rhw, rate + rhw), log_mean=LT, log_mean_half=Lh,
                              n_paths=n_paths, n_survivors=int(alive_T.sum()), T=Tn)


@dataclass
class FlemingViotResult:
    occupation: EmpiricalMeasure  # time average of the particle cloud after burn-in
    terminal: EmpiricalMeasure  # cloud at time T
    branching_rate: float  # resamplings per particle per unit time after burn-in
    resamplings: int
    extinctions: int


def fleming_viot(process, domain: DomainSpec, n_particles: int, dt: float, T: float,
                 rng_policy: RngPolicy, nu: InitialLaw, grid: GridSpec | None = None,
                 burn_in: float | None = None) -> FlemingViotResult:
    """Fleming-Viot particle system: exits jump onto a uniformly chosen survivor.

    Particles move in index order with their own streams; exits within a step
    are resampled in index order among the particles that stayed inside in
    that step.  If every particle exits in the same step the step is undone
    (counted in ``extinctions``).
    """
    if n_particles < 2:
        raise ValueError("need at least two particles")
    grid = _default_grid(domain) if grid is None else grid
    _check_start(process, domain, nu)
    k = kernels_for(process, domain, grid.dim)
    n_steps = max(1, int(round(T / dt)))
    burn = n_steps // 2 if burn_in is None else int(round(burn_in / dt))
    lo, inv_h, shape, strides, lookup = Binning(grid).arrays
    occ = np.zeros(grid.n, dtype=np.int64)
    term = np.zeros(grid.n, dtype=np.int64)
    branch = np.zeros(2, dtype=np.int64)
    ext = k["fleming_viot"](rng_policy.master_seed, n_particles, nu.points, nu.cdf, dt, n_steps, burn,
                            lo, inv_h, shape, strides, lookup, occ, term, branch)
    window = (n_steps - burn) * dt
    rate = branch[0] / (n_particles * window) if window > 0 else np.nan
    res = FlemingViotResult(
        occupation=EmpiricalMeasure(occ, float(occ.sum()), grid),
        terminal=EmpiricalMeasure(term, float(n_particles), grid),
        branching_rate=float(rate), resamplings=int(branch[1]), extinctions=int(ext),
    )
    if grid.n > 1 and np.count_nonzero(term) == 1:
        warnings.warn("all particles occupy a single cell", MassCollapse)
    return res
