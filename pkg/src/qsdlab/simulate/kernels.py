"""Compiled path kernels, generated per (process, domain).

The symbolic drift and domain mask are lambdified to ``math`` functions and
jitted, then closed over by the step and membership functions used by the
ensemble, single-path and Fleming-Viot kernels.  States are kept as tuples
so they stay in registers; this roughly halves the cost per step compared
with small heap arrays.  Kernels release the GIL so chunks can run on a
thread pool.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numba as nb
import numpy as np

from qsdlab.model.domain import DomainSpec
from qsdlab.model.process import KineticLangevin, OverdampedLangevin, StableSDE
from qsdlab.simulate.rng import normal, positive_stable, stream_keys, uniform

_jit = nb.njit(nogil=True, inline="always")


def _tuple_maker(size):
    """Jitted ``row -> tuple`` for a 1D array of known length."""
    if size == 1:
        return _jit(lambda r: (r[0],))
    if size == 2:
        return _jit(lambda r: (r[0], r[1]))
    if size == 3:
        return _jit(lambda r: (r[0], r[1], r[2]))
    if size == 4:
        return _jit(lambda r: (r[0], r[1], r[2], r[3]))
    if size == 6:
        return _jit(lambda r: (r[0], r[1], r[2], r[3], r[4], r[5]))
    raise ValueError(f"unsupported state size {size}")


def _fields(funcs):
    fs = [_jit(f) for f in funcs]
    while len(fs) < 3:
        fs.append(fs[0])
    return fs


def _overdamped_step(process: OverdampedLangevin):
    d = process.dim
    f0, f1, f2 = _fields(process.drift_field.scalar_functions())
    if d == 1:
        @_jit
        def step(x, dt, sq, k, g, n):
            z, n = normal(k, g, n)
            return (x[0] + f0(x[0]) * dt + sq * z,), n
    elif d == 2:
        @_jit
        def step(x, dt, sq, k, g, n):
            c0 = f0(x[0], x[1])
            c1 = f1(x[0], x[1])
            z0, n = normal(k, g, n)
            z1, n = normal(k, g, n)
            return (x[0] + c0 * dt + sq * z0, x[1] + c1 * dt + sq * z1), n
    else:
        @_jit
        def step(x, dt, sq, k, g, n):
            c0 = f0(x[0], x[1], x[2])
            c1 = f1(x[0], x[1], x[2])
            c2 = f2(x[0], x[1], x[2])
            z0, n = normal(k, g, n)
            z1, n = normal(k, g, n)
            z2, n = normal(k, g, n)
            return (x[0] + c0 * dt + sq * z0, x[1] + c1 * dt + sq * z1, x[2] + c2 * dt + sq * z2), n
    return step, d


def _kinetic_step(process: KineticLangevin):
    d = process.dim
    f0, f1, f2 = _fields(process.potential.gradient_functions())
    gam = float(process.gamma)
    if d == 1:
        @_jit
        def step(s, dt, sq, k, g, n):
            x, v = s
            z, n = normal(k, g, n)
            return (x + v * dt, v + (-f0(x) - gam * v) * dt + sq * z), n
    elif d == 2:
        @_jit
        def step(s, dt, sq, k, g, n):
            x0, x1, v0, v1 = s
            b0 = f0(x0, x1)
            b1 = f1(x0, x1)
            z0, n = normal(k, g, n)
            z1, n = normal(k, g, n)
            return (x0 + v0 * dt, x1 + v1 * dt,
                    v0 + (-b0 - gam * v0) * dt + sq * z0,
                    v1 + (-b1 - gam * v1) * dt + sq * z1), n
    else:
        @_jit
        def step(s, dt, sq, k, g, n):
            x0, x1, x2, v0, v1, v2 = s
            b0 = f0(x0, x1, x2)
            b1 = f1(x0, x1, x2)
            b2 = f2(x0, x1, x2)
            z0, n = normal(k, g, n)
            z1, n = normal(k, g, n)
            z2, n = normal(k, g, n)
            return (x0 + v0 * dt, x1 + v1 * dt, x2 + v2 * dt,
                    v0 + (-b0 - gam * v0) * dt + sq * z0,
                    v1 + (-b1 - gam * v1) * dt + sq * z1,
                    v2 + (-b2 - gam * v2) * dt + sq * z2), n
    return step, 2 * d


def _stable_step(process: StableSDE):
    d = process.dim
    f0, f1, f2 = _fields(process.potential.gradient_functions())
    half = process.alpha / 2.0
    inv_alpha = 1.0 / process.alpha
    sigma = process.noise_scale

    @_jit
    def scale_of(dt, k, g, n):
        s, n = positive_stable(k, g, n, half)
        return sigma * dt**inv_alpha * math.sqrt(2.0 * s), n

    if d == 1:
        @_jit
        def step(x, dt, sq, k, g, n):
            c, n = scale_of(dt, k, g, n)
            z, n = normal(k, g, n)
            return (x[0] - f0(x[0]) * dt + c * z,), n
    elif d == 2:
        @_jit
        def step(x, dt, sq, k, g, n):
            b0 = f0(x[0], x[1])
            b1 = f1(x[0], x[1])
            c, n = scale_of(dt, k, g, n)
            z0, n = normal(k, g, n)
            z1, n = normal(k, g, n)
            return (x[0] - b0 * dt + c * z0, x[1] - b1 * dt + c * z1), n
    else:
        @_jit
        def step(x, dt, sq, k, g, n):
            b0 = f0(x[0], x[1], x[2])
            b1 = f1(x[0], x[1], x[2])
            b2 = f2(x[0], x[1], x[2])
            c, n = scale_of(dt, k, g, n)
            z0, n = normal(k, g, n)
            z1, n = normal(k, g, n)
            z2, n = normal(k, g, n)
            return (x[0] - b0 * dt + c * z0, x[1] - b1 * dt + c * z1, x[2] - b2 * dt + c * z2), n
    return step, d


def make_step(process):
    """Return (step, state_size) with ``x, n = step(x, dt, sqrt(dt), k, g, n)``."""
    if isinstance(process, OverdampedLangevin):
        return _overdamped_step(process)
    if isinstance(process, KineticLangevin):
        return _kinetic_step(process)
    if isinstance(process, StableSDE):
        return _stable_step(process)
    raise TypeError(f"unsupported process {type(process).__name__}")


def make_inside(domain: DomainSpec | None, dim: int):
    """Membership test on the first ``dim`` coordinates of a state tuple."""
    if domain is None:
        return _jit(lambda x: True)
    if domain.ambient_dim != dim:
        raise ValueError("domain and process dimensions differ")
    lo = domain.lo.copy()
    hi = domain.hi.copy()
    d = dim

    @_jit
    def in_box(x):
        for a in range(d):
            if not (lo[a] < x[a] < hi[a]):
                return False
        return True

    if domain.mask_field is None:
        return in_box
    m = _jit(domain.mask_field.scalar_function())
    if d == 1:
        mask = _jit(lambda x: m(x[0]))
    elif d == 2:
        mask = _jit(lambda x: m(x[0], x[1]))
    else:
        mask = _jit(lambda x: m(x[0], x[1], x[2]))

    @_jit
    def inside(x):
        return in_box(x) and mask(x) > 0.0
    return inside


def make_binner(bdim: int):
    """Nearest-lattice-node lookup on the first ``bdim`` coordinates."""

    @_jit
    def bin_of(x, lo, inv_h, shape, strides, lookup):
        flat = 0
        for a in range(bdim):
            t = (x[a] - lo[a]) * inv_h[a] + 0.5
            if t < 0.0:
                j = 0
            else:
                j = int(t)
                if j >= shape[a]:
                    j = shape[a] - 1
            flat += j * strides[a]
        return lookup[flat]
    return bin_of


@_jit
def _pick(cdf, u):
    lo, hi = 0, cdf.size - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if cdf[mid] > u:
            hi = mid
        else:
            lo = mid + 1
    return lo


@lru_cache(maxsize=64)
def _kernels(process, domain, bdim):
    step, sd = make_step(process)
    inside = make_inside(domain, process.dim)
    as_tuple = _tuple_maker(sd)
    bin_of = make_binner(bdim)

    @nb.njit(nogil=True)
    def ensemble(seed, first, count, starts, cdf, dt, n_steps, lo, inv_h, shape, strides,
                 lookup, vvals, checkpoints, occ, term, exit_step, logw, states, keep_states):
        sq = math.sqrt(dt)
        nbins = occ.size
        local = np.zeros(nbins, dtype=np.int64)
        nck = checkpoints.size
        use_v = vvals.size > 0
        for p in range(count):
            k, g = stream_keys(seed, first + p)
            n = np.uint64(0)
            idx = 0
            if cdf.size > 1:
                u, n = uniform(k, g, n)
                idx = _pick(cdf, u)
            x = as_tuple(starts[idx])
            lw = 0.0
            ci = 0
            ex = -1
            for s in range(n_steps):
                b = bin_of(x, lo, inv_h, shape, strides, lookup)
                local[b] += 1
                if use_v:
                    lw += vvals[b] * dt
                x, n = step(x, dt, sq, k, g, n)
                if not inside(x):
                    ex = s + 1
                    break
                while ci < nck and checkpoints[ci] == s + 1:
                    logw[p, ci] = lw
                    ci += 1
            exit_step[p] = ex
            if ex < 0:
                for j in range(nbins):
                    occ[j] += local[j]
                term[bin_of(x, lo, inv_h, shape, strides, lookup)] += 1
                if keep_states:
                    for a in range(sd):
                        states[p, a] = x[a]
            for j in range(nbins):
                local[j] = 0

    @nb.njit(nogil=True)
    def single_path(seed, index, x0, dt, n_steps):
        sq = math.sqrt(dt)
        out = np.empty((n_steps + 1, sd))
        x = as_tuple(x0)
        for a in range(sd):
            out[0, a] = x[a]
        k, g = stream_keys(seed, index)
        n = np.uint64(0)
        for s in range(n_steps):
            x, n = step(x, dt, sq, k, g, n)
            for a in range(sd):
                out[s + 1, a] = x[a]
            if not inside(x):
                return out[: s + 2], s + 1
        return out, -1

    @nb.njit(nogil=True)
    def free_states(seed, first, count, x0, dt, n_steps):
        sq = math.sqrt(dt)
        out = np.empty((count, sd))
        for p in range(count):
            k, g = stream_keys(seed, first + p)
            n = np.uint64(0)
            x = as_tuple(x0)
            for s in range(n_steps):
                x, n = step(x, dt, sq, k, g, n)
            for a in range(sd):
                out[p, a] = x[a]
        return out

    @nb.njit(nogil=True)
    def fleming_viot(seed, n_part, starts, cdf, dt, n_steps, burn, lo, inv_h, shape, strides,
                     lookup, occ, term, branch):
        sq = math.sqrt(dt)
        X = np.empty((n_part, sd))
        prev = np.empty((n_part, sd))
        keys = np.empty(n_part, dtype=np.uint64)
        incs = np.empty(n_part, dtype=np.uint64)
        ctr = np.zeros(n_part, dtype=np.uint64)
        alive = np.empty(n_part, dtype=np.bool_)
        surv = np.empty(n_part, dtype=np.int64)
        for p in range(n_part):
            k, g = stream_keys(seed, p)
            keys[p] = k
            incs[p] = g
            n = np.uint64(0)
            idx = 0
            if cdf.size > 1:
                u, n = uniform(k, g, n)
                idx = _pick(cdf, u)
            ctr[p] = n
            for a in range(sd):
                X[p, a] = starts[idx, a]
        extinctions = 0
        for s in range(n_steps):
            if s >= burn:
                for p in range(n_part):
                    occ[bin_of(as_tuple(X[p]), lo, inv_h, shape, strides, lookup)] += 1
            n_alive = 0
            for p in range(n_part):
                x = as_tuple(X[p])
                for a in range(sd):
                    prev[p, a] = x[a]
                x, ctr[p] = step(x, dt, sq, keys[p], incs[p], ctr[p])
                for a in range(sd):
                    X[p, a] = x[a]
                alive[p] = inside(x)
                if alive[p]:
                    surv[n_alive] = p
                    n_alive += 1
            if n_alive == 0:
                # every particle left in the same step: undo the step
                X[:, :] = prev
                extinctions += 1
                continue
            for p in range(n_part):
                if not alive[p]:
                    u, ctr[p] = uniform(keys[p], incs[p], ctr[p])
                    j = surv[min(int(u * n_alive), n_alive - 1)]
                    for a in range(sd):
                        X[p, a] = X[j, a]
                    if s >= burn:
                        branch[0] += 1
                    branch[1] += 1
        for p in range(n_part):
            term[bin_of(as_tuple(X[p]), lo, inv_h, shape, strides, lookup)] += 1
        return extinctions

    return {"ensemble": ensemble, "single_path": single_path, "free_states": free_states,
            "fleming_viot": fleming_viot, "state_dim": sd}


def kernels_for(process, domain: DomainSpec | None, bin_dim: int | None = None):
    """Compiled kernels; ``bin_dim`` is the number of leading state coordinates binned."""
    return _kernels(process, domain, process.dim if bin_dim is None else int(bin_dim))
