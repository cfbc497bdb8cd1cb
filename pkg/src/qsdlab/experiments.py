"""Named experiments: run a config, emit CSV/JSON artifacts, evaluate checks."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from qsdlab.config import RunConfig, parse_number
from qsdlab.errors import MismatchedExperiments, QsdlabError
from qsdlab.io import write_csv, write_json
from qsdlab.ldp import (
    CramerFunctional,
    DirichletFormContext,
    dirichlet_eigenvalue,
    rate_function,
    reversible_rate,
)
from qsdlab.model import ScalarField
from qsdlab.simulate import (
    InitialLaw,
    RngPolicy,
    feynman_kac_mc,
    fleming_viot,
    rejection_conditional_ensemble,
)
from qsdlab.spectral import gap_estimate, principal_eigentriple, survival_decay

REPORT_NAME = "summary.json"
TIMING_NAME = "timing.json"


@dataclass
class ExperimentReport:
    experiment: str
    inputs_hash: str
    seed: int
    metrics: dict = field(default_factory=dict)  # name -> {"value", "tolerance"}
    checks: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    wall_clock: float = 0.0
    threads: int = 1

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def to_dict(self) -> dict:
        return {"schema": 1, "experiment": self.experiment, "inputs_hash": self.inputs_hash,
                "seed": self.seed, "metrics": self.metrics, "checks": self.checks,
                "outputs": sorted(self.outputs), "passed": self.passed}

    def metric(self, name: str) -> float:
        return self.metrics[name]["value"]


class _Recorder:
    def __init__(self, out: Path | None):
        self.out = out
        self.metrics: dict = {}
        self.outputs: list[str] = []

    def put(self, name, value, tolerance=None):
        self.metrics[name] = {"value": float(value),
                              "tolerance": None if tolerance is None else float(tolerance)}

    def csv(self, name, header, rows):
        if self.out is not None:
            write_csv(self.out / name, header, rows)
        self.outputs.append(name)


def _coords_header(d):
    return ["x", "y", "z"][:d]


def _oracle_masses(expr: str, grid, d: int) -> np.ndarray:
    m = ScalarField(expr, d)(grid.nodes[:, :d]) * grid.cell_volume
    return m / m.sum()


def _nearest_interior(grid, x0) -> int:
    x0 = np.asarray(x0, dtype=float)
    return int(np.argmin(np.sum((grid.nodes - x0) ** 2, axis=1)))


# -- spectral ------------------------------------------------------------------


def _run_spectral(cfg: RunConfig, rec: _Recorder):
    op = cfg.operator()
    grid = cfg.grid
    d = cfg.dim
    V = cfg.potential_on(grid)
    solver = cfg.data.get("solver", {})
    tol = float(solver.get("tol", 1e-10))
    trip = principal_eigentriple(op, V, tol=tol)
    rec.put("spectral.lambda", trip.lam, tol)
    rec.put("spectral.residual", max(trip.residual_right, trip.residual_left), None)
    pi = trip.mu * trip.phi
    pi = pi / pi.sum()
    orc = cfg.data.get("oracles", {})
    pos = grid.nodes[:, :d]
    if "mu" in orc:
        rec.put("spectral.mu_l1", np.abs(trip.mu - _oracle_masses(orc["mu"], grid, d)).sum(), tol)
    if "qed" in orc:
        rec.put("spectral.qed_l1", np.abs(pi - _oracle_masses(orc["qed"], grid, d)).sum(), tol)
    if "phi" in orc:
        f = ScalarField(orc["phi"], d)(pos)
        rec.put("spectral.phi_l1", grid.cell_volume * np.abs(trip.phi - f).sum(), tol)
    hdr = ["cell"] + [f"node_{c}" for c in ["x", "y", "z", "u", "v", "w"][: grid.dim]] + ["mu", "phi", "qed"]
    rec.csv("eigen.csv", hdr, ([i, *grid.nodes[i], trip.mu[i], trip.phi[i], pi[i]] for i in range(grid.n)))
    if "gap" in solver:
        gs = solver["gap"]
        probes = [ScalarField(p, d)(pos) for p in gs.get("probes", ["1", "x"])]
        est = gap_estimate(op, V, None, trip, probes, float(gs["horizon"]),
                           min_decades=float(gs.get("min_decades", 2.0)),
                           max_dev=float(gs.get("max_dev", 0.05)))
        rec.put("spectral.gap_delta", est.delta, None)
        rec.put("spectral.gap_C", est.C, None)
        rec.put("spectral.gap_dominates", 1.0 if est.dominates() else 0.0, None)
        rows = ([t, *est.residuals[:, j], est.bound(t)] for j, t in enumerate(est.times))
        rec.csv("gap.csv", ["t"] + [f"probe_{k}" for k in range(len(probes))] + ["bound"], rows)
    if "survival" in solver:
        sv = solver["survival"]
        x0 = [parse_number(v) for v in sv["x0"]]
        slope, info = survival_decay(op, _nearest_interior(grid, x0), float(sv["horizon"]), return_fit=True)
        rec.put("spectral.survival_slope", slope, None)
        rec.csv("spectral_survival.csv", ["t", "log_survival"], zip(info["times"], info["log_survival"]))
    return op, trip


# -- simulate ------------------------------------------------------------------


def _run_simulate(cfg: RunConfig, rec: _Recorder, threads: int):
    sim = cfg.data["simulate"]
    rng = cfg.data.get("rng", {})
    policy = RngPolicy(cfg.seed, int(rng.get("chunk_size", 8192)), threads)
    proc = cfg.process
    domain = cfg.domain
    grid = cfg.position_grid
    d = cfg.dim
    x0 = [parse_number(v) for v in sim["x0"]]
    nu = InitialLaw.dirac(x0)
    dt, T, n = float(sim["dt"]), float(sim["T"]), int(sim["n_paths"])
    stats = rejection_conditional_ensemble(proc, domain, nu, dt, T, n, policy, grid, min_survivors=0)
    p = stats.survival_prob
    rec.put("simulate.survival_prob", p, stats.survival_ci[1] - p)
    rec.put("simulate.n_survivors", stats.n_survivors, None)
    occ = stats.mean_occupation.bin_masses
    term = stats.terminal_marginal.bin_masses
    rec.put("simulate.tv_occupation_terminal", 0.5 * np.abs(occ - term).sum(), None)
    orc = cfg.data.get("oracles", {})
    for key, masses in (("occupation", occ), ("terminal", term)):
        if key in orc:
            q = _oracle_masses(orc[key], grid, d)
            rec.put(f"simulate.tv_{key}_oracle", 0.5 * np.abs(masses - q).sum(), None)
    rec.csv("ensemble.csv", ["cell"] + _coords_header(d) + ["occupation_mass", "terminal_mass"],
            ([i, *grid.nodes[i], occ[i], term[i]] for i in range(grid.n)))
    times = np.linspace(0.0, stats.T, int(sim.get("survival_points", 51)))
    surv, hw = stats.survival_curve(times)
    with np.errstate(divide="ignore"):
        rows = [(t, np.log(s), np.log(max(s - h, 0.0)), np.log(s + h)) for t, s, h in zip(times, surv, hw)]
    rec.csv("survival.csv", ["t", "log_survival", "ci_low", "ci_high"], rows)

    pots = sim.get("potentials", {})
    fk_rows = []
    spectral_op = None
    for tag in sorted(pots):
        Vb = cfg.potential_on(grid, pots[tag])
        est = feynman_kac_mc(proc, domain, Vb, nu, dt, T, n, policy, grid)
        half = est.rate_ci[1] - est.rate
        rec.put(f"simulate.fk.{tag}.rate", est.rate, half)
        rec.put(f"simulate.fk.{tag}.estimate", est.estimate, est.ci[1] - est.estimate)
        if spectral_op is None:
            spectral_op = cfg.operator()
        lam = principal_eigentriple(spectral_op, cfg.potential_on(cfg.grid, pots[tag])).lam
        rec.put(f"simulate.fk.{tag}.spectral", lam, None)
        rec.put(f"simulate.fk.{tag}.difference", est.rate - lam, half)
        fk_rows.append((tag, est.estimate, est.ci[0], est.ci[1], est.rate, est.rate_ci[0], est.rate_ci[1], lam))
    if fk_rows:
        rec.csv("fk.csv", ["V", "estimate", "ci_low", "ci_high", "rate", "rate_ci_low", "rate_ci_high",
                           "spectral"], fk_rows)
    if "fleming_viot" in sim:
        fv = sim["fleming_viot"]
        res = fleming_viot(proc, domain, int(fv["n_particles"]), dt, float(fv.get("T", T)), policy, nu, grid,
                           burn_in=fv.get("burn_in"))
        rec.put("simulate.fv.branching_rate", res.branching_rate, None)
        if "occupation" in orc:
            q = _oracle_masses(orc["occupation"], grid, d)
            rec.put("simulate.fv.tv_occupation_oracle",
                    0.5 * np.abs(res.occupation.bin_masses - q).sum(), None)
        if "mu" in orc:
            q = _oracle_masses(orc["mu"], grid, d)
            rec.put("simulate.fv.tv_terminal_mu", 0.5 * np.abs(res.terminal.bin_masses - q).sum(), None)


# -- ldp -----------------------------------------------------------------------


def _beta(cfg: RunConfig, spec, grid, qed_masses) -> np.ndarray:
    d = cfg.dim
    if spec == "qed":
        return qed_masses.copy()
    if "tilt" in spec:
        b = qed_masses * np.exp(ScalarField(spec["tilt"], d)(grid.nodes[:, :d]))
    elif "mix" in spec:
        w = float(spec["mix"])
        b = (1 - w) * qed_masses + w / grid.n
    elif "dirac" in spec:
        b = np.zeros(grid.n)
        b[_nearest_interior(grid, [parse_number(v) for v in spec["dirac"]])] = 1.0
    else:
        b = np.loadtxt(cfg.resolve(spec["file"]), delimiter=",", ndmin=1)
        if b.size != grid.n:
            raise QsdlabError(f"{spec['file']}: {b.size} values for {grid.n} cells")
    return b / b.sum()


def _run_ldp(cfg: RunConfig, rec: _Recorder):
    ls = cfg.data.get("ldp", {})
    grid = cfg.grid
    ctx = None
    if ls.get("reversible"):
        # both routes then share the symmetric (detailed-balance) discretisation
        ctx = DirichletFormContext.from_process(cfg.process, cfg.position_grid)
        F = CramerFunctional(ctx.op)
    else:
        F = CramerFunctional(cfg.operator())
    q = F.qed().masses
    rec.put("ldp.Lambda0", F.reference_lambda0, F.tol)
    rec.csv("qed.csv", ["cell", "qed_mass"], ((i, q[i]) for i in range(grid.n)))
    if ctx is not None:
        lam_d = dirichlet_eigenvalue(ctx)
        rec.put("ldp.lambda_D", lam_d, None)
        rec.put("ldp.eig_residual", abs(lam_d + F.reference_lambda0) / abs(lam_d), None)
        rec.put("ldp.balance_defect", ctx.balance_defect(), None)
    M = float(ls.get("M", 20.0))
    tol = float(ls.get("tol", 1e-9))
    rows = []
    for tag in sorted(ls.get("betas", {})):
        b = _beta(cfg, ls["betas"][tag], grid, q)
        r = rate_function(b, F, M=M, tol=tol)
        rec.put(f"ldp.rate.{tag}", r.value, r.optimality_gap)
        rec.put(f"ldp.box_active.{tag}", 1.0 if r.box_active else 0.0, None)
        if ctx is not None:
            rr = reversible_rate(b, ctx)
            rec.put(f"ldp.reversible.{tag}", rr, None)
            if np.isfinite(rr) and rr != 0:
                rec.put(f"ldp.rate_rel_err.{tag}", abs(r.value - rr) / abs(rr), None)
            else:
                rec.put(f"ldp.rate_abs_err.{tag}", abs(r.value - rr), None)
        rows.append((tag, r.value, r.optimality_gap, r.box_active, r.iterations))
    if rows:
        rec.csv("rate.csv", ["beta", "I", "optimality_gap", "box_active", "iterations"], rows)


# -- checks --------------------------------------------------------------------


def evaluate_check(check: dict, metrics: dict) -> dict:
    name = check["metric"]
    op = check["op"]
    tol = float(check.get("tol", 0.0))
    out = {"metric": name, "op": op, "tol": tol}
    if "expected" in check:
        out["expected"] = float(check["expected"])
    m = metrics.get(name)
    if m is None:
        out.update(value=None, passed=False, reason="metric not produced")
        return out
    v = m["value"]
    e = out.get("expected")
    out["value"] = v
    if op in ("abs", "rel", "le", "ge") and e is None:
        out.update(passed=False, reason="check needs an expected value")
        return out
    if op == "abs":
        ok = abs(v - e) <= tol
    elif op == "rel":
        ok = abs(v - e) <= tol * abs(e)
    elif op == "le":
        ok = v <= e + tol
    elif op == "ge":
        ok = v >= e - tol
    else:
        mt = m["tolerance"]
        ok = mt is not None and abs(v) <= mt + tol
        out["metric_tolerance"] = mt
    out["passed"] = bool(ok and np.isfinite(v))
    return out


# -- driver --------------------------------------------------------------------


def run(cfg: RunConfig, out_dir=None, *, threads: int | None = None) -> ExperimentReport:
    """Execute the configured experiment; write artifacts to ``out_dir`` when given."""
    t0 = time.perf_counter()
    threads = int(threads if threads is not None else cfg.data.get("rng", {}).get("threads", 1))
    out = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
    rec = _Recorder(out)
    exp = cfg.experiment
    if exp in ("spectral", "validate"):
        _run_spectral(cfg, rec)
    if exp == "simulate" or (exp == "validate" and "simulate" in cfg.data):
        _run_simulate(cfg, rec, threads)
    if exp == "ldp" or (exp == "validate" and "ldp" in cfg.data):
        _run_ldp(cfg, rec)
    checks = [evaluate_check(c, rec.metrics) for c in cfg.data.get("checks", [])]
    rep = ExperimentReport(exp, cfg.inputs_hash(), cfg.seed, rec.metrics, checks,
                           rec.outputs + [REPORT_NAME], time.perf_counter() - t0, threads)
    if out is not None:
        write_json(out / REPORT_NAME, rep.to_dict())
        # scheduling details live outside the reproducible report
        write_json(out / TIMING_NAME, {"wall_clock_s": rep.wall_clock, "threads": threads})
    return rep


# -- compare -------------------------------------------------------------------


@dataclass
class Comparison:
    rows: list  # dicts: metric, a, b, delta, combined_tolerance, flagged
    missing: list

    @property
    def flagged(self) -> list:
        return [r for r in self.rows if r["flagged"]]

    def to_dict(self) -> dict:
        return {"rows": self.rows, "missing": self.missing, "n_flagged": len(self.flagged)}


def load_report(path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / REPORT_NAME
    return json.loads(p.read_text(encoding="utf-8"))


def compare(report_a, report_b, *, pairs: dict | None = None) -> Comparison:
    """Metric deltas b − a; a delta is flagged when it exceeds the summed tolerances.

    ``pairs`` maps a metric of ``a`` to a differently named metric of ``b``. It is
    how a spectral value is held against its Monte Carlo estimate, and only then
    may the two reports come from different experiments.
    """
    a = report_a.to_dict() if isinstance(report_a, ExperimentReport) else report_a
    b = report_b.to_dict() if isinstance(report_b, ExperimentReport) else report_b
    if pairs is None and a.get("experiment") != b.get("experiment"):
        raise MismatchedExperiments(f"cannot compare {a.get('experiment')!r} with {b.get('experiment')!r}")
    ma, mb = a.get("metrics", {}), b.get("metrics", {})
    if pairs is None:
        names = [(k, k) for k in sorted(set(ma) & set(mb))]
        missing = sorted(set(ma) ^ set(mb))
    else:
        names = [(ka, kb) for ka, kb in pairs.items() if ka in ma and kb in mb]
        missing = sorted([ka for ka in pairs if ka not in ma] + [kb for kb in pairs.values() if kb not in mb])
    rows = []
    for ka, kb in names:
        va, vb = ma[ka]["value"], mb[kb]["value"]
        if va == vb and pairs is None:
            continue
        tol = (ma[ka].get("tolerance") or 0.0) + (mb[kb].get("tolerance") or 0.0)
        delta = vb - va
        rows.append({"metric": ka if ka == kb else f"{ka}:{kb}", "a": va, "b": vb, "delta": delta,
                     "combined_tolerance": tol, "flagged": bool(abs(delta) > tol)})
    return Comparison(rows, missing)
