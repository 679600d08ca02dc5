"""Experiment configuration, replica orchestration and the ``arwlab`` command line.

Every replica draws its seed from ``(master_seed, campaign, size, replica)``
(or from the estimator's own seed spawning, so campaign output agrees with
the library estimators), and results are reduced in replica order. Output is
therefore identical whatever the number of workers.
"""

from __future__ import annotations

import argparse
import configparser
import io
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize, stats

from . import arw_engine as eng
from .arw_engine import CSV_HEADER, BudgetExceeded, Interval, replica_seed, stabilize
from .branching import MigrationSchedule, geometric_sum_sample, gw_exact_law, janson_bound, signed_gw_batch
from .correspondence import (
    EnumerationBudgetExceeded,
    OdometerClassKey,
    chi,
    count_paths,
    enumerate_paths,
    enumerate_stable_odometers,
    phi,
    theta,
)
from .instructions import SeededStacks
from .layer_percolation import (
    Cell,
    MemoryBudgetExceeded,
    SampledFamily,
    box_bounds,
    box_covered,
    box_event,
    greedy_block_endpoints,
    infection_set,
    max_row_full,
    replica_seeds,
)
from .odometer_core import Configuration, height
from .stats import DensityEstimate, jackknife, jackknife_mean

__all__ = [
    "CAMPAIGNS",
    "ConfigInvalid",
    "ExperimentConfig",
    "Report",
    "AgreementReport",
    "DensityEstimate",
    "load_config",
    "run_experiment",
    "compare_densities",
    "lower_bound_rate",
    "row_bound_root",
    "abelian_instance",
    "least_action_instance",
    "correspondence_instance",
    "branching_law_checks",
    "janson_checks",
    "main",
]

CAMPAIGNS = (
    "dd",
    "ps",
    "cycle",
    "rho-star",
    "verify-correspondence",
    "verify-abelian",
    "box-coverage",
    "bad-event",
    "branching-laws",
)
_TAGS = {name: i + 1 for i, name in enumerate(CAMPAIGNS)}
_DEFAULT_SIZES = {
    "dd": (200,),
    "ps": (200,),
    "cycle": (128,),
    "rho-star": (4096,),
    "verify-correspondence": (6,),
    "verify-abelian": (12,),
    "box-coverage": (120,),
    "bad-event": (40,),
    "branching-laws": (0,),
}
_RECOVERABLE = (BudgetExceeded, MemoryBudgetExceeded, EnumerationBudgetExceeded)


class ConfigInvalid(ValueError):
    """The experiment configuration is malformed or out of range."""


@dataclass
class ExperimentConfig:
    """One campaign run.

    ``params`` carries campaign-specific keys: ``rho`` (cycle, box-coverage,
    bad-event), ``k`` (rho-star), ``delta`` (box-coverage), ``kind``
    (bad-event).
    """

    campaign: str
    lam: float = 1.0
    sizes: tuple = ()
    replicas: int = 1
    master_seed: int | None = None
    budget: int | None = None
    out: str | None = None
    jobs: int | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.master_seed is None:
            self.master_seed = default_seed()
        if not self.sizes:
            self.sizes = _DEFAULT_SIZES.get(self.campaign, ())
        self.sizes = tuple(int(x) for x in self.sizes)
        self.validate()

    def validate(self):
        if self.campaign not in CAMPAIGNS:
            raise ConfigInvalid(f"unknown campaign {self.campaign!r}")
        if not (isinstance(self.lam, (int, float)) and self.lam > 0 and math.isfinite(self.lam)):
            raise ConfigInvalid("lambda must be a positive real")
        if int(self.replicas) < 1:
            raise ConfigInvalid("replicas must be at least 1")
        if self.jobs is not None and int(self.jobs) < 1:
            raise ConfigInvalid("jobs must be at least 1")
        if self.budget is not None and int(self.budget) < 0:
            raise ConfigInvalid("budget must be nonnegative")
        if any(x < 0 for x in self.sizes):
            raise ConfigInvalid("sizes must be nonnegative")
        c, p = self.campaign, self.params
        if c in ("cycle", "box-coverage", "bad-event") and "rho" not in p:
            raise ConfigInvalid(f"campaign {c} needs rho")
        if "rho" in p and not float(p["rho"]) > 0:
            raise ConfigInvalid("rho must be positive")
        if c == "cycle" and not float(p["rho"]) < 1:
            raise ConfigInvalid("cycle density must lie in (0, 1)")
        if c == "rho-star":
            k = int(p.get("k", 32))
            if k < 1 or any(n % k for n in self.sizes):
                raise ConfigInvalid("rho-star horizons must be multiples of k")
        if c == "box-coverage":
            rho, delta = float(p["rho"]), float(p.get("delta", 0.05))
            if any(n % 2 for n in self.sizes) or delta < 0 or rho * (1 + delta) > 1:
                raise ConfigInvalid("box coverage needs even n, delta >= 0 and rho (1 + delta) <= 1")
        if c == "bad-event" and p.get("kind", "cell") not in ("cell", "box"):
            raise ConfigInvalid("kind must be cell or box")
        if c == "ps" and any(n < 1 for n in self.sizes):
            raise ConfigInvalid("point source needs N >= 1")
        if c == "cycle" and any(n < 2 for n in self.sizes):
            raise ConfigInvalid("cycle needs n >= 2")


def default_seed() -> int:
    raw = os.environ.get("ARWLAB_SEED", "0")
    try:
        return int(raw, 0)
    except ValueError as exc:
        raise ConfigInvalid(f"ARWLAB_SEED={raw!r} is not an integer") from exc


def _parse_value(key: str, raw: str):
    if key in ("sizes",):
        return tuple(int(x) for x in raw.replace(",", " ").split())
    if key in ("replicas", "budget", "jobs", "master_seed", "seed", "k"):
        return int(raw, 0)
    if key in ("lambda", "lam", "rho", "delta"):
        return float(raw)
    return raw.strip()


def load_config(path: str | os.PathLike, campaign: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Read ``key = value`` pairs from the section named after the campaign.

    A ``[DEFAULT]`` section applies to every campaign; ``overrides`` (usually
    command-line flags) win over file values.
    """
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
    if campaign is None:
        sections = cp.sections()
        if len(sections) != 1:
            raise ConfigInvalid("name the campaign when the file has several sections")
        campaign = sections[0]
    values = dict(cp.defaults())
    if cp.has_section(campaign):
        values.update(cp.items(campaign))
    try:
        parsed = {k: _parse_value(k, v) for k, v in values.items()}
    except ValueError as exc:
        raise ConfigInvalid(str(exc)) from exc
    parsed.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return _config_from_mapping(campaign, parsed)


def _config_from_mapping(campaign: str, m: dict) -> ExperimentConfig:
    m = dict(m)
    known = {
        "lam": m.pop("lambda", m.pop("lam", 1.0)),
        "sizes": m.pop("sizes", ()),
        "replicas": m.pop("replicas", 1),
        "master_seed": m.pop("seed", m.pop("master_seed", None)),
        "budget": m.pop("budget", None),
        "out": m.pop("out", None),
        "jobs": m.pop("jobs", None),
    }
    return ExperimentConfig(campaign, params=m, **known)


# ----------------------------------------------------------------------------
# single-instance checks


def _random_instance(rng, n_lo: int, n_hi: int, max_count: int):
    n = int(rng.integers(n_lo, n_hi + 1))
    lam = float(rng.uniform(0.3, 2.0))
    sigma = Configuration.active(rng.integers(0, max_count + 1, n + 1))
    return n, lam, sigma, SeededStacks(int(rng.integers(2**62)), lam)


def abelian_instance(seed: int) -> bool:
    """Sweep and random-site toppling give identical odometers and final configurations."""
    rng = np.random.default_rng(seed)
    n, _, sigma, src = _random_instance(rng, 0, 12, 3)
    a = stabilize(sigma, Interval(0, n), src, policy="sweep")
    b = stabilize(sigma, Interval(0, n), src, policy="random", rng_seed=int(rng.integers(2**31)))
    same_config = np.array_equal(a.final_config.counts, b.final_config.counts) and np.array_equal(
        a.final_config.sleeping, b.final_config.sleeping
    )
    return a.odometer == b.odometer and same_config and a.tau == b.tau


def least_action_instance(seed: int, budget: int = 2 * 10**5, u0_slack: int = 3):
    """Least action and its dual against all weakly stable odometers with ``u(0) <= u_true(0) + u0_slack``.

    Returns ``None`` when the enumeration exceeds ``budget`` nodes.
    """
    rng = np.random.default_rng(seed)
    n, _, sigma, src = _random_instance(rng, 1, 6, 2)
    res = stabilize(sigma, Interval(0, n), src)
    u = res.odometer
    key = OdometerClassKey(sigma, 0, 0, n)
    try:
        weak = enumerate_stable_odometers(src, key, mode="weak", u0_range=range(0, u(0) + u0_slack + 1), budget=budget)
    except EnumerationBudgetExceeded:
        return None
    if u not in weak:
        return False
    below = all(u(v) <= w(v) for w in weak for v in range(n + 1))
    left = [sum(height(w, sigma, src, v) for v in range(n + 1)) for w in weak]
    return below and res.sleepers == max(left)


def correspondence_instance(seed: int, path_cap: int = 5000):
    """``phi`` is a bijection from canonical class members to infection paths, and ``phi . chi = id``.

    Returns ``None`` when the instance has more than ``path_cap`` paths.
    """
    rng = np.random.default_rng(seed)
    n, _, sigma, src = _random_instance(rng, 1, 6, 2)
    key = OdometerClassKey(sigma, int(rng.integers(0, 8)), int(rng.integers(-2, 4)), n)
    prims = theta(src, key)
    if count_paths(prims, n) > path_cap:
        return None
    odometers = enumerate_stable_odometers(src, key)
    paths = enumerate_paths(prims, n)
    images = [phi(u, src, key, prims) for u in odometers]
    if len(set(images)) != len(images) or set(images) != set(paths) or len(paths) != len(images):
        return False
    return all(phi(chi(p, src, key, prims), src, key, prims) == p for p in paths)


def branching_law_checks(runs: int = 10**5, seed: int = 0, alpha: float = 1e-3) -> dict:
    """Exact-law tests for the critical geometric process started from one member.

    Survival at ``j in {1, 4, 9}`` is a binomial test; the conditional law
    given survival at ``j = 9`` and the unit-immigration law at ``j = 5`` are
    chi-square goodness-of-fit tests with the tail lumped at expected count 5.
    """
    out = {}
    X = signed_gw_batch(1, MigrationSchedule.constant(0, 9), 9, runs, replica_seed(seed, 0xA1))
    for j in (1, 4, 9):
        law = gw_exact_law(j)
        hits = int((X[:, j] > 0).sum())
        p = stats.binomtest(hits, runs, law.survival).pvalue
        out[f"survival_j{j}"] = (hits / runs, p, p > alpha)
    alive = X[X[:, 9] > 0, 9]
    out["conditional_j9"] = _chi_square(alive - 1, 1.0 / 10, alpha)
    Y = signed_gw_batch(1, MigrationSchedule.constant(1, 5), 5, runs, replica_seed(seed, 0xA2))[:, 5]
    out["unit_immigration_j5"] = _chi_square(Y - 1, 1.0 / 6, alpha)
    return out


def _chi_square(geo_samples: np.ndarray, p: float, alpha: float):
    """Chi-square of samples against Geo(p) on {0, 1, ...}."""
    n = len(geo_samples)
    kmax = 0
    while n * p * (1 - p) ** (kmax + 1) >= 5:
        kmax += 1
    probs = p * (1 - p) ** np.arange(kmax + 1)
    probs = np.append(probs, 1 - probs.sum())
    counts = np.bincount(np.minimum(geo_samples, kmax + 1), minlength=kmax + 2)[: kmax + 2]
    stat, pval = stats.chisquare(counts, n * probs)
    return float(stat), float(pval), bool(pval > alpha)


def janson_checks(sets: int = 20, samples: int = 10**5, seed: int = 0) -> list[dict]:
    """Empirical tails of sums of ``1 + Geo(p_i)`` against the Janson-type bound on both sides."""
    rng = np.random.default_rng(replica_seed(seed, 0xA3))
    out = []
    for i in range(sets):
        N = int(rng.integers(1, 40))
        ps = rng.uniform(0.05, 0.95, N)
        mean = float((1 / ps).sum())
        X = geometric_sum_sample(ps, samples, replica_seed(seed, 0xA4, i))
        p_star = float(ps.min())
        # upper side: nu >= E X; lower side: nu <= E X
        nu_up = mean * float(rng.uniform(1.0, 1.3))
        nu_lo = mean * float(rng.uniform(0.7, 1.0))
        ts = np.linspace(0, 3 * mean, 61)
        emp_up = np.array([(X - nu_up >= t).mean() for t in ts])
        emp_lo = np.array([(X - nu_lo <= -t).mean() for t in ts])
        ok = bool(np.all(emp_up <= janson_bound(p_star, nu_up, ts)) and np.all(emp_lo <= janson_bound(p_star, nu_lo, ts)))
        out.append({"N": N, "p_star": p_star, "nu_up": nu_up, "nu_lo": nu_lo, "ok": ok})
    return out


# ----------------------------------------------------------------------------
# replica workers


def _blank_row(campaign: str, lam: float, size: int, seed: int, replica: int) -> dict:
    row = dict.fromkeys(CSV_HEADER, "")
    row.update(model=campaign, **{"lambda": repr(float(lam))}, n_or_N=size, seed=seed, replica=replica)
    return row


def _replica(task) -> tuple[dict, float | None, str]:
    """``(csv row, value, status)`` for one replica; status is ``ok``, ``fail``, ``skip``, ``censored`` or an error name."""
    campaign, lam, size, replica, seed, budget, params = task
    row = _blank_row(campaign, lam, size, seed, replica)
    try:
        if campaign == "dd":
            r = eng.driven_dissipative_sample(size, lam, seed, **_b(budget))
            row.update(sleepers=r.sleepers, tau=r.tau, emitted_left=r.emitted_left, emitted_right=r.emitted_right, span_lo=0, span_hi=size)
            return row, r.sleepers / (size + 1), "ok"
        if campaign == "ps":
            r = eng.point_source(size, lam, seed, budget)
            res = r.result
            row.update(sleepers=res.sleepers, tau=res.tau, emitted_left=0, emitted_right=0, span_lo=r.sleepers_span[0], span_hi=r.sleepers_span[1])
            return row, size / r.L, "ok"
        if campaign == "cycle":
            cap = budget if budget is not None else eng.DEFAULT_BUDGET
            try:
                tau = eng.cycle_fixed_energy(size, float(params["rho"]), lam, seed, cap)
            except BudgetExceeded as exc:
                row.update(tau=exc.tau)
                return row, float(exc.tau), "censored"
            row.update(tau=tau, span_lo=0, span_hi=size - 1)
            return row, float(tau), "ok"
        if campaign == "rho-star":
            k = int(params.get("k", 32))
            r_n, s_n = greedy_block_endpoints(lam, k, size, seed, **_b(budget))[-1]
            row.update(sleepers=s_n, span_lo=0, span_hi=r_n)
            return row, s_n / size, "ok"
        if campaign == "box-coverage":
            cols, rows = box_bounds(size, float(params["rho"]), float(params.get("delta", 0.05)))
            iset = infection_set(Cell(0, 0, 0), size, SampledFamily(lam, seed, windowed=True), **_b(budget))
            ok = len(cols) == 0 or len(rows) == 0 or box_covered(iset, cols, rows)
            return row, float(ok), "ok"
        if campaign == "bad-event":
            need = math.ceil(float(params["rho"]) * size - 1e-12)
            if need > size:
                return row, 0.0, "ok"
            if params.get("kind", "cell") == "cell":
                hit = max_row_full(Cell(0, 0, 0), size, SampledFamily(lam, seed, windowed=True), **_b(budget)) >= need
            else:
                hit = box_event(size, need, SampledFamily(lam, seed), **_b(budget))
            return row, float(hit), "ok"
        if campaign == "verify-abelian":
            return row, None, "ok" if abelian_instance(seed) else "fail"
        if campaign == "verify-correspondence":
            res = correspondence_instance(seed)
            return row, None, "skip" if res is None else ("ok" if res else "fail")
    except _RECOVERABLE as exc:
        return row, None, type(exc).__name__
    raise ConfigInvalid(f"campaign {campaign} has no replica worker")


def _b(budget):
    return {} if budget is None else {"budget": budget}


def _seed_for(config: ExperimentConfig, size_index: int, size: int, replica: int, count: int) -> int:
    tag = {"rho-star": 0xE5, "box-coverage": 0xB0, "bad-event": 0xBE}.get(config.campaign)
    if tag is not None:
        # the layer-percolation estimators spawn their replica seeds this way
        return replica_seeds(config.master_seed, count, tag)[replica]
    return replica_seed(config.master_seed, _TAGS[config.campaign], size_index, size, replica)


@dataclass
class Report:
    rows: list
    summary: dict

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_HEADER, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow(r)
        return buf.getvalue()

    def write(self, path: str | os.PathLike) -> tuple[Path, Path]:
        """CSV to ``path`` and the summary to ``path`` with suffix ``.summary.json``."""
        path = Path(path)
        path.write_text(self.csv_text())
        js = path.with_suffix(".summary.json")
        js.write_text(json.dumps(self.summary, indent=2, sort_keys=True) + "\n")
        return path, js


def _map(tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [_replica(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(_replica, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


def _statistic(campaign: str, values: np.ndarray) -> tuple[float, float]:
    if campaign == "cycle":
        return jackknife(values, np.median)
    return jackknife_mean(values)


def run_experiment(config: ExperimentConfig) -> Report:
    """Run every replica of every size and reduce in replica order."""
    config.validate()
    jobs = int(config.jobs or os.cpu_count() or 1)
    if config.campaign == "branching-laws":
        return _branching_report(config)
    rows, estimates = [], []
    counts: dict[str, int] = {}
    for si, size in enumerate(config.sizes):
        tasks = [
            (config.campaign, float(config.lam), size, r, _seed_for(config, si, size, r, config.replicas), config.budget, dict(config.params))
            for r in range(config.replicas)
        ]
        results = _map(tasks, jobs)
        vals = []
        for row, value, status in results:
            rows.append(row)
            counts[status] = counts.get(status, 0) + 1
            if value is not None and status in ("ok", "censored"):
                vals.append(value)
        est = {"size": size, "replicas_used": len(vals)}
        if vals:
            point, se = _statistic(config.campaign, np.asarray(vals, dtype=float))
            est.update(point=point, stderr=se)
        if config.campaign == "cycle":
            est["censored"] = sum(1 for _, _, s in results if s == "censored")
        estimates.append(est)
    last = estimates[-1] if estimates else {}
    summary = {
        "campaign": config.campaign,
        "params": _params_record(config),
        "point": last.get("point"),
        "stderr": last.get("stderr"),
        "replicas": config.replicas,
        "pass_fail_counts": {"pass": counts.pop("ok", 0), "fail": counts.pop("fail", 0), **dict(sorted(counts.items()))},
        "estimates": estimates,
    }
    return Report(rows, summary)


def _params_record(config: ExperimentConfig) -> dict:
    d = asdict(config)
    d.pop("out")
    d.pop("jobs")
    d["lambda"] = d.pop("lam")
    d["sizes"] = list(d["sizes"])
    return d


def _branching_report(config: ExperimentConfig) -> Report:
    runs = int(config.params.get("runs", 10**5))
    laws = branching_law_checks(runs, config.master_seed)
    jan = janson_checks(20, runs, config.master_seed)
    passed = sum(1 for v in laws.values() if v[2]) + sum(1 for j in jan if j["ok"])
    total = len(laws) + len(jan)
    summary = {
        "campaign": config.campaign,
        "params": _params_record(config),
        "point": None,
        "stderr": None,
        "replicas": runs,
        "pass_fail_counts": {"pass": passed, "fail": total - passed},
        "laws": {k: {"statistic": v[0], "pvalue": v[1], "pass": v[2]} for k, v in laws.items()},
        "janson": jan,
    }
    return Report([], summary)


# ----------------------------------------------------------------------------
# density comparison and bounds


def lower_bound_rate(lam: float) -> float:
    """``lam / (1/2 + lam)``."""
    return lam / (0.5 + lam)


def row_bound_root(lam: float) -> float:
    """Root in ``(0, 1)`` of ``2 l0^rho (e / (1 - rho))^(1 - rho) = 1`` with ``l0 = lam / (1 + lam)``; needs ``lam < 1``."""
    l0 = lam / (1 + lam)
    if not 0 < 2 * l0 < 1:
        raise ValueError("the row bound is below 1 near rho = 1 only when lam < 1")

    def g(rho):
        return math.log(2) + rho * math.log(l0) + (1 - rho) * (1 - math.log(1 - rho))

    return optimize.brentq(g, 1e-12, 1 - 1e-12, xtol=1e-14)


@dataclass
class AgreementReport:
    estimates: dict
    z_scores: dict
    gaps: dict
    agree: dict
    allowance: float = 0.02

    @property
    def all_agree(self) -> bool:
        return all(self.agree.values())


def compare_densities(
    lam: float,
    dd_n: int,
    ps_N: int,
    rho_star_params: dict | None = None,
    replicas: int = 200,
    seed: int = 0,
    jobs: int | None = None,
    ps_replicas: int | None = None,
) -> AgreementReport:
    """Driven-dissipative, point-source and greedy layer-percolation estimates with pairwise z-scores.

    A pair agrees when ``|difference| <= 0.02 + 3 * combined stderr``.
    ``rho_star_params`` holds ``k``, ``n`` and ``replicas`` (default 32, 4096, 64).
    """
    rp = {"k": 32, "n": 4096, "replicas": 64, **(rho_star_params or {})}
    ests = {}
    for name, campaign, size, reps in (
        ("driven-dissipative", "dd", dd_n, replicas),
        ("point-source", "ps", ps_N, ps_replicas or replicas),
        ("layer-percolation", "rho-star", rp["n"], rp["replicas"]),
    ):
        cfg = ExperimentConfig(campaign, lam, (size,), reps, seed, jobs=jobs, params={"k": rp["k"]} if campaign == "rho-star" else {})
        s = run_experiment(cfg).summary
        ests[name] = DensityEstimate(s["point"], s["stderr"], reps, campaign, seed, {"size": size})
    z, gaps, agree = {}, {}, {}
    names = list(ests)
    for i in range(3):
        for j in range(i + 1, 3):
            a, b = ests[names[i]], ests[names[j]]
            se = math.hypot(a.stderr, b.stderr)
            d = a.point - b.point
            pair = f"{names[i]}|{names[j]}"
            gaps[pair] = d
            z[pair] = d / se if se > 0 else math.inf * np.sign(d)
            agree[pair] = abs(d) <= 0.02 + 3 * se
    return AgreementReport(ests, z, gaps, agree)


# ----------------------------------------------------------------------------
# command line


class _ArgError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgError(message)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="arwlab", description="Activated random walk and layer percolation experiments.")
    p.add_argument("campaign", choices=CAMPAIGNS)
    p.add_argument("--config", help="key = value file with one section per campaign")
    p.add_argument("--lambda", dest="lam", type=float)
    size = p.add_mutually_exclusive_group()
    size.add_argument("--n", dest="sizes", type=int, nargs="+", help="interval, cycle or horizon sizes")
    size.add_argument("--particles", dest="sizes", type=int, nargs="+", help="point-source particle counts")
    p.add_argument("--rho", type=float)
    p.add_argument("--k", type=int, help="greedy block length for rho-star")
    p.add_argument("--delta", type=float, help="box half-width factor for box-coverage")
    p.add_argument("--kind", choices=("cell", "box"), help="event kind for bad-event")
    p.add_argument("--replicas", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--budget", type=int)
    p.add_argument("--out", help="CSV path; the summary goes next to it as .summary.json")
    return p


def main(argv=None) -> int:
    """Entry point: 0 on success, 2 on an invalid configuration, 3 on a failed verification."""
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except _ArgError as exc:
        print(f"arwlab: {exc}", file=sys.stderr)
        return 2
    flags = {
        "lambda": args.lam,
        "sizes": tuple(args.sizes) if args.sizes else None,
        "rho": args.rho,
        "k": args.k,
        "delta": args.delta,
        "kind": args.kind,
        "replicas": args.replicas,
        "seed": args.seed,
        "jobs": args.jobs,
        "budget": args.budget,
        "out": args.out,
    }
    try:
        if args.config:
            config = load_config(args.config, args.campaign, flags)
        else:
            config = _config_from_mapping(args.campaign, {k: v for k, v in flags.items() if v is not None})
        report = run_experiment(config)
    except ConfigInvalid as exc:
        print(f"arwlab: invalid configuration: {exc}", file=sys.stderr)
        return 2
    if config.out:
        report.write(config.out)
    print(json.dumps(report.summary, sort_keys=True))
    verify = config.campaign.startswith("verify") or config.campaign == "branching-laws"
    if verify and report.summary["pass_fail_counts"]["fail"]:
        return 3
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
