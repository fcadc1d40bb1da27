"""Monte-Carlo experiments: configuration, execution and the report format.

Every experiment is a pure function of its :class:`ExperimentConfig`; the
thread count only changes how chunks of chains are scheduled, never their
random streams or the order of reduction.
"""

from __future__ import annotations

import json
import math
import subprocess
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml
from scipy import stats

from . import __version__
from .bounds import (
    BoundParams,
    constants_c,
    estimate_theta,
    lemma_sum_scan,
    margin_and_lipschitz,
    mse_bound,
)
from .errors import ConfigError, InvalidArgumentError, NumericFailureError, QDecayError
from .gridworld import GridworldSpec, build_gridworld
from .inference import (
    GaussianChainConfig,
    batch_statistic,
    clt_projections,
    coupling_inputs,
    ks_distance,
    normal_qq_correlation,
    qq_pairs,
    random_unit_directions,
    run_gaussian_chains,
    tail_pr_average,
    type7_quantiles,
)
from .mdp import Mdp, load_mdp, solve_q_star
from .qlearning import RunConfig, SamplingTable, map_chunks, run_chains
from .rng import BlockStreams, Purpose
from .schedules import Schedule, admissible_eta_bound, parse_schedule, tail_window

__all__ = [
    "KINDS",
    "ExperimentConfig",
    "Table",
    "Check",
    "ExperimentReport",
    "default_config",
    "load_config",
    "run_experiment",
    "run_compare_schedules",
    "run_final_error_vs_n",
    "run_qq_invariance",
    "run_clt_qq",
    "run_pr_vs_tailpr",
    "run_reward_sweep",
    "run_bounds_check",
    "run_bootstrap_coverage",
    "misspecified_steps",
]

KINDS = (
    "compare_schedules",
    "final_error_vs_n",
    "qq_invariance",
    "clt_qq",
    "pr_vs_tailpr",
    "reward_sweep",
    "bounds_check",
    "bootstrap_coverage",
)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    """Knobs of one experiment.

    ``mdp`` is ``{"gridworld": {...}}`` (fields of :class:`GridworldSpec`)
    or ``{"file": path}``.  Kind-specific settings go in ``options``.
    """

    kind: str
    mdp: dict = field(default_factory=lambda: {"gridworld": {}})
    schedules: list = field(default_factory=list)
    n: int | None = None
    n_grid: list | None = None
    B: int = 100
    seed: int = 0
    nu: float = 1.0
    c: float = 1.0
    out: str | None = None
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if not isinstance(self.B, int) or self.B < 1:
            raise ConfigError("B must be a positive integer")
        if self.n is not None and self.n < 1:
            raise ConfigError("n must be positive")
        if self.n_grid is not None:
            grid = [int(v) for v in self.n_grid]
            if not grid or grid != sorted(grid) or len(set(grid)) != len(grid) or grid[0] < 1:
                raise ConfigError("n_grid must be a strictly ascending list of positive integers")
            self.n_grid = grid
        if not (self.c > 0 and self.nu > 0):
            raise ConfigError("c and nu must be positive")
        if not isinstance(self.mdp, dict) or not ({"gridworld", "file"} & set(self.mdp)):
            raise ConfigError("mdp must contain a 'gridworld' or 'file' entry")
        self.schedules = [str(s) for s in self.schedules]

    def opt(self, key, default=None):
        return self.options.get(key, default)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return ExperimentConfig.from_dict(data)


_DEFAULT_SCHEDULES = ["const:0.05", "poly:0.05,0.65", "pd2z:0.05,1", "pd2z:0.05,2", "pd2z:0.05,3"]


def default_config(kind: str) -> ExperimentConfig:
    """Full-scale defaults for each experiment kind."""
    base = {"kind": kind}
    if kind == "compare_schedules":
        base.update(schedules=_DEFAULT_SCHEDULES, n=5000, B=1000)
    elif kind == "final_error_vs_n":
        base.update(
            schedules=["const:0.05", "pd2z:0.05,1", "pd2z:0.05,2", "pd2z:0.05,3"],
            n_grid=[500, 1000, 2000, 4000, 8000],
            B=500,
        )
    elif kind == "qq_invariance":
        base.update(schedules=["pd2z:0.05,1", "poly:0.05,0.65"], n=5000, B=500)
    elif kind == "clt_qq":
        base.update(schedules=["pd2z:0.05,1"], n_grid=[5000, 10000], B=1000, options={"directions": 6})
    elif kind == "pr_vs_tailpr":
        base.update(schedules=["pd2z:0.05,1"], n_grid=[1000, 1500, 2000, 2500, 3000, 3500, 4000, 4500, 5000], B=1000)
    elif kind == "reward_sweep":
        base.update(
            mdp={"gridworld": {"gamma": 0.99}},
            schedules=["const:{eta}", "poly:{eta},0.65", "pd2z:{eta},1"],
            n=20000,
            B=500,
            options={"eta_grid": [round(0.1 * k, 1) for k in range(1, 10)]},
        )
    elif kind == "bounds_check":
        base.update(schedules=["pd2z:0.05,1"], n=5000, B=200)
    elif kind == "bootstrap_coverage":
        base.update(schedules=["pd2z:0.05,1"], n=5000, B=500, options={"B_boot": 500, "plugin": True})
    return ExperimentConfig(**base)


# ---------------------------------------------------------------------------
# report


def _py(v):
    """Convert numpy scalars to plain Python values for JSON."""
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        return float(v)
    return v


@dataclass
class Table:
    columns: list
    rows: list = field(default_factory=list)

    def add(self, *values):
        if len(values) != len(self.columns):
            raise ValueError(f"row has {len(values)} values for {len(self.columns)} columns")
        self.rows.append([_py(v) for v in values])

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def where(self, **match) -> list[dict]:
        out = []
        for r in self.rows:
            rec = dict(zip(self.columns, r))
            if all(rec[k] == v for k, v in match.items()):
                out.append(rec)
        return out

    def to_dict(self) -> dict:
        return {"columns": list(self.columns), "rows": [list(r) for r in self.rows]}

    @classmethod
    def from_dict(cls, data: dict) -> "Table":
        return cls(list(data["columns"]), [list(r) for r in data["rows"]])


@dataclass
class Check:
    name: str
    passed: bool
    value: object = None
    target: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed), "value": _py(self.value), "target": self.target}


_BUILD = None


def _build_id() -> str:
    global _BUILD
    if _BUILD is None:
        try:
            res = subprocess.run(
                ["git", "describe", "--always", "--tags"],
                cwd=Path(__file__).parent,
                capture_output=True,
                text=True,
                timeout=5,
            )
            _BUILD = res.stdout.strip() or "unknown"
        except (OSError, subprocess.SubprocessError):
            _BUILD = "unknown"
    return _BUILD


@dataclass
class ExperimentReport:
    """All data behind one experiment.

    ``tables`` become CSV files, ``figures`` describe SVG plots drawn from
    tables, ``checks`` record the qualitative claims tested on the data.
    Wall-clock information is kept out of the report so that reruns are
    byte-identical.
    """

    kind: str
    config: dict
    metadata: dict = field(default_factory=dict)
    scalars: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    figures: list = field(default_factory=list)
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def add_check(self, name, passed, value=None, target=""):
        self.checks.append(Check(name, bool(passed), _py(value), target))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "config": self.config,
            "metadata": self.metadata,
            "scalars": {k: _py(v) for k, v in self.scalars.items()},
            "tables": {k: t.to_dict() for k, t in self.tables.items()},
            "figures": self.figures,
            "checks": [c.to_dict() for c in self.checks],
        }

    def to_json(self) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False)
        return text + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentReport":
        return cls(
            kind=data["kind"],
            config=data["config"],
            metadata=data["metadata"],
            scalars=data["scalars"],
            tables={k: Table.from_dict(t) for k, t in data["tables"].items()},
            figures=data["figures"],
            checks=[Check(**c) for c in data["checks"]],
        )

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        return cls.from_dict(json.loads(text))

    def validate(self) -> None:
        """Raise if any numeric cell is not finite."""

        def bad(v):
            return isinstance(v, float) and not math.isfinite(v)

        for name, t in self.tables.items():
            for r in t.rows:
                if any(bad(v) for v in r):
                    raise NumericFailureError(f"non-finite value in table {name!r}: {r}")
        for k, v in self.scalars.items():
            if bad(v):
                raise NumericFailureError(f"non-finite scalar {k!r}")


def _new_report(cfg: ExperimentConfig) -> ExperimentReport:
    return ExperimentReport(
        kind=cfg.kind,
        config=cfg.to_dict(),
        metadata={"package": "qdecay", "version": __version__, "build": _build_id()},
    )


# ---------------------------------------------------------------------------
# helpers


def build_mdp(cfg: ExperimentConfig) -> Mdp:
    spec = cfg.mdp
    if "file" in spec:
        try:
            return load_mdp(spec["file"])
        except OSError as exc:
            raise ConfigError(f"cannot load MDP file {spec['file']}: {exc}") from exc
    try:
        return build_gridworld(GridworldSpec.from_dict(spec.get("gridworld") or {}))
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc)) from exc


def misspecified_steps(n: int, shrink: float) -> int:
    """``n0 = n - floor(shrink * sqrt(n))`` steps for a horizon-``n`` schedule."""
    if shrink < 0:
        raise ConfigError("misspec must be nonnegative")
    return n - math.floor(shrink * math.sqrt(n)) if shrink else n


def _schedule(text: str, n: int | None = None) -> Schedule:
    try:
        return parse_schedule(text, n)
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc)) from exc


def _window_nu(sched: Schedule, cfg: ExperimentConfig) -> float:
    return sched.nu if sched.kind == "pd2z" else cfg.nu


def _mean_sd(x: np.ndarray, axis=0):
    mean = x.mean(axis=axis)
    if x.shape[axis] < 2:
        return mean, np.zeros_like(mean)
    return mean, x.std(axis=axis, ddof=1)


def _run(cfg: ExperimentConfig, mdp, sched, n, q_star, threads, *, steps=None, record="final_only",
         tail=None, q0=0.0, domain=0, prefix_reference=None, observer=None, chains=None):
    rc = RunConfig(
        mdp=mdp,
        schedule=sched,
        n=n,
        steps=steps,
        q0=q0,
        seed=cfg.seed,
        record=record,
        tail=tail,
        sampling=cfg.opt("sampling", "independent"),
        unsafe=bool(cfg.opt("unsafe", False)),
        domain=domain,
    )
    ids = np.arange(cfg.B) if chains is None else chains
    try:
        return run_chains(rc, ids, q_star, threads=threads, prefix_reference=prefix_reference, observer=observer)
    except NumericFailureError as exc:
        raise NumericFailureError(f"schedule {sched.label}: {exc}", step=exc.step) from exc


def _sup_err(x: np.ndarray, q_star: np.ndarray) -> np.ndarray:
    return np.abs(x - q_star).max(axis=-1)


def _initial_q(cfg, q_star):
    q0 = cfg.opt("q0", 0.0)
    if q0 == "q_star":
        return q_star.copy()
    return float(q0)


def _spread(values) -> float:
    values = np.asarray(values, dtype=float)
    return float((values.max() - values.min()) / values.min())


# ---------------------------------------------------------------------------
# experiments


def run_compare_schedules(cfg: ExperimentConfig, threads: int = 1) -> ExperimentReport:
    """Mean and sd of ``|Q_t - Q*|_inf`` over ``B`` chains for each schedule.

    All schedules share random streams (common random numbers), which
    sharpens the comparison without biasing any single curve.
    """
    if not cfg.schedules:
        raise ConfigError("compare_schedules needs at least one schedule")
    mdp = build_mdp(cfg)
    q_star = solve_q_star(mdp)
    n = cfg.n or 5000
    stride = int(cfg.opt("stride", 1))
    report = _new_report(cfg)
    series = Table(["schedule", "t", "mean", "sd"])
    final = Table(["schedule", "mean_final", "sd_final"])
    finals = {}
    for text in cfg.schedules:
        sched = _schedule(text, n)
        batch = _run(cfg, mdp, sched, n, q_star, threads, record="error_series", q0=_initial_q(cfg, q_star))
        mean, sd = _mean_sd(batch.errors)
        ts = sorted(set(range(0, n + 1, stride)) | {n})
        for t in ts:
            series.add(sched.label, t, mean[t], sd[t])
        final.add(sched.label, mean[n], sd[n])
        finals[sched] = float(mean[n])
    report.tables = {"error_series": series, "final_error": final}
    report.figures = [
        {"name": "error_series", "type": "line", "table": "error_series", "x": "t", "y": "mean",
         "band": "sd", "group": "schedule", "logy": True, "title": "mean sup-norm error"}
    ]
    _ordering_checks(report, finals)
    return report


def _ordering_checks(report: ExperimentReport, finals: dict) -> None:
    consts = [v for s, v in finals.items() if s.kind == "const"]
    polys = [v for s, v in finals.items() if s.kind == "poly"]
    pd = {s: v for s, v in finals.items() if s.kind == "pd2z"}
    for s, v in pd.items():
        if consts:
            report.add_check(f"{s.label} < constant", v < min(consts), v, f"< {min(consts):.6g}")
        if polys and s.nu == 1:
            report.add_check(f"{s.label} < polynomial", v < min(polys), v, f"< {min(polys):.6g}")
    nus = [v for s, v in pd.items() if s.nu in (1, 2, 3)]
    if len(nus) >= 2:
        spread = _spread(nus)
        report.add_check("pd2z nu in {1,2,3} within 25%", spread <= 0.25, spread, "(max-min)/min <= 0.25")


def _slope(ns, means) -> tuple[float, float, float]:
    fit = stats.linregress(np.log(ns), np.log(means))
    return float(fit.slope), float(fit.stderr), float(fit.intercept)


def run_final_error_vs_n(cfg: ExperimentConfig, threads: int = 1) -> ExperimentReport:
    """Final error ``|Q_{n,n} - Q*|_inf`` against ``n`` with log-log slope fits."""
    grid = cfg.n_grid or [500, 1000, 1500, 2000, 2500]
    if len(grid) < 3:
        raise ConfigError("final_error_vs_n needs at least three horizons")
    mdp = build_mdp(cfg)
    q_star = solve_q_star(mdp)
    report = _new_report(cfg)
    rows = Table(["schedule", "n", "mean", "sd"])
    slopes = Table(["schedule", "slope", "stderr", "intercept", "theory"])
    curves = {}
    for text in cfg.schedules:
        sched = _schedule(text)
        means = []
        for n in grid:
            batch = _run(cfg, mdp, sched, n, q_star, threads, q0=_initial_q(cfg, q_star))
            mean, sd = _mean_sd(_sup_err(batch.final, q_star))
            rows.add(sched.label, n, mean, sd)
            means.append(float(mean))
        slope, se, icpt = _slope(grid, means)
        theory = -sched.nu / (2 * (sched.nu + 1)) if sched.kind == "pd2z" else 0.0
        slopes.add(sched.label, slope, se, icpt, theory)
        curves[sched] = (slope, means)
    report.tables = {"final_error": rows, "slopes": slopes}
    report.figures = [
        {"name": "final_error", "type": "line", "table": "final_error", "x": "n", "y": "mean", "band": "sd",
         "group": "schedule", "logx": True, "logy": True, "title": "final error against n"}
    ]
    ld2z = [(s, v) for s, v in curves.items() if s.kind == "pd2z" and s.nu == 1]
    const = [(s, v) for s, v in curves.items() if s.kind == "const"]
    for s, (slope, _) in ld2z:
        report.add_check(f"{s.label} slope", abs(slope + 0.25) <= 0.10, slope, "-0.25 +/- 0.10")
    for s, (slope, means) in const:
        report.add_check(f"{s.label} slope", abs(slope) <= 0.05, slope, "0 +/- 0.05")
        for s2, (_, m2) in ld2z:
            ratio = means[-1] / m2[-1]
            report.add_check(f"{s.label} / {s2.label} at n={grid[-1]}", ratio >= 2.0, ratio, ">= 2")
    if 2500 in grid:
        i = grid.index(2500)
        vals = [v[1][i] for s, v in curves.items() if s.kind == "pd2z" and s.nu in (1, 2, 3)]
        if len(vals) >= 2:
            spread = _spread(vals)
            report.add_check("pd2z nu in {1,2,3} within 25% at n=2500", spread <= 0.25, spread, "<= 0.25")
    return report


def _coupling(cfg: ExperimentConfig, mdp: Mdp, q_ref: np.ndarray, seed_offset: int = 0):
    exact = cfg.opt("noise_cov", "empirical") == "exact"
    return coupling_inputs(
        mdp,
        q_ref,
        m=int(cfg.opt("noise_m", 100_000)),
        seed=cfg.seed + seed_offset,
        exact=exact,
        sampling=cfg.opt("sampling", "independent"),
    )


def run_qq_invariance(cfg: ExperimentConfig, threads: int = 1) -> ExperimentReport:
    """Sup-norm partial-sum statistics of Q-chains against Gaussian chains.

    PD2Z schedules use the suffix statistic over the tail window,
    polynomial schedules the prefix statistic over the whole run (started
    at Q*, so the comparison isolates the noise-driven fluctuations).
    """
    if cfg.B < 100:
        raise ConfigError("qq_invariance needs B >= 100")
    mdp = build_mdp(cfg)
    q_star = solve_q_star(mdp)
    n = cfg.n or 5000
    steps = misspecified_steps(n, float(cfg.opt("misspec", 0.0)))
    G, cov = _coupling(cfg, mdp, q_star)
    k = int(cfg.opt("qq_points", 100))
    report = _new_report(cfg)
    qq = Table(["schedule", "statistic", "p", "q_chain", "gaussian"])
    summary = Table(["schedule", "statistic", "qq_correlation", "ks", "ks_null_split", "ks_null_critical"])
    for i, text in enumerate(cfg.schedules):
        sched = _schedule(text, n)
        nu = _window_nu(sched, cfg)
        gcfg = GaussianChainConfig(G, cov, sched, n, seed=cfg.seed, steps=steps, domain=i)
        ids = np.arange(cfg.B)
        if sched.kind == "poly":
            statistic = "prefix_sup"
            q0 = q_star.copy() if cfg.opt("poly_q0", "q_star") == "q_star" else float(cfg.opt("poly_q0"))
            qb = _run(cfg, mdp, sched, n, q_star, threads, steps=steps, q0=q0, domain=i, prefix_reference=q_star)
            gb = run_gaussian_chains(gcfg, ids, prefix=True, threads=threads)
        else:
            statistic = "suffix_sup"
            window = tail_window(n, nu, cfg.c)[0]
            qb = _run(cfg, mdp, sched, n, q_star, threads, steps=steps, record="tail_iterates", tail=window,
                      q0=_initial_q(cfg, q_star), domain=i)
            gb = run_gaussian_chains(gcfg, ids, tail=window, threads=threads)
        q_stat = batch_statistic(qb, statistic, nu, cfg.c, reference=q_star)
        g_stat = batch_statistic(gb, statistic, nu, cfg.c)
        pairs = qq_pairs(q_stat, g_stat, k)
        for p, a, b in zip(pairs.probs, pairs.a, pairs.b):
            qq.add(sched.label, statistic, p, a, b)
        half = cfg.B // 2
        ks = ks_distance(q_stat, g_stat)
        null = ks_distance(g_stat[:half], g_stat[half : 2 * half])
        crit = 1.36 * math.sqrt(2.0 / half)
        summary.add(sched.label, statistic, pairs.correlation, ks, null, crit)
        corr = pairs.correlation if pairs.correlation is not None else 0.0
        report.add_check(f"{sched.label} QQ correlation", corr >= 0.99, pairs.correlation, ">= 0.99")
        report.add_check(f"{sched.label} KS distance", ks <= 0.10, ks, "<= 0.10")
    report.tables = {"qq_pairs": qq, "summary": summary}
    report.figures = [
        {"name": "qq_pairs", "type": "scatter", "table": "qq_pairs", "x": "gaussian", "y": "q_chain",
         "group": "schedule", "diagonal": True, "title": "Q-chain vs Gaussian-chain quantiles"}
    ]
    return report


def run_clt_qq(cfg: ExperimentConfig, threads: int = 1) -> ExperimentReport:
    """Normality of scaled tail averages along random directions."""
    if cfg.B < 200:
        raise ConfigError("clt_qq needs B >= 200")
    mdp = build_mdp(cfg)
    q_star = solve_q_star(mdp)
    grid = cfg.n_grid or [cfg.n or 5000]
    sched0 = _schedule(cfg.schedules[0] if cfg.schedules else "pd2z:0.05,1")
    nu = _window_nu(sched0, cfg)
    K = int(cfg.opt("directions", 6))
    U = random_unit_directions(mdp.dim, K, cfg.seed)
    shrink = float(cfg.opt("misspec", 0.0))
    report = _new_report(cfg)
    summary = Table(["n", "steps", "direction", "normal_qq_correlation", "mean", "sd", "degenerate"])
    qq = Table(["n", "direction", "normal_score", "studentized"])
    sds = {}
    for n in grid:
        steps = misspecified_steps(n, shrink)
        window = tail_window(n, nu, cfg.c)[0]
        batch = _run(cfg, mdp, sched0, n, q_star, threads, steps=steps, record="tail_iterates", tail=window,
                     q0=_initial_q(cfg, q_star))
        est = tail_pr_average(batch, nu, cfg.c)
        proj = clt_projections(est.q_bar, q_star, est.scaling, U)
        corrs = proj.qq_correlations()
        scores = stats.norm.ppf((np.arange(1, cfg.B + 1) - 0.375) / (cfg.B + 0.25))
        for j in range(K):
            summary.add(n, steps, j, corrs[j], proj.mean[j], proj.sd[j], proj.degenerate[j])
            for z, v in zip(scores, np.sort(proj.studentized[j])):
                qq.add(n, j, z, v)
            corr = corrs[j] if corrs[j] is not None else 0.0
            report.add_check(f"n={n} direction {j} normal QQ", corr >= 0.995, corrs[j], ">= 0.995")
        sds[n] = proj.sd
    if len(grid) >= 2:
        ratio = sds[grid[-1]] / sds[grid[0]]
        ratios = Table(["direction", "sd_ratio"])
        for j, r in enumerate(ratio):
            ratios.add(j, r)
            report.add_check(f"direction {j} sd ratio n={grid[-1]}/{grid[0]}", 0.85 <= r <= 1.15, r, "[0.85, 1.15]")
        report.tables["sd_ratio"] = ratios
    report.tables.update({"summary": summary, "normal_qq": qq})
    report.figures = [
        {"name": "normal_qq", "type": "scatter", "table": "normal_qq", "x": "normal_score", "y": "studentized",
         "group": "direction", "diagonal": True, "title": "studentized projections vs normal scores"}
    ]
    return report


def run_pr_vs_tailpr(cfg: ExperimentConfig, threads: int = 1) -> ExperimentReport:
    """Tail average of the last window against the average of all iterates."""
    mdp = build_mdp(cfg)
    q_star = solve_q_star(mdp)
    grid = cfg.n_grid or [cfg.n or 5000]
    sched0 = _schedule(cfg.schedules[0] if cfg.schedules else "pd2z:0.05,1")
    nu = _window_nu(sched0, cfg)
    shrink = float(cfg.opt("misspec", 0.0))
    report = _new_report(cfg)
    rows = Table(["n", "steps", "window", "tail_mean", "tail_sd", "full_mean", "full_sd", "tail_better"])
    for n in grid:
        steps = misspecified_steps(n, shrink)
        window = tail_window(n, nu, cfg.c)[0]
        batch = _run(cfg, mdp, sched0, n, q_star, threads, steps=steps, record="tail_iterates", tail=window,
                     q0=_initial_q(cfg, q_star))
        tail_err = _sup_err(tail_pr_average(batch, nu, cfg.c).q_bar, q_star)
        full_err = _sup_err(batch.iterate_sum / batch.steps, q_star)
        tm, ts = _mean_sd(tail_err)
        fm, fs = _mean_sd(full_err)
        rows.add(n, steps, min(window, steps), tm, ts, fm, fs, tm < fm)
        report.add_check(f"tail < full at n={n}", tm < fm, tm / fm, "ratio < 1")
    long = Table(["estimator", "n", "mean", "sd"])
    for r in rows.rows:
        rec = dict(zip(rows.columns, r))
        long.add("tail_pr", rec["n"], rec["tail_mean"], rec["tail_sd"])
        long.add("full_pr", rec["n"], rec["full_mean"], rec["full_sd"])
    report.tables = {"pr_compare": rows, "pr_series": long}
    report.figures = [
        {"name": "pr_series", "type": "line", "table": "pr_series", "x": "n", "y": "mean", "band": "sd",
         "group": "estimator", "logy": True, "title": "tail vs full averaging"}
    ]
    return report


class _RolloutEvaluator:
    """Greedy-policy rollouts after selected update steps.

    After step ``t`` in ``eval_steps``, each chain starts from a uniformly
    random state and follows the greedy policy of its current iterate for
    ``horizon`` transitions; the score is the undiscounted sum of mean
    rewards ``R(s, a, s')``.  Each chain draws from its own evaluation
    stream, so scores do not depend on batching.
    """

    def __init__(self, mdp: Mdp, seed: int, B: int, eval_steps, horizon: int, domain: int):
        self.table = SamplingTable.from_mdp(mdp)
        self.S, self.A = mdp.n_states, mdp.n_actions
        self.seed, self.horizon, self.domain = seed, horizon, domain
        self.index = {t: i for i, t in enumerate(sorted(eval_steps))}
        self.scores = np.zeros((B, len(self.index)))
        self._streams = {}

    def __call__(self, t, q, ids):
        slot = self.index.get(t)
        if slot is None:
            return
        key = int(ids[0])
        streams = self._streams.get(key)
        if streams is None:
            streams = BlockStreams(self.seed, Purpose.EVALUATION, ids, (self.horizon + 1,), domain=self.domain,
                                   block=32)
            self._streams[key] = streams
        u = streams.next()
        B = len(ids)
        s = np.minimum((u[:, 0] * self.S).astype(np.int64), self.S - 1)
        total = np.zeros(B)
        rows = np.arange(B)
        thr, sup, rew = self.table.thresholds, self.table.support, self.table.rewards
        q3 = q.reshape(B, self.S, self.A)
        for h in range(self.horizon):
            a = np.argmax(q3[rows, s], axis=1)
            d = s * self.A + a
            k = (u[:, h + 1, None] > thr[d]).sum(axis=1)
            total += rew[d, k]
            s = sup[d, k]
        self.scores[ids, slot] = total


def run_reward_sweep(cfg: ExperimentConfig, threads: int = 1) -> ExperimentReport:
    """Episode rewards in the initial and final phases across a grid of base rates."""
    mdp = build_mdp(cfg)
    q_star = solve_q_star(mdp)
    T = cfg.n or 20000
    etas = [float(e) for e in cfg.opt("eta_grid", [0.1, 0.3, 0.5, 0.7, 0.9])]
    if any(not 0 < e <= 1 for e in etas):
        raise ConfigError("eta_grid values must lie in (0, 1]")
    n_init, n_final = int(cfg.opt("initial_episodes", 100)), int(cfg.opt("final_episodes", 1000))
    if n_init + n_final > T:
        raise ConfigError("initial and final phases overlap")
    horizon = int(cfg.opt("rollout_horizon", 50))
    eval_steps = list(range(1, n_init + 1)) + list(range(T - n_final + 1, T + 1))
    bound = admissible_eta_bound(mdp.gamma)
    report = _new_report(cfg)
    rows = Table(["schedule", "eta", "admissible", "initial_mean", "initial_sd", "final_mean", "final_sd"])
    results = {}
    for i, template in enumerate(cfg.schedules):
        for eta in etas:
            sched = _schedule(template.replace("{eta}", repr(eta)), T)
            ev = _RolloutEvaluator(mdp, cfg.seed, cfg.B, eval_steps, horizon, domain=i)
            rc = RunConfig(mdp, sched, T, seed=cfg.seed, q0=_initial_q(cfg, q_star),
                           sampling=cfg.opt("sampling", "independent"), unsafe=True)
            try:
                run_chains(rc, np.arange(cfg.B), threads=threads, observer=ev)
            except NumericFailureError as exc:
                raise NumericFailureError(f"schedule {sched.label}: {exc}", step=exc.step) from exc
            init = ev.scores[:, :n_init].mean(axis=1)
            fin = ev.scores[:, n_init:].mean(axis=1)
            im, isd = _mean_sd(init)
            fm, fsd = _mean_sd(fin)
            rows.add(sched.kind, eta, eta < bound, im, isd, fm, fsd)
            results[(sched.kind, eta)] = (im, isd, fm)
    long = Table(["series", "eta", "mean", "sd"])
    for r in rows.rows:
        rec = dict(zip(rows.columns, r))
        long.add(f"{rec['schedule']} initial", rec["eta"], rec["initial_mean"], rec["initial_sd"])
        long.add(f"{rec['schedule']} final", rec["eta"], rec["final_mean"], rec["final_sd"])
    report.tables = {"reward_sweep": rows, "reward_series": long}
    report.scalars["admissible_eta_bound"] = bound
    report.figures = [
        {"name": "reward_series", "type": "line", "table": "reward_series", "x": "eta", "y": "mean", "band": "sd",
         "group": "series", "title": "episode reward against base learning rate"}
    ]
    kinds = {k for k, _ in results}
    if "const" in kinds and len(etas) >= 2:
        lo, hi = results[("const", min(etas))][2], results[("const", max(etas))][2]
        report.add_check("constant final reward degrades with eta", hi < lo, hi - lo, "< 0")
    for eta in etas:
        if "const" in kinds and "pd2z" in kinds:
            cm, csd, _ = results[("const", eta)]
            pm = results[("pd2z", eta)][0]
            report.add_check(f"pd2z initial within constant band at eta={eta}", abs(pm - cm) <= csd,
                             pm - cm, f"|diff| <= {csd:.6g}")
        if "poly" in kinds and len(kinds) > 1:
            others = [results[(k, eta)][0] for k in kinds if k != "poly"]
            pv = results[("poly", eta)][0]
            report.add_check(f"poly lowest initial at eta={eta}", pv < min(others), pv, f"< {min(others):.6g}")
    return report


def run_bounds_check(cfg: ExperimentConfig, threads: int = 1) -> ExperimentReport:
    """Lemma scan over a parameter grid plus the empirical error envelope."""
    report = _new_report(cfg)
    gammas = cfg.opt("lemma_gammas", [0.1, 0.5, 0.9, 0.99])
    nus = cfg.opt("lemma_nus", [1, 2, 3])
    ps = cfg.opt("lemma_ps", [2, 3])
    ns = cfg.opt("lemma_ns", [100, 1000])
    lemma = Table(["gamma", "nu", "p", "n", "t", "lhs", "rhs", "regime", "holds"])
    tuples = [(g, nu, p, n) for g in gammas for nu in nus for p in ps for n in ns]

    def scan(chunk):
        out = []
        for g, nu, p, n in chunk:
            eta = admissible_eta_bound(g, p) / 2
            c3 = constants_c(eta, g, p)[2]
            out.append(((g, nu, p, n), c3, lemma_sum_scan(c3, eta, nu, p, n)))
        return out

    results = [r for part in map_chunks(lambda ids: scan([tuples[i] for i in ids]), np.arange(len(tuples)),
                                        threads=threads, chunk=4) for r in part]
    violations = 0
    c3_flags = 0
    for (g, nu, p, n), c3, scan_rows in results:
        c3_flags += not (0 < c3 < 1)
        for r in scan_rows:
            lemma.add(g, nu, p, n, r["t"], r["lhs"], r["rhs"], r["regime"], r["holds"])
            violations += not r["holds"]
    report.tables["lemma"] = lemma
    report.scalars["lemma_violations"] = violations
    report.scalars["c3_outside_unit_interval"] = c3_flags
    report.add_check("lemma violations", violations == 0, violations, "== 0")

    if cfg.opt("envelope", True):
        _envelope(cfg, report, threads)
    return report


def _envelope(cfg: ExperimentConfig, report: ExperimentReport, threads: int) -> None:
    mdp = build_mdp(cfg)
    q_star = solve_q_star(mdp)
    n = cfg.n or 5000
    sched = _schedule(cfg.schedules[0] if cfg.schedules else "pd2z:0.05,1", n)
    if sched.kind != "pd2z":
        raise ConfigError("the error envelope is defined for pd2z schedules")
    q0 = _initial_q(cfg, q_star)
    q0_vec = np.full(mdp.dim, q0) if np.ndim(q0) == 0 else q0
    init_gap = float(np.linalg.norm(q0_vec - q_star))
    theta = estimate_theta(mdp, q_star, p=2.0, m=int(cfg.opt("noise_m", 100_000)), seed=cfg.seed)
    params = BoundParams(sched.eta, mdp.gamma, 2.0, sched.nu, n, theta, init_gap)
    batch = _run(cfg, mdp, sched, n, q_star, threads, record="error_series", q0=q0)
    rms = np.sqrt(np.mean(batch.errors**2, axis=0))
    stride = int(cfg.opt("stride", 1))
    table = Table(["t", "rms_error", "bound", "regime"])
    exceed = 0
    for t in range(1, n + 1):
        bound, regime = mse_bound(params, t)
        over = rms[t] > bound
        exceed += over
        if t % stride == 0 or t == n or over:
            table.add(t, rms[t], bound, regime)
    report.tables["envelope"] = table
    report.scalars.update(theta_2_root=theta, init_gap=init_gap, envelope_exceedances=int(exceed),
                          c3=params.c3)
    report.add_check("empirical rms error within bound", exceed == 0, int(exceed), "== 0")
    report.figures.append(
        {"name": "envelope", "type": "line", "table": "envelope_long", "x": "t", "y": "value",
         "group": "curve", "logy": True, "title": "rms sup error and bound"}
    )
    long = Table(["curve", "t", "value"])
    for t, r, b, _ in table.rows:
        long.add("empirical rms", t, r)
    for t, r, b, _ in table.rows:
        long.add("bound", t, b)
    report.tables["envelope_long"] = long
    try:
        m = margin_and_lipschitz(mdp, q_star, trials=int(cfg.opt("margin_trials", 1000)), seed=cfg.seed)
        report.scalars.update(margin=m.delta, lipschitz=m.L, margin_violations=m.violations)
        report.add_check("margin Lipschitz inequality", m.holds, m.violations, "== 0")
    except QDecayError as exc:
        report.add_check("margin Lipschitz inequality", False, str(exc), "unique greedy policy")


def run_bootstrap_coverage(cfg: ExperimentConfig, threads: int = 1) -> ExperimentReport:
    """Coverage of Gaussian-bootstrap quantiles over fresh Q-chains.

    The oracle band uses ``G`` and ``Gamma`` at Q*; the plug-in band uses
    the tail average ``Qhat`` of an independent pilot chain with its greedy
    policy and noise covariance.  Fresh statistics are always centred at
    Q*, the quantity the band is meant to cover.
    """
    B_boot = int(cfg.opt("B_boot", 500))
    levels = [float(v) for v in cfg.opt("levels", [0.90, 0.95])]
    statistic = cfg.opt("statistic", "suffix_sup")
    if statistic == "prefix_sup":
        raise ConfigError("coverage is implemented for the tail statistics")
    mdp = build_mdp(cfg)
    q_star = solve_q_star(mdp)
    n = cfg.n or 5000
    sched = _schedule(cfg.schedules[0] if cfg.schedules else "pd2z:0.05,1", n)
    nu = _window_nu(sched, cfg)
    steps = misspecified_steps(n, float(cfg.opt("misspec", 0.0)))
    window = tail_window(n, nu, cfg.c)[0]
    fresh = _run(cfg, mdp, sched, n, q_star, threads, steps=steps, record="tail_iterates", tail=window,
                 q0=_initial_q(cfg, q_star))
    fresh_stat = batch_statistic(fresh, statistic, nu, cfg.c, reference=q_star)

    modes = {"oracle": q_star}
    if cfg.opt("plugin", False):
        pilot = _run(cfg, mdp, sched, n, q_star, 1, steps=steps, record="tail_iterates", tail=window,
                     q0=_initial_q(cfg, q_star), domain=1, chains=np.array([0]))
        modes["plugin"] = tail_pr_average(pilot, nu, cfg.c).q_bar[0]

    report = _new_report(cfg)
    rows = Table(["mode", "level", "quantile", "coverage", "se", "zero_width"])
    coverage = {}
    for offset, (mode, q_ref) in enumerate(modes.items()):
        G, cov = _coupling(cfg, mdp, q_ref, seed_offset=offset)
        gcfg = GaussianChainConfig(G, cov, sched, n, seed=cfg.seed, steps=steps)
        gb = run_gaussian_chains(gcfg, np.arange(B_boot), tail=window, threads=threads)
        boot = batch_statistic(gb, statistic, nu, cfg.c)
        for level, qv in zip(levels, type7_quantiles(boot, levels)):
            cov_hat = float(np.mean(fresh_stat <= qv))
            se = math.sqrt(cov_hat * (1 - cov_hat) / cfg.B)
            rows.add(mode, level, qv, cov_hat, se, qv == 0.0)
            coverage[(mode, level)] = cov_hat
    report.tables["coverage"] = rows
    if 0.95 in levels:
        c95 = coverage[("oracle", 0.95)]
        report.add_check("oracle 0.95 coverage", 0.91 <= c95 <= 0.99, c95, "[0.91, 0.99]")
    if "plugin" in modes:
        for level in levels:
            d = abs(coverage[("oracle", level)] - coverage[("plugin", level)])
            report.add_check(f"oracle vs plug-in coverage at {level}", d <= 0.05, d, "<= 0.05")
    return report


_RUNNERS = {
    "compare_schedules": run_compare_schedules,
    "final_error_vs_n": run_final_error_vs_n,
    "qq_invariance": run_qq_invariance,
    "clt_qq": run_clt_qq,
    "pr_vs_tailpr": run_pr_vs_tailpr,
    "reward_sweep": run_reward_sweep,
    "bounds_check": run_bounds_check,
    "bootstrap_coverage": run_bootstrap_coverage,
}


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> ExperimentReport:
    report = _RUNNERS[cfg.kind](cfg, threads=threads)
    report.validate()
    return report
