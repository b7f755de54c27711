"""Run configuration and the end-to-end pipeline behind the command line."""

from __future__ import annotations

import dataclasses
import datetime as dt
import hashlib
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .backtest import dm_better, evaluate
from .errors import ConfigError, DegenerateCutoff, PanelVarError, SingularXi
from .market_data import Session, daily_returns, read_ticks, synchronize, write_grid_audit
from .models import DEFAULT_TAUS, KINDS, ModelSpec, build_design, parse_kind
from .portfolio import annualize_return, annualize_var, build_xi, frontier, gmvar_path
from .qreg import bootstrap_se, fit, write_fit_csv
from .realized import compute_measures, correlation_from_covariance, write_covariances, write_measures
from .simulate import DISTRIBUTIONS, SimConfig, simulate_paths, write_ledger
from .var import write_forecasts, rolling_forecast

BENCHMARKS = ("RISKMETRICS", "PORTFOLIO_UQR", "UQR_RV", "UQR_RSV", "UQR_BPV")


@dataclass(frozen=True)
class RunConfig:
    data: str | None = None
    simulate: str | None = None
    models: tuple = ("PQR_RV", "PQR_RSV", "PQR_BPV", "UQR_RV", "PORTFOLIO_UQR", "RISKMETRICS")
    taus: tuple = DEFAULT_TAUS
    window: int = 1000
    lam: float = 0.0
    lag_count: int = 1
    weights: str = "equal"
    statistical: bool = True
    gmvar: bool = True
    frontier: bool = False
    frontier_points: int = 11
    out_dir: str = "out"
    seed: int = 0
    replications: int = 20
    n_assets: int = 5
    days: int = 2613
    intraday_steps: int = 420
    jump_intensity: float = 0.2
    dq_lags: int = 4
    dq_reps: int = 9999
    bootstrap: int = 0
    session_start: str = "09:30"
    session_end: str = "16:00"
    grid_seconds: int = 300
    threads: int | None = None

    def to_dict(self) -> dict:
        """Settings that affect results; output location and worker count are excluded."""
        d = dataclasses.asdict(self)
        d.pop("out_dir")
        d.pop("threads")
        d["models"] = list(self.models)
        d["taus"] = list(self.taus)
        return d

    def digest(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(payload).hexdigest()


_KEYS = {f.name: f for f in dataclasses.fields(RunConfig)}
_ALIASES = {"lambda": "lam", "out-dir": "out_dir", "lags": "lag_count"}


def _coerce(name, raw):
    ftype = str(_KEYS[name].type)
    if name == "models":
        return tuple(parse_kind(m) for m in _split(raw))
    if name == "taus":
        return tuple(float(t) for t in _split(raw))
    if isinstance(raw, str):
        text = raw.strip()
        if name in ("data", "simulate", "threads") and text.lower() in ("", "none"):
            return None
        if "bool" in ftype:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if "int" in ftype and "float" not in ftype and name not in ("data", "simulate"):
            return int(text)
        if "float" in ftype:
            return float(text)
        return text
    return raw


def _split(raw):
    if isinstance(raw, (list, tuple)):
        return [str(x) for x in raw]
    return [p for p in (x.strip() for x in str(raw).split(",")) if p]


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; lists are comma separated."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[_ALIASES.get(key, key.replace("-", "_"))] = value
    return out


def make_config(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Merge file values and flag overrides (flags win) and validate everything at once."""
    merged = {}
    merged.update(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    problems = []
    kwargs = {}
    for key, raw in merged.items():
        name = _ALIASES.get(key, key)
        if name not in _KEYS:
            problems.append(f"unknown key {key!r}")
            continue
        try:
            kwargs[name] = _coerce(name, raw)
        except (ValueError, ConfigError) as exc:
            problems.append(f"{key}: {exc}")
    cfg = None
    if not problems:
        cfg = RunConfig(**kwargs)
        problems = validate(cfg)
    if problems:
        raise ConfigError("; ".join(problems))
    return cfg


def validate(cfg: RunConfig) -> list:
    problems = []
    if any(not 0.0 < t < 1.0 for t in cfg.taus):
        problems.append("taus must lie in (0, 1)")
    if cfg.window < 3:
        problems.append("window must be at least 3")
    if cfg.lam < 0:
        problems.append("lambda must be non-negative")
    if cfg.lag_count < 1:
        problems.append("lag_count must be >= 1")
    if cfg.simulate is not None and cfg.simulate not in DISTRIBUTIONS:
        problems.append(f"simulate must be one of {DISTRIBUTIONS}")
    if cfg.data is not None and not Path(cfg.data).exists():
        problems.append(f"data file {cfg.data!r} not found")
    if cfg.simulate is not None and cfg.window >= cfg.days - 1:
        problems.append("window must be smaller than days - 1")
    if cfg.replications < 1:
        problems.append("replications must be >= 1")
    if cfg.dq_reps < 1 or cfg.dq_lags < 0:
        problems.append("dq_reps >= 1 and dq_lags >= 0 required")
    if cfg.weights != "equal" and not Path(cfg.weights).exists():
        problems.append(f"weights file {cfg.weights!r} not found")
    for m in cfg.models:
        if m not in KINDS:
            problems.append(f"unknown model {m!r}")
    try:
        Session(_parse_time(cfg.session_start), _parse_time(cfg.session_end)).seconds
    except (ValueError, PanelVarError) as exc:
        problems.append(f"session: {exc}")
    return problems


def _parse_time(text: str) -> dt.time:
    return dt.time.fromisoformat(text)


def worker_count(cfg: RunConfig) -> int:
    cap = cfg.threads
    env = os.environ.get("PANELVAR_THREADS")
    if env:
        cap = min(cap or int(env), int(env))
    return max(1, min(cap or (os.cpu_count() or 1), os.cpu_count() or 1))


# ------------------------------------------------------------------ data


@dataclass(frozen=True)
class Dataset:
    panel: object
    measures: object
    returns: object
    sim: object = None


def sim_config(cfg: RunConfig, replication: int = 0) -> SimConfig:
    seed = int(np.random.SeedSequence([cfg.seed, replication]).generate_state(1)[0])
    return SimConfig(
        days=cfg.days,
        intraday_steps=cfg.intraday_steps,
        n_assets=cfg.n_assets,
        error_dist=cfg.simulate,
        jump_intensity=cfg.jump_intensity,
        seed=seed,
    )


def load_dataset(cfg: RunConfig, replication: int = 0) -> Dataset:
    if cfg.data is not None:
        session = Session(_parse_time(cfg.session_start), _parse_time(cfg.session_end))
        panel = synchronize(read_ticks(cfg.data), session, cfg.grid_seconds)
        sim = None
    elif cfg.simulate is not None:
        sim = simulate_paths(sim_config(cfg, replication))
        panel = sim.panel
    else:
        raise ConfigError("either data or simulate must be given")
    return Dataset(panel, compute_measures(panel), daily_returns(panel), sim)


def portfolio_weights(cfg: RunConfig, n: int) -> np.ndarray:
    if cfg.weights == "equal":
        return np.full(n, 1.0 / n)
    w = np.loadtxt(cfg.weights, delimiter=",", ndmin=1).astype(float)
    if len(w) != n or not np.isclose(w.sum(), 1.0):
        raise ConfigError("weights file must hold one weight per asset summing to 1")
    return w


def specs(cfg: RunConfig):
    return [ModelSpec(m, cfg.lag_count, cfg.taus, cfg.lam) for m in cfg.models]


# --------------------------------------------------------------- analyses


def in_sample_fits(cfg: RunConfig, data: Dataset, families=("panel", "univariate"), seed=None):
    """Full-sample fits; rows are ``(model, tau, lam, name, estimate, tstat)``."""
    rows = []
    for spec in specs(cfg):
        if spec.family not in families:
            continue
        base = build_design(spec, data.measures, data.returns)
        for tau in cfg.taus:
            problem = base.with_tau(tau)
            if cfg.bootstrap >= 2:
                bs = bootstrap_se(problem, cfg.bootstrap, seed=(cfg.seed if seed is None else seed))
                for name, est, t in zip(bs.names, bs.estimates, bs.tstat):
                    rows.append((spec.label, tau, cfg.lam, name, float(est), float(t)))
                continue
            f = fit(problem)
            names = [f"alpha[{a}]" for a in data.measures.assets]
            if spec.family == "panel":
                names += list(spec.param_names)
                values = list(f.alphas) + list(f.betas)
            else:
                names += [f"{p}[{a}]" for a in data.measures.assets for p in spec.param_names]
                values = list(f.alphas) + list(np.ravel(f.betas))
            rows += [(spec.label, tau, cfg.lam, n, float(v), None) for n, v in zip(names, values)]
    return rows


def forecasts(cfg: RunConfig, data: Dataset):
    w = portfolio_weights(cfg, len(data.measures.assets))
    out = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateCutoff)
        for spec in specs(cfg):
            out.append(rolling_forecast(spec, data.measures, data.returns, cfg.window, cfg.taus, w))
    return out


def economic(cfg: RunConfig, data: Dataset, series_list):
    """Average GMVaR per model and tau, plus frontier points on the last forecast day.

    VaR forecasts for day ``t+1`` are combined with the ex-post correlation and
    mean returns of day ``t+1``.
    """
    gm_rows = []
    fr_rows = []
    for s in series_list:
        if s.asset_vars is None:
            continue
        omegas = correlation_from_covariance(data.measures.cov[s.origins + 1], data.measures.assets)
        for k, tau in enumerate(s.taus):
            try:
                _, values = gmvar_path(s.asset_vars[k], omegas, tau)
                gm = float(np.mean(annualize_var(values)))
            except (SingularXi, PanelVarError):
                gm = float("nan")
            gm_rows.append((s.model, tau, gm))
            if cfg.frontier:
                mu = annualize_return(np.asarray(data.returns.returns)[s.origins + 1].mean(axis=0))
                try:
                    xi = build_xi(annualize_var(s.asset_vars[k, -1]), omegas[-1], tau)
                except PanelVarError:
                    continue
                targets = np.linspace(mu.min(), mu.max(), cfg.frontier_points)
                for pt in frontier(xi, mu, targets):
                    fr_rows.append((s.model, tau, pt))
    return gm_rows, fr_rows


@dataclass
class ReplicationResult:
    replication: int
    coefs: list = field(default_factory=list)
    evaluation: list = field(default_factory=list)  # (model, tau, coverage, dq_stat, dq_p, loss)
    dm: list = field(default_factory=list)  # (model_a, model_b, tau, stat, p)
    gmvar: list = field(default_factory=list)  # (model, tau, value)


def run_replication(cfg: RunConfig, replication: int) -> ReplicationResult:
    data = load_dataset(cfg, replication)
    res = ReplicationResult(replication)
    res.coefs = in_sample_fits(cfg, data, families=("panel",), seed=replication)
    series_list = forecasts(cfg, data)
    if cfg.statistical:
        dq_seed = int(np.random.SeedSequence([cfg.seed, replication, 1]).generate_state(1)[0])
        rep = evaluate(series_list, cfg.dq_lags, cfg.dq_reps, dq_seed, dq=cfg.dq_lags > 0)
        for (model, tau), r in rep.results.items():
            stat = r.dq.statistic if r.dq else float("nan")
            p = r.dq.p_value if r.dq else float("nan")
            res.evaluation.append((model, tau, r.coverage, stat, p, r.loss))
        for (a, b, tau), d in rep.dm.items():
            res.dm.append((a, b, tau, d.statistic, d.p_value))
    if cfg.gmvar:
        res.gmvar = economic(cfg, data, series_list)[0]
    return res


# ------------------------------------------------------------------ output


def _fmt(x) -> str:
    if x is None:
        return "NA"
    if isinstance(x, float):
        if not math.isfinite(x):
            return "NA"
        return f"{x:.10g}"
    return str(x)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def report_tables(cfg: RunConfig, results, out_dir: Path) -> list:
    """Aggregate replications into the summary tables; returns written file names."""
    out_dir = Path(out_dir)
    written = []
    models = [ModelSpec(m).label for m in cfg.models]
    taus = list(cfg.taus)
    reps = len(results)

    # coefficient means across replications
    acc = {}
    for res in results:
        for model, tau, lam, name, est, _ in res.coefs:
            acc.setdefault((model, tau, name), []).append(est)
    rows = []
    for (model, tau, name), vals in acc.items():
        v = np.array(vals)
        sd = float(v.std(ddof=1)) if len(v) > 1 else float("nan")
        if not name.startswith("alpha["):
            rows.append((model, tau, name, float(v.mean()), sd, len(v)))
    rows.sort(key=lambda r: (models.index(r[0]) if r[0] in models else 99, r[1], r[2]))
    _write_csv(out_dir / "coefficients.csv", ["model", "tau", "param", "mean", "sd", "replications"], rows)
    written.append("coefficients.csv")

    # panel A
    ev = {}
    for res in results:
        for model, tau, cov, stat, p, loss in res.evaluation:
            ev.setdefault((model, tau), []).append((cov, p))
    rows = []
    for model in models:
        for tau in taus:
            vals = ev.get((model, tau))
            if not vals:
                rows.append((model, tau, None, None, None, None, None))
                continue
            cov = np.array([v[0] for v in vals]) * 100
            ps = np.array([v[1] for v in vals], dtype=float)
            viol = float(np.mean(ps[np.isfinite(ps)] < 0.05) * 100) if np.isfinite(ps).any() else None
            rows.append(
                (model, tau, float(cov.mean()), float(cov.max()), float(cov.min()),
                 float(cov.mean() - 100 * tau), viol)
            )
    _write_csv(
        out_dir / "panel_a.csv",
        ["model", "tau", "tau_avg", "tau_max", "tau_min", "tau_avg_dev", "dq_violations"],
        rows,
    )
    written.append("panel_a.csv")

    # panel B: share of replications where the row model is significantly better
    dm = {}
    for res in results:
        for a, b, tau, stat, p in res.dm:
            dm.setdefault((a, b, tau), []).append(dm_better(_DM(stat, p)))
    rows = []
    for a in models:
        for b in models:
            if a == b:
                continue
            for tau in taus:
                vals = dm.get((a, b, tau))
                rows.append((a, b, tau, float(np.mean(vals) * 100) if vals else None))
    if len(models) == 1:
        rows = [(models[0], "NA", "NA", "single model: no pairwise comparison")]
    _write_csv(out_dir / "panel_b.csv", ["model", "benchmark", "tau", "pct_better"], rows)
    written.append("panel_b.csv")

    # GMVaR
    gm = {}
    for res in results:
        for model, tau, val in res.gmvar:
            gm.setdefault((model, tau), []).append(val)
    rows = []
    for model in models:
        for tau in taus:
            vals = gm.get((model, tau))
            if vals is None:
                continue
            v = np.array(vals, dtype=float)
            rows.append((model, tau, float(np.mean(v)) * 100 if np.isfinite(v).all() else None))
    _write_csv(out_dir / "gmvar.csv", ["model", "tau", "gmvar_pct_annual"], rows)
    written.append("gmvar.csv")

    # raw per-replication results
    rows = []
    for res in results:
        for model, tau, cov, stat, p, loss in res.evaluation:
            rows.append((res.replication, model, tau, cov, stat, p, loss))
    _write_csv(
        out_dir / "replications.csv",
        ["replication", "model", "tau", "coverage", "dq_stat", "dq_pvalue", "tick_loss"],
        rows,
    )
    written.append("replications.csv")
    rows = [
        (res.replication, a, b, tau, stat, p) for res in results for a, b, tau, stat, p in res.dm
    ]
    _write_csv(out_dir / "dm.csv", ["replication", "model", "benchmark", "tau", "dm_stat", "p_value"], rows)
    written.append("dm.csv")
    rows = [(res.replication, m, tau, v) for res in results for m, tau, v in res.gmvar]
    _write_csv(out_dir / "gmvar_replications.csv", ["replication", "model", "tau", "gmvar"], rows)
    written.append("gmvar_replications.csv")
    rows = [(res.replication, *c) for res in results for c in res.coefs]
    _write_csv(
        out_dir / "coefficients_replications.csv",
        ["replication", "model", "tau", "lambda", "param", "estimate", "tstat"],
        rows,
    )
    written.append("coefficients_replications.csv")
    return written


@dataclass(frozen=True)
class _DM:
    statistic: float
    p_value: float


def write_manifest(cfg: RunConfig, out_dir: Path, status: str, files, error: str | None = None):
    manifest = {
        "config": cfg.to_dict() if cfg else None,
        "config_sha256": cfg.digest() if cfg else None,
        "seed": cfg.seed if cfg else None,
        "software": {"panelvar": __version__, "numpy": np.__version__},
        "status": status,
        "error": error,
        "outputs": sorted(files),
    }
    with open(Path(out_dir) / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def run_study(cfg: RunConfig, progress=None) -> list:
    """Monte-Carlo study over ``cfg.replications`` simulated panels."""
    if cfg.simulate is None:
        raise ConfigError("the Monte-Carlo study needs a simulated data source")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    workers = worker_count(cfg)
    results = []
    if workers == 1:
        for r in range(cfg.replications):
            results.append(run_replication(cfg, r))
            if progress:
                progress(r + 1, cfg.replications)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(run_replication, cfg, r) for r in range(cfg.replications)]
            for i, f in enumerate(futs):
                results.append(f.result())
                if progress:
                    progress(i + 1, cfg.replications)
    return results


def run_dataset(
    cfg: RunConfig, stages=("measures", "fit", "forecast", "backtest", "portfolio"), files=None
) -> list:
    """Single-dataset pipeline (CSV input or one simulated replication).

    Written file names are appended to ``files`` as they appear, so a caller
    still knows the partial outputs when a later stage fails.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = load_dataset(cfg, 0)
    files = [] if files is None else files
    if "simulate" in stages and data.sim is not None:
        from .market_data import write_ticks

        session = Session(dt.time(9, 30), dt.time(16, 30))
        write_ticks(data.panel, out / "ticks.csv", session)
        write_ledger(data.sim, out / "ledger.csv")
        files += ["ticks.csv", "ledger.csv"]
    if "measures" in stages:
        write_measures(data.measures, out / "measures.csv")
        write_covariances(data.measures, out / "covariances.csv")
        write_grid_audit(data.panel, out / "grid.csv")
        files += ["measures.csv", "covariances.csv", "grid.csv"]
    if "fit" in stages:
        rows = in_sample_fits(cfg, data)
        by_model = {}
        for model, *rest in rows:
            by_model.setdefault(model, []).append(rest)
        for model, rs in by_model.items():
            name = f"fit_{model.lower()}.csv"
            write_fit_csv(rs, out / name)
            files.append(name)
    series_list = None
    if {"forecast", "backtest", "portfolio"} & set(stages):
        series_list = forecasts(cfg, data)
        write_forecasts(series_list, out / "forecasts.csv")
        files.append("forecasts.csv")
    if "backtest" in stages and cfg.statistical:
        rep = evaluate(series_list, cfg.dq_lags, cfg.dq_reps, cfg.seed, dq=cfg.dq_lags > 0)
        rows = []
        for (model, tau), r in rep.results.items():
            rows.append(
                (model, tau, r.coverage, r.dq.statistic if r.dq else None,
                 r.dq.p_value if r.dq else None, r.loss)
            )
        _write_csv(out / "backtest.csv", ["model", "tau", "coverage", "dq_stat", "dq_pvalue", "tick_loss"], rows)
        rows = [(a, b, tau, d.statistic, d.p_value) for (a, b, tau), d in rep.dm.items()]
        if not rows:
            rows = [("NA", "NA", "NA", "single model: no pairwise comparison", "NA")]
        _write_csv(out / "dm.csv", ["model", "benchmark", "tau", "dm_stat", "p_value"], rows)
        files += ["backtest.csv", "dm.csv"]
    if "portfolio" in stages and (cfg.gmvar or cfg.frontier):
        gm_rows, fr_rows = economic(cfg, data, series_list)
        if cfg.gmvar:
            _write_csv(out / "gmvar.csv", ["model", "tau", "gmvar_annual"], gm_rows)
            files.append("gmvar.csv")
        if cfg.frontier:
            from .portfolio import write_frontier

            write_frontier(fr_rows, out / "frontier.csv", len(data.measures.assets))
            files.append("frontier.csv")
    return files
