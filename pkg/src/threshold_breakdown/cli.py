"""Command-line front end: ``threshold-bp <command> [options]``.

Settings come from defaults, then an optional ``key=value`` config file,
then command-line flags, each overriding the previous.  Exit codes: 0 on
success, 2 for configuration errors, 3 for data errors and 4 for numeric
failures.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

from . import __version__
from .asymptotics import (
    asymptotic_variance_bp,
    asymptotic_variance_sensitivity,
    maxbias_curve,
    population_location,
    population_sensitivity,
)
from .bootstrap import BootstrapConfig, bootstrap_bp, bootstrap_sensitivity, pit_uniformity
from .distributions import PopulationModel
from .errors import (
    BreakdownError,
    BudgetError,
    DataError,
    DegenerateError,
    DomainError,
    ExtrapolationError,
    NumericError,
)
from .estimators import as_sample, fit
from .experiments import EXPERIMENTS, run_experiment
from .io import ingest_csv, to_csv, to_json
from .oracle import OracleConfig, brute_force_bp, brute_force_sensitivity, brute_force_test_bp
from .score import ScaleScoreFamily, ScoreFamily
from .sensitivity import (
    EstimatorSpec,
    SchemeConfig,
    breakdown_from_curve,
    sensitivity_curve,
)
from .testaudit import TestSpec, statistic_band, test_bp_bounds, two_sample_bp_bounds

COMMANDS = ("fit", "sensitivity", "breakdown", "test-audit", "bootstrap", "population", "pit",
            "replicate", "oracle")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

DEFAULTS = {
    "input": None, "input2": None, "group_col": None, "column": None, "mad": False,
    "loss": "huber", "delta": None, "efficiency": None,
    "target": "location", "alpha": 0.05, "m": None, "m_grid": None, "eta": None,
    "eta_grid": None, "side": "both", "test": "wald", "sided": "two_sided", "sigma0": None,
    "theta0": 0.0, "budget": "total", "a_grid": False, "boot_B": 1000, "ci_method": "basic",
    "ci_levels": "0.8,0.95", "seed": 0, "format": "csv", "out": None, "oracle": False,
    "threads": 1, "model": "normal", "eps": 0.1, "eps_max": 0.45, "step": 1e-3, "n": 100,
    "M": 1000, "preset": "desk", "experiment": None,
}

_BOOL_KEYS = {"mad", "oracle", "a_grid"}
_INT_KEYS = {"m", "boot_B", "seed", "threads", "n", "M"}
_FLOAT_KEYS = {"delta", "efficiency", "alpha", "eta", "sigma0", "theta0", "eps", "eps_max", "step"}


class ConfigError(BreakdownError):
    """Invalid or inconsistent configuration."""


# ------------------------------------------------------------------ config

def read_config_file(path) -> dict:
    """Plain ``key=value`` lines; ``#`` starts a comment; dashes in keys become underscores."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {path} not found")
    out = {}
    for k, line in enumerate(p.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{k}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in DEFAULTS:
            raise ConfigError(f"{path}:{k}: unknown key {key!r}")
        out[key] = _coerce(key, val)
    return out


def _coerce(key, val):
    if val is None:
        return None
    if key in _BOOL_KEYS:
        if isinstance(val, bool):
            return val
        low = str(val).lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {val!r}")
    try:
        if key in _INT_KEYS:
            return int(val)
        if key in _FLOAT_KEYS:
            return float(val)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {val!r}") from None
    return val


def _int_list(text, name):
    try:
        out = []
        for part in str(text).split(","):
            part = part.strip()
            if ":" in part:
                a, b, *c = (int(s) for s in part.split(":"))
                out.extend(range(a, b + 1, c[0] if c else 1))
            elif part:
                out.append(int(part))
        return out
    except ValueError:
        raise ConfigError(f"{name}: expected integers like '1,2,5' or '0:10'") from None


def _float_list(text, name):
    try:
        return [float(s) for s in str(text).split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"{name}: expected numbers like '0.1,0.5'") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="threshold-bp",
        description="Threshold breakdown points and m-sensitivities of M-estimators and tests.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("experiment", nargs="?", help="experiment id for 'replicate'")
    a = p.add_argument
    a("--config", help="key=value configuration file")
    g = p.add_argument_group("data")
    g.add_argument("--input", help="CSV file with the (first) sample")
    g.add_argument("--input2", help="CSV file with the second sample")
    g.add_argument("--group-col", dest="group_col", help="column splitting one file into two samples")
    g.add_argument("--column", help="value column name or index")
    g.add_argument("--mad", action="store_const", const=True, default=None,
                   help="divide each sample by its normal-consistent MAD")
    g = p.add_argument_group("model")
    g.add_argument("--loss", help="huber, logcosh or selfconcordant (also sign, identity)")
    g.add_argument("--delta", type=float)
    g.add_argument("--efficiency", type=float, help="tune delta to this normal efficiency")
    g.add_argument("--target", choices=("location", "scale", "two_stage", "se_plugin",
                                        "se_restricted", "test"),
                   help="statistic to audit; 'test' selects the test oracle")
    g.add_argument("--model", choices=("normal", "uniform", "cauchy"))
    g = p.add_argument_group("analysis")
    g.add_argument("--alpha", type=float)
    g.add_argument("--m", type=int)
    g.add_argument("--m-grid", dest="m_grid")
    g.add_argument("--eta", type=float)
    g.add_argument("--eta-grid", dest="eta_grid")
    g.add_argument("--side", choices=("plus", "minus", "both"))
    g.add_argument("--test", help="wald, rwald, score, rscore, two-sample or fixed")
    g.add_argument("--sided", choices=("two_sided", "one_sided_upper", "one_sided_lower"))
    g.add_argument("--sigma0", type=float)
    g.add_argument("--theta0", type=float)
    g.add_argument("--budget", choices=("total", "per_sample"))
    g.add_argument("--a-grid", dest="a_grid", action="store_const", const=True, default=None,
                   help="add the A-grid contamination targets")
    g.add_argument("--eps", type=float)
    g.add_argument("--eps-max", dest="eps_max", type=float)
    g.add_argument("--step", type=float)
    g.add_argument("--n", type=int)
    g.add_argument("--M", type=int)
    g = p.add_argument_group("bootstrap")
    g.add_argument("--boot-B", dest="boot_B", type=int)
    g.add_argument("--ci-method", dest="ci_method", choices=("basic", "percentile"))
    g.add_argument("--ci-levels", dest="ci_levels")
    g = p.add_argument_group("run")
    g.add_argument("--seed", type=int)
    g.add_argument("--format", choices=("csv", "json"))
    g.add_argument("--out")
    g.add_argument("--oracle", action="store_const", const=True, default=None,
                   help="also run the brute-force oracle (small n only)")
    g.add_argument("--threads", type=int)
    g.add_argument("--preset", choices=("desk", "full"))
    return p


def resolve_config(ns: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if ns.config:
        cfg.update(read_config_file(ns.config))
    for k in DEFAULTS:
        v = getattr(ns, k, None)
        if v is not None:
            cfg[k] = v
    cfg["command"] = ns.command
    if ns.experiment is not None:
        cfg["experiment"] = ns.experiment
    if cfg["delta"] is not None and not cfg["delta"] > 0:
        raise ConfigError("delta must be positive")
    if cfg["threads"] < 1:
        raise ConfigError("threads must be positive")
    return cfg


# ----------------------------------------------------------------- helpers

def _score(cfg) -> ScoreFamily:
    return ScoreFamily.from_name(cfg["loss"], delta=cfg["delta"], efficiency=cfg["efficiency"])


def _model(cfg) -> PopulationModel:
    return {"normal": PopulationModel.normal, "uniform": PopulationModel.uniform,
            "cauchy": PopulationModel.cauchy}[cfg["model"]]()


def _data(cfg):
    if not cfg["input"]:
        raise ConfigError("--input is required for this command")
    return ingest_csv(cfg["input"], cfg["column"], cfg["input2"], cfg["group_col"], cfg["mad"])


def _one_sample(cfg):
    d = _data(cfg)
    if d.two_sample:
        raise ConfigError("this command takes a single sample")
    return as_sample(d.samples[0])


def _sides(cfg):
    return ("plus", "minus") if cfg["side"] == "both" else (cfg["side"],)


def _m_grid(cfg, n_cap):
    if cfg["m_grid"] is not None:
        return _int_list(cfg["m_grid"], "m_grid")
    if cfg["m"] is not None:
        return [cfg["m"]]
    return list(range(0, n_cap + 1))


def _eta_grid(cfg):
    if cfg["eta_grid"] is not None:
        return _float_list(cfg["eta_grid"], "eta_grid")
    if cfg["eta"] is not None:
        return [cfg["eta"]]
    raise ConfigError("--eta or --eta-grid is required")


def _spec(cfg, score) -> EstimatorSpec:
    chi = ScaleScoreFamily.from_base(score) if cfg["target"] in ("scale", "two_stage") else None
    scheme = SchemeConfig(use_a_grid=bool(cfg["a_grid"]))
    return EstimatorSpec(cfg["target"], score, chi, cfg["theta0"], False, scheme)


def _test_spec(cfg, two_sample=False) -> TestSpec:
    kind = "two_sample_wald" if two_sample else cfg["test"]
    sigma0 = cfg["sigma0"]
    return TestSpec(kind, cfg["alpha"], cfg["theta0"], cfg["sided"], sigma0,
                    SchemeConfig(use_a_grid=bool(cfg["a_grid"])), cfg["budget"])


class Output:
    """Either CSV (columns + rows) or a JSON document."""

    def __init__(self, columns=None, rows=None, doc=None):
        self.columns, self.rows, self.doc = columns, rows, doc

    def render(self, fmt: str) -> str:
        if fmt == "json" or self.columns is None:
            if self.doc is not None:
                return to_json(self.doc)
            return to_json([dict(zip(self.columns, r)) for r in self.rows])
        return to_csv(self.columns, self.rows)


# ---------------------------------------------------------------- commands

def cmd_fit(cfg):
    score = _score(cfg)
    d = _data(cfg)
    chi = ScaleScoreFamily.from_base(score) if cfg["target"] == "two_stage" else None
    rows = []
    for s, lab in zip(d.samples, d.labels):
        f = fit(s, score, chi)
        rows.append((lab, s.size, f.theta_hat, f.sigma_hat if f.sigma_hat is not None else math.nan,
                     f.se_hat, score.kind, score.delta))
    return Output(("sample", "n", "theta_hat", "sigma_hat", "se", "loss", "delta"), rows)


def cmd_sensitivity(cfg):
    score = _score(cfg)
    sample = _one_sample(cfg)
    spec = _spec(cfg, score)
    ms = _m_grid(cfg, sample.n // 2)
    curve = sensitivity_curve(sample, spec, ms)
    cols = ["m", "m_over_n", "eta_plus", "eta_minus", "eta", "kind"]
    rows = [tuple(r[c] for c in cols) for r in curve.rows()]
    if cfg["oracle"]:
        ocfg = OracleConfig()
        extra = []
        for r in rows:
            m = int(r[0])
            up = brute_force_sensitivity(sample, spec, m, "plus", ocfg)
            dn = brute_force_sensitivity(sample, spec, m, "minus", ocfg)
            extra.append(r + (up, dn))
        rows, cols = extra, cols + ["oracle_plus", "oracle_minus"]
    return Output(tuple(cols), rows)


def cmd_breakdown(cfg):
    score = _score(cfg)
    sample = _one_sample(cfg)
    spec = _spec(cfg, score)
    etas = _eta_grid(cfg)
    curve = sensitivity_curve(sample, spec, list(range(0, sample.n + 1))
                              if spec.target in ("location", "scale", "se_restricted")
                              else list(range(0, sample.n // 2 + 1)))
    kinds = sorted({p.kind for p in curve.points})
    side_map = {"plus": "plus", "minus": "minus", "both": "two_sided"}
    side = side_map[cfg["side"]]
    rows = []
    for eta in etas:
        for kind in kinds:
            res = breakdown_from_curve(curve, eta, side, kind)
            # an upper bound on the sensitivity yields a lower bound on the breakdown point
            label = {"exact": "exact", "upper_bound": "bp_lower_bound",
                     "lower_bound": "bp_upper_bound"}[kind]
            row = (eta, side, res.m if res.m is not None else "", res.bp, label)
            if cfg["oracle"]:
                if side == "two_sided":
                    ms = [brute_force_bp(sample, spec, eta, s) for s in ("plus", "minus")]
                    ms = [m for m in ms if m is not None]
                    om = min(ms) if ms else None
                else:
                    om = brute_force_bp(sample, spec, eta, side)
                row = row + ("" if om is None else om,)
            rows.append(row)
    cols = ("eta", "side", "m", "bp", "kind") + (("oracle_m",) if cfg["oracle"] else ())
    return Output(cols, rows)


def _bracket_doc(b):
    if b is None:
        return None
    return {"lower_m": b.lower, "upper_m": b.upper, "lower_bp": b.lower_bp,
            "upper_bp": b.upper_bp, "n_norm": b.n_norm, "cap": b.cap, "exact": b.exact}


def cmd_test_audit(cfg):
    score = _score(cfg)
    d = _data(cfg)
    two = d.two_sample or cfg["test"] in ("two-sample", "two_sample", "two_sample_wald")
    if two and not d.two_sample:
        raise ConfigError("the two-sample test needs --input2 or --group-col")
    spec = _test_spec(cfg, two)
    if two:
        x, y = d.samples
        audit = two_sample_bp_bounds(x, y, score, spec)
    else:
        audit = test_bp_bounds(d.samples[0], score, spec)
    r = audit.result
    doc = {"test": spec.kind, "alpha": spec.alpha, "sided": spec.sided, "z": spec.z,
           "loss": score.kind, "delta": score.delta, "decision": r.decision,
           "interval": [r.lower, r.upper], "center": r.center, "spread": r.spread,
           "reject_bp": _bracket_doc(audit.reject_bp), "accept_bp": _bracket_doc(audit.accept_bp)}
    if cfg["oracle"]:
        o = brute_force_test_bp(tuple(d.samples) if two else d.samples[0], score, spec)
        doc["oracle_m"] = o.m
    if two:
        n_star = min(x.size, y.size)
        cap = -(-n_star // 2)
        ms = _m_grid(cfg, cap) if (cfg["m_grid"] or cfg["m"] is not None) else list(range(cap + 1))
        band = []
        for m in ms:
            up = statistic_band(x, y, score, m, spec, "up")
            dn = statistic_band(x, y, score, m, spec, "down")
            z = spec.z
            band.append((m, m / n_star, dn.low, dn.high, up.low, up.high,
                         bool(up.attained > z), bool(up.certified < z)))
        doc["band"] = [dict(zip(BAND_COLUMNS, b)) for b in band]
        if cfg["format"] == "csv":
            return Output(BAND_COLUMNS, band)
    if cfg["format"] == "csv":
        br = audit.bracket
        return Output(("test", "decision", "lower_m", "upper_m", "lower_bp", "upper_bp", "exact"),
                      [(spec.kind, r.decision, "" if br.lower is None else br.lower,
                        "" if br.upper is None else br.upper, br.lower_bp, br.upper_bp, br.exact)])
    return Output(doc=doc)


BAND_COLUMNS = ("m", "m_over_nstar", "down_low", "down_high", "up_low", "up_high",
                "certified_flip_up", "certified_no_flip_up")


def _boot_config(cfg):
    levels = tuple(_float_list(cfg["ci_levels"], "ci_levels"))
    return BootstrapConfig(B=cfg["boot_B"], seed=cfg["seed"], ci_levels=levels,
                           method=cfg["ci_method"], threads=cfg["threads"])


def cmd_bootstrap(cfg):
    score = _score(cfg)
    sample = _one_sample(cfg)
    bc = _boot_config(cfg)
    side = {"plus": "plus", "minus": "minus", "both": "two_sided"}[cfg["side"]]
    if cfg["eta"] is not None:
        s = bootstrap_bp(sample, score, cfg["eta"], side, bc)
    else:
        if cfg["m"] is None:
            raise ConfigError("bootstrap needs --m (sensitivity) or --eta (breakdown point)")
        s = bootstrap_sensitivity(sample, score, cfg["m"], side, bc)
    if cfg["format"] == "csv":
        return Output(("replicate", "draw"), list(enumerate(s.draws)))
    return Output(doc=s.as_dict())


def cmd_population(cfg):
    score = _score(cfg)
    model = _model(cfg)
    if cfg["format"] == "csv":
        c = maxbias_curve(model, score, cfg["eps_max"], cfg["step"])
        rows = [(e, a, b, da, db) for e, a, b, da, db in c.rows()]
        return Output(("epsilon", "eta_plus", "eta_minus", "deta_deps_plus", "deta_deps_minus"),
                      rows)
    eps = cfg["eps"]
    doc = {"model": model.kind, "loss": score.kind, "delta": score.delta, "eps": eps,
           "theta0": population_location(model, score)}
    for side in ("plus", "minus"):
        doc[f"eta_{side}"] = population_sensitivity(model, score, eps, side)
        doc[f"V_{side}"] = asymptotic_variance_sensitivity(model, score, eps, side)
        doc[f"sigma2_bp_{side}"] = asymptotic_variance_bp(model, score, eps, side)
    return Output(doc=doc)


def cmd_pit(cfg):
    score = _score(cfg)
    model = _model(cfg)
    res = pit_uniformity(model, score, cfg["eps"], cfg["n"], cfg["M"], cfg["boot_B"],
                         BootstrapConfig(B=cfg["boot_B"], seed=cfg["seed"],
                                         threads=cfg["threads"]),
                         "minus" if cfg["side"] == "minus" else "plus")
    if cfg["format"] == "csv":
        return Output(("j", "U"), list(enumerate(res.U)))
    return Output(doc={"eps": res.eps, "m": res.m, "n": res.n, "M": int(res.U.size),
                       "B": cfg["boot_B"], "seed": cfg["seed"], "eta_target": res.eta_target,
                       "ks_stat": res.ks_stat, "p_value": res.p_value})


def cmd_oracle(cfg):
    score = _score(cfg)
    d = _data(cfg)
    if cfg["target"] == "test" or d.two_sample:
        spec = _test_spec(cfg, d.two_sample)
        o = brute_force_test_bp(tuple(d.samples) if d.two_sample else d.samples[0], score, spec)
        return Output(("test", "m", "n_norm", "bp"),
                      [(spec.kind, "" if o.m is None else o.m, o.n_norm, o.bp)])
    sample = as_sample(d.samples[0])
    spec = _spec(cfg, score)
    rows = []
    if cfg["eta"] is not None:
        for side in _sides(cfg):
            m = brute_force_bp(sample, spec, cfg["eta"], side)
            rows.append((side, cfg["eta"], "" if m is None else m,
                         math.inf if m is None else m / sample.n))
        return Output(("side", "eta", "m", "bp"), rows)
    for m in _m_grid(cfg, sample.n // 2):
        for side in _sides(cfg):
            rows.append((side, m, brute_force_sensitivity(sample, spec, m, side)))
    return Output(("side", "m", "eta"), rows)


def cmd_replicate(cfg):
    eid = cfg["experiment"]
    if eid not in EXPERIMENTS:
        raise ConfigError(f"replicate needs an experiment id from {', '.join(EXPERIMENTS)}")
    res, conf = run_experiment(eid, cfg["preset"], cfg["seed"], cfg["threads"])
    out_dir = Path(cfg["out"] or f"replicate_{eid}")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{eid}.csv").write_text(to_csv(res.columns, res.rows))
    files = [f"{eid}.csv"]
    if eid == "fig_pit":
        U = res.summary["U"]
        rows = [(e, s, j, u) for (e, s), arr in U.items() for j, u in enumerate(arr)]
        (out_dir / f"{eid}_U.csv").write_text(to_csv(("eps", "seed", "j", "U"), rows))
        files.append(f"{eid}_U.csv")
    summary = {k: v for k, v in res.summary.items() if k != "U"}
    manifest = {"config": conf, "files": files, "summary": summary}
    (out_dir / "manifest.json").write_text(to_json(manifest))
    return Output(doc=manifest)


HANDLERS = {
    "fit": cmd_fit, "sensitivity": cmd_sensitivity, "breakdown": cmd_breakdown,
    "test-audit": cmd_test_audit, "bootstrap": cmd_bootstrap, "population": cmd_population,
    "pit": cmd_pit, "replicate": cmd_replicate, "oracle": cmd_oracle,
}


def run(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    try:
        cfg = resolve_config(ns)
        out = HANDLERS[cfg["command"]](cfg)
        text = out.render(cfg["format"])
        if cfg["out"] and cfg["command"] != "replicate":
            Path(cfg["out"]).write_text(text)
        else:
            stdout.write(text)
        return EXIT_OK
    except (ConfigError, DomainError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, DegenerateError, ExtrapolationError, BudgetError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
