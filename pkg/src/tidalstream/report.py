"""End-to-end analysis pipeline, run configuration and report emission."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import warnings
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.stats import chi2

from tidalstream import __version__, rng
from tidalstream.asymptotics import (TruncationWarning, lookup_quantile, quantile_table,
                                     sample_chernoff, sample_D, write_quantile_table)
from tidalstream.data import (SynthConfig, generate_synthetic, load_csv, save_csv, trim_members,
                              validate_and_order)
from tidalstream.errors import BadConfig, TidalStreamError
from tidalstream.intervals import (DSSE_Q90, DSSE_Q95, BootstrapConfig, DeltaSSE,
                                   bootstrap_band, bootstrap_pointwise_ci, ci_from_delta_sse,
                                   coverage_estimate, coverage_values, run_bootstrap)
from tidalstream.isotonic import fit_cosine_model, smooth_lambda
from tidalstream.streaming import delta1_v, null_estimates, permutation_test
from tidalstream.threshold import (changepoint_conf_set, density_weight, fit_changepoint,
                                   split_bootstrap_ci, split_point)

SCHEMA_VERSION = "1.0"
STAGES = ("load", "describe", "fit", "tests", "calibrate", "intervals", "changepoint",
          "splitpoint")
LEVELS = (0.9, 0.95)


def describe(sample) -> dict:
    """Min, max, lower median, mean and sample SD of R, Theta, cos Theta, Y and Sigma."""
    cols = {"R": sample.r, "Theta": sample.theta, "cosTheta": sample.cos, "Y": sample.y,
            "Sigma": sample.sigma}
    out = {}
    for name, v in cols.items():
        s = np.sort(v)
        out[name] = {
            "min": float(s[0]),
            "max": float(s[-1]),
            "median": float(s[(s.size - 1) // 2]),
            "mean": float(np.mean(v)),
            "stdev": float(np.std(v, ddof=1)),
        }
    return out


def _floats(text):
    return tuple(float(t) for t in str(text).split(",") if t.strip())


def _bool(text):
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise BadConfig(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class RunConfig:
    """Every knob of the pipeline; each field is a config-file key and a CLI flag."""

    input: str = ""
    synth_n: int = 328
    synth_lambda: str = "zero"
    synth_beta: float = 0.0
    synth_rho: float = 400.0
    cutoff: float = 0.5
    r0_list: tuple = (400.0, 500.0, 600.0)
    rho0: float = 400.0
    n_perm: int = 1000
    n_boot: int = 1000
    bandwidth: float = 0.1
    center_residuals: bool = False
    spike_window: int = 13
    ci_r0: tuple = (400.0, 500.0, 600.0, 750.0)
    split_weight: str = "uniform"
    calibrate_quantiles: bool = False
    mc_reps: int = 20000
    mc_L: float = 8.0
    mc_dt: float = 0.005
    seed: int = 0
    out_dir: str = "tidalstream-out"
    n_jobs: int = 1

    def validate(self):
        if self.synth_n < 2:
            raise BadConfig("synth_n must be >= 2")
        if self.synth_lambda not in ("zero", "step", "hinge"):
            raise BadConfig("synth_lambda must be zero, step or hinge")
        if not 0.0 < self.cutoff < 1.0:
            raise BadConfig("cutoff must lie in (0, 1)")
        if self.n_perm < 0 or self.n_boot < 0 or self.mc_reps < 0:
            raise BadConfig("replicate counts must be >= 0")
        if not self.bandwidth > 0:
            raise BadConfig("bandwidth must be > 0")
        if self.spike_window < 1:
            raise BadConfig("spike_window must be >= 1")
        if self.split_weight not in ("uniform", "density"):
            raise BadConfig("split_weight must be uniform or density")
        if not (self.mc_L > 0 and self.mc_dt > 0):
            raise BadConfig("mc_L and mc_dt must be > 0")
        if self.n_jobs == 0:
            raise BadConfig("n_jobs must be nonzero")
        return self

    def recorded(self):
        """Fields that influence results (output location and parallelism do not)."""
        d = asdict(self)
        d.pop("out_dir")
        d.pop("n_jobs")
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    def digest(self):
        return hashlib.sha256(json.dumps(self.recorded(), sort_keys=True).encode()).hexdigest()


_CASTS = {int: int, float: float, str: str, bool: _bool, tuple: _floats}


def _field_types():
    return {f.name: type(f.default) for f in fields(RunConfig)}


def coerce(key, value):
    types = _field_types()
    key = key.strip().replace("-", "_")
    if key not in types:
        raise BadConfig(f"unknown config key {key!r}")
    try:
        return key, _CASTS[types[key]](value.strip() if isinstance(value, str) else value)
    except (TypeError, ValueError) as exc:
        raise BadConfig(f"bad value for {key}: {value!r} ({exc})") from None


def parse_config_text(text) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise BadConfig(f"line {lineno}: expected key=value")
        k, v = line.split("=", 1)
        key, val = coerce(k, v)
        out[key] = val
    return out


def load_config(path=None, overrides=None) -> RunConfig:
    values = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            values.update(parse_config_text(fh.read()))
    for k, v in (overrides or {}).items():
        key, val = coerce(k, v)
        values[key] = val
    return RunConfig(**values).validate()


class StageError(TidalStreamError):
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")

    def to_dict(self):
        return {"stage": self.stage, "type": type(self.cause).__name__, "message": str(self.cause)}


def jsonable(x):
    """Plain JSON types; non-finite floats become strings."""
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [jsonable(v) for v in x.tolist()]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


def dumps(report):
    return json.dumps(jsonable(report), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _write_rows(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


class Pipeline:
    """Runs the requested stages in order, sharing fitted state between them."""

    def __init__(self, cfg: RunConfig, stages=STAGES):
        self.cfg = cfg.validate()
        self.stages = [s for s in STAGES if s in set(stages) | {"load"}]
        self.report = {
            "schema_version": SCHEMA_VERSION,
            "provenance": {"tool_version": __version__, "master_seed": cfg.seed,
                           "config": cfg.recorded(), "config_hash": cfg.digest(),
                           "rng": "numpy Philox keyed by (seed, blake2b(stage), index)",
                           "stage_seeds": {}},
        }
        self.files = {}
        self.sample = self.fit = self.boot = None
        self.quantiles = {0.9: DSSE_Q90, 0.95: DSSE_Q95}

    def seed(self, stage):
        s = rng.derive_seed(self.cfg.seed, stage)
        self.report["provenance"]["stage_seeds"][stage] = s
        return s

    def out(self, name):
        path = os.path.join(self.cfg.out_dir, name)
        self.files[name] = path
        return path

    def run(self):
        os.makedirs(self.cfg.out_dir, exist_ok=True)
        for stage in self.stages:
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", TruncationWarning)
                    getattr(self, "stage_" + stage)()
            except StageError:
                raise
            except (TidalStreamError, OSError, ValueError, ArithmeticError) as exc:
                raise StageError(stage, exc) from exc
        self.report["artifacts"] = sorted(self.files)
        path = self.out("report.json")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(dumps(self.report))
        return self.report

    def stage_load(self):
        c = self.cfg
        if c.input:
            records = load_csv(c.input)
            source = {"kind": "csv", "path": c.input}
        else:
            scfg = SynthConfig(n=c.synth_n, lambda_kind=c.synth_lambda, beta=c.synth_beta,
                               rho=c.synth_rho, seed=self.seed("synth"))
            records = list(generate_synthetic(scfg).records)
            source = {"kind": "synthetic", "n": c.synth_n, "lambda": c.synth_lambda,
                      "beta": c.synth_beta, "rho": c.synth_rho}
        if any(rec.p_member is not None for rec in records):
            kept, dropped = trim_members(records, c.cutoff)
        else:
            kept, dropped = records, []
        self.sample = validate_and_order(kept)
        y = self.sample.y
        # reported only; nothing is filtered on it
        outside = int(np.sum(np.abs(y - y.mean()) > 3.0 * np.std(y, ddof=1)))
        self.report["data"] = {"source": source, "n_input": len(records), "n_kept": len(kept),
                               "n_dropped": len(dropped), "cutoff": c.cutoff,
                               "n_beyond_3sd": outside}

    def stage_describe(self):
        self.report["describe"] = describe(self.sample)

    def stage_fit(self):
        s = self.sample
        f = fit_cosine_model(s, spike_window=self.cfg.spike_window)
        self.fit = f
        null = null_estimates(s)
        self.report["fit"] = {
            "nu_hat": f.nu_hat, "sigma_hat": math.sqrt(f.sigma2_hat), "sigma2_hat": f.sigma2_hat,
            "iterations": f.iterations, "converged": f.converged,
            "degenerate_variance": f.degenerate_variance, "spike_window": f.spike_window,
            "null": {"nu0": null.nu0, "sigma0": math.sqrt(null.sigma0_sq)},
            "lambda_hat": [{"r": float(k), "value": float(v)}
                           for k, v in zip(f.lambda_hat.knots, f.lambda_hat.values)],
        }
        _write_rows(self.out("fig4_lambda.csv"), ["r", "lambda_raw", "lambda_truncated"],
                    zip(s.r, f.lambda_obs_raw, f.lambda_obs))
        rows = []
        omegas = np.arange(0.0, 360.0, 1.0)
        for r0 in self.cfg.r0_list:
            for side in ("below", "above"):
                for om in omegas:
                    try:
                        v = delta1_v(s, om, r0, null, side=side)
                    except TidalStreamError:
                        v = float("nan")
                    rows.append((r0, side, om, v))
        _write_rows(self.out("fig3_delta1v.csv"), ["r0", "side", "omega", "delta1v"], rows)

    def _skip(self, key, reason):
        self.report[key] = {"skipped": True, "reason": reason}

    def stage_tests(self):
        c = self.cfg
        if c.n_perm == 0:
            return self._skip("tests", "n_perm=0")
        seed = self.seed("tests")
        kw = {"spike_window": c.spike_window}
        specs = []
        for r0 in c.r0_list:
            specs.append(("B1", dict(r0=r0)))
            specs.append(("absDelta1V0", dict(r0=r0)))
        specs.append(("F", {}))
        specs.append(("F_rho", dict(rho0=c.rho0, scope="first_m")))
        results = []
        for k, (name, extra) in enumerate(specs):
            try:
                res = permutation_test(self.sample, name, n_perm=c.n_perm,
                                       seed=rng.derive_seed(seed, "test", k), fit_kwargs=kw,
                                       n_jobs=c.n_jobs, **extra)
                results.append(res.to_dict())
            except TidalStreamError as exc:
                results.append({"statistic": name, "params": extra, "error": str(exc)})
        self.report["tests"] = {"seed": seed, "results": results}

    def stage_calibrate(self):
        c = self.cfg
        if not c.calibrate_quantiles:
            return self._skip("calibration", "calibrate_quantiles=false")
        if c.mc_reps == 0:
            return self._skip("calibration", "mc_reps=0")
        seed = self.seed("calibrate")
        d = sample_D(1.0, 1.0, c.mc_reps, c.mc_L, c.mc_dt, seed, n_jobs=c.n_jobs)
        ch = sample_chernoff(c.mc_reps, c.mc_L, c.mc_dt, rng.derive_seed(seed, "chernoff"),
                             n_jobs=c.n_jobs)
        rows = quantile_table(d, LEVELS) + quantile_table(ch, (0.05, 0.25, 0.5, 0.75, 0.95))
        write_quantile_table(rows, self.out("quantiles.csv"))
        for level in LEVELS:
            self.quantiles[level] = lookup_quantile(rows, level, "D")
        self.report["calibration"] = {
            "seed": seed, "table": rows, "n_flagged_D": d.n_flagged,
            "n_flagged_chernoff": ch.n_flagged,
            "chernoff": {"mean": float(np.mean(ch.values)), "sd": float(np.std(ch.values, ddof=1))},
        }

    def _bootstrap(self):
        if self.boot is None:
            c = self.cfg
            bcfg = BootstrapConfig(c.n_boot, c.bandwidth, self.seed("bootstrap"),
                                   c.center_residuals)
            self.boot = run_bootstrap(self.sample, self.fit, bcfg,
                                      fit_kwargs={"spike_window": c.spike_window}, n_jobs=c.n_jobs)
        return self.boot

    def stage_intervals(self):
        c, s, f = self.cfg, self.sample, self.fit
        table, block, profile_rows = [], {"dsse": [], "quantiles": self.quantiles}, []
        lo, hi = float(s.r[0]), float(s.r[-1])
        xi_max = 2.0 * float(np.max(f.lambda_hat.values)) + 5.0
        for r0 in c.ci_r0:
            if not lo <= r0 <= hi:
                block["dsse"].append({"r0": r0, "error": "r0 outside data range"})
                continue
            prof = DeltaSSE(s, f, r0)
            for xi in np.arange(0.0, xi_max + 0.025, 0.05):
                profile_rows.append((r0, float(xi), prof(float(xi))))
            entry = {"r0": r0, "lambda_hat": float(f.lambda_hat(r0)), "sets": {}}
            for level in LEVELS:
                q = self.quantiles[level]
                iv = ci_from_delta_sse(s, f, r0, q, xi_max=xi_max, profile=prof, level=level)
                entry["sets"][str(level)] = iv.to_list()
                table.append((r0, "dsse", level, iv, None))
            block["dsse"].append(entry)
        _write_rows(self.out("fig5_delta_sse.csv"), ["r0", "xi", "delta_sse"], profile_rows)

        grid = np.exp(np.linspace(math.log(lo), math.log(hi), 200)) if lo > 0 else \
            np.linspace(lo, hi, 200)
        if c.n_boot == 0:
            self._skip("bootstrap", "n_boot=0")
        else:
            run = self._bootstrap()
            d_star, bands = bootstrap_band(s, f, run=run, levels=LEVELS)
            boot = {"seed": run.cfg.seed, "n_boot": c.n_boot, "bandwidth": c.bandwidth,
                    "d_star_quantiles": {str(k): b.half_width for k, b in bands.items()},
                    "pointwise": [], "coverage": []}
            for r0 in c.ci_r0:
                if not lo <= r0 <= hi:
                    continue
                cis = bootstrap_pointwise_ci(s, f, r0, LEVELS, run=run)
                vals = coverage_values(s, f, r0, run=run, n_jobs=c.n_jobs)
                covs = {lv: coverage_estimate(s, f, r0, self.quantiles[lv], values=vals)
                        for lv in LEVELS}
                boot["pointwise"].append({"r0": r0, "sets": {str(k): v.to_list()
                                                             for k, v in cis.items()}})
                boot["coverage"].append({"r0": r0, **{str(lv): {"probability": cv.probability,
                                                                "mc_se": cv.mc_se,
                                                                "quantile": cv.quantile}
                                                      for lv, cv in covs.items()}})
                for lv in LEVELS:
                    table.append((r0, "bootstrap", lv, cis[lv], None))
                for k, row in enumerate(table):
                    if row[0] == r0 and row[1] == "dsse":
                        table[k] = row[:4] + (covs[row[2]].probability,)
            self.report["bootstrap"] = boot
            _write_rows(self.out("fig7_dstar.csv"), ["replicate", "d_star"], enumerate(d_star))
            band_rows = [(r, float(f.lambda_hat(r)), *[float(bands[lv].lower(r)) for lv in LEVELS],
                          *[float(bands[lv].upper(r)) for lv in LEVELS]) for r in s.r]
            _write_rows(self.out("band.csv"), ["r", "lambda_hat", "lower90", "lower95", "upper90",
                                               "upper95"], band_rows)
        sm = self.boot.smooth if self.boot is not None else smooth_lambda(f.lambda_hat, c.bandwidth)
        _write_rows(self.out("fig6_smooth.csv"), ["r", "lambda_s", "dlambda_s"],
                    zip(grid, sm(grid), sm.derivative(grid)))
        rows = []
        for r0, method, level, iv, cov in table:
            pieces = iv.to_list() or [[float("nan"), float("nan")]]
            for a, b in pieces:
                rows.append((r0, method, level, a, b, "" if cov is None else cov))
        _write_rows(self.out("ci_table.csv"), ["r0", "method", "level", "L", "U",
                                                "coverage_estimate"], rows)
        self.report["intervals"] = block

    def stage_changepoint(self):
        s, f = self.sample, self.fit
        block, rows = {}, []
        for psi in ("hinge", "indicator"):
            cp = fit_changepoint(s, f, psi, level=0.9)
            entry = {"rho_hat": cp.rho_hat, "beta_hat": cp.beta_hat, "nu_hat": cp.nu_hat,
                     "n_degenerate": int(cp.sse_profile.degenerate.sum())}
            if psi == "hinge":
                entry["conf_sets"] = {str(lv): changepoint_conf_set(
                    cp.sse_profile, float(chi2.ppf(lv, 1)), lv).to_list() for lv in LEVELS}
            block[psi] = entry
            rows += [(psi, r, v) for r, v in cp.sse_profile.to_csv_rows()]
        _write_rows(self.out("fig8_sse_profile.csv"), ["psi", "r", "sse_excess"], rows)
        self.report["changepoint"] = block

    def stage_splitpoint(self):
        c, s, f = self.cfg, self.sample, self.fit
        tau = float(s.r[-1])
        h = density_weight(s.r, tau) if c.split_weight == "density" else None
        sf = split_point(f.lambda_hat, h, tau, refine=2000, weight_kind=c.split_weight)
        block = {"tau": tau, "weight": c.split_weight, "gamma_hat": sf.gamma_hat,
                 "beta_hat": sf.beta_hat, "flat": sf.flat}
        if not sf.flat:
            _write_rows(self.out("fig9_kappa00.csv"), ["r", "kappa0", "kappa00"],
                        zip(sf.r, sf.kappa0_curve, sf.kappa00_curve))
        if c.n_boot == 0 or sf.flat:
            block["bootstrap"] = {"skipped": True,
                                  "reason": "n_boot=0" if c.n_boot == 0 else "flat kappa0"}
        else:
            run = self._bootstrap()
            sets = {}
            samples = None
            for lv in LEVELS:
                res = split_bootstrap_ci(s, f, run.cfg, h, tau, lv, run=run)
                sets[str(lv)] = {"quantile": res.quantile, "set": res.conf_set.to_list()}
                samples = res
            block["bootstrap"] = {"gamma_smooth": samples.gamma_smooth, "n_flat": samples.n_flat,
                                  "sets": sets, "seed": run.cfg.seed}
            _write_rows(self.out("fig9_kappa00_boot.csv"), ["replicate", "kappa00_at_gamma_s"],
                        enumerate(samples.samples))
        self.report["splitpoint"] = block


COMMAND_STAGES = {
    "fit": ("describe", "fit"),
    "test": ("fit", "tests"),
    "ci": ("fit", "calibrate", "intervals"),
    "changepoint": ("fit", "changepoint"),
    "splitpoint": ("fit", "splitpoint"),
    "calibrate": ("calibrate",),
    "describe": ("describe",),
    "run": STAGES,
}


def run_pipeline(cfg: RunConfig, stages=STAGES):
    """Run ``stages`` and write ``report.json`` plus plot-data CSVs into ``cfg.out_dir``."""
    p = Pipeline(cfg, stages)
    return p.run(), p.files


def write_synthetic(cfg: RunConfig, path=None):
    scfg = SynthConfig(n=cfg.synth_n, lambda_kind=cfg.synth_lambda, beta=cfg.synth_beta,
                       rho=cfg.synth_rho, seed=rng.derive_seed(cfg.seed, "synth"))
    sample = generate_synthetic(scfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = path or os.path.join(cfg.out_dir, "synthetic.csv")
    save_csv(sample, path)
    return path
