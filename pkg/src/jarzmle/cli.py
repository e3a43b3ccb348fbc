"""Command-line experiment runner.

Every subcommand reads a JSON config (validated against a schema that rejects
unknown keys), runs one or more seeded repeats and writes CSV/JSON artifacts
whose first line records the config hash, seed and package version. Exit
codes: 0 success, 2 configuration problem, 3 algorithmic failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from jarzmle import __version__
from jarzmle.baselines import BaselineConfig, run_baseline
from jarzmle.core import JarzmleError, OptimizerSpec, RunConfig
from jarzmle.data import (
    gen_linreg_data,
    gen_poly_data,
    gen_two_moons,
    load_wisconsin,
    stratified_split,
    write_metadata,
)
from jarzmle.engine import mse_scaling_probe, run_jala_em
from jarzmle.evaluation import TuneGrid, cv_tune, ensemble_metrics, fit_algorithm, order_mae
from jarzmle.models import (
    BayesianLogisticModel,
    ConjugateGaussianModel,
    GaussianLinRegModel,
    PolynomialRegModel,
    StudentTLinRegModel,
    TinyBnnModel,
)
from jarzmle.optim import h_euler, hessian_bound_blr, power_iteration
from jarzmle.selection import bayes_factor, fit_with_evidence, is_evidence_student_t, ols_bic_select, select_order_jala

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
COMMANDS = ("fit", "select-error-model", "select-order", "tune", "probe-mse")


class ConfigError(ValueError):
    pass


# -- schema -------------------------------------------------------------------


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT = {"type": "integer", "minimum": 0}
_VEC = {"type": "array", "items": {"type": "number"}, "minItems": 1}

SCHEMA = _obj(
    {
        "experiment": {"enum": list(COMMANDS)},
        "seed": _INT,
        "repeats": {"type": "integer", "minimum": 1},
        "output_dir": {"type": "string"},
        "model": _obj(
            {
                "kind": {"enum": ["conjugate", "logistic", "linreg_gaussian", "linreg_student_t", "polynomial", "bnn"]},
                "y_obs": _NUM,
                "prior_variance": _POS,
                "order": _INT,
                "hidden": {"type": "integer", "minimum": 1},
                "nu_rate": _POS,
            },
            ["kind"],
        ),
        "algorithm": _obj(
            {
                "kind": {"enum": ["jala-em", "pgd", "ipla", "sfla", "soul"]},
                "gamma": _POS,
                "soul_theta_gamma": _POS,
                "sfla_beta": _POS,
                "sfla_epsilon": _POS,
            },
            ["kind"],
        ),
        "run": _obj(
            {
                "n_particles": {"type": "integer", "minimum": 1},
                "n_iterations": _INT,
                "langevin_step": _POS,
                "optimizer": _obj(
                    {"kind": {"enum": ["sgd", "adam"]}, "gamma": {"type": "number", "minimum": 0}, "beta1": _NUM, "beta2": _NUM, "epsilon": _POS}
                ),
                "ess_threshold": {"type": "number", "minimum": 0, "maximum": 1},
                "theta_init": _VEC,
                "normalize_gradients": {"type": "boolean"},
                "max_grad_norm": _POS,
            }
        ),
        "data": _obj(
            {
                "source": {"enum": ["none", "wisconsin", "linreg", "poly", "two_moons"]},
                "path": {"type": "string"},
                "d_y": {"type": "integer", "minimum": 1},
                "d_x": {"type": "integer", "minimum": 1},
                "alpha": _POS,
                "sigma": {"type": "number", "minimum": 0},
                "sigma2": {"type": "number", "minimum": 0},
                "error_kind": {"enum": ["gaussian", "student_t"]},
                "nu": _POS,
                "p_true": _INT,
                "noise": {"type": "number", "minimum": 0},
                "n_test": {"type": "integer", "minimum": 0},
                "split_fraction": {"type": "number", "minimum": 0, "maximum": 1},
            }
        ),
        "selection": _obj(
            {
                "orders": {"type": "array", "items": _INT, "minItems": 1},
                "is_samples": {"type": "integer", "minimum": 1},
                "generators": {"type": "array", "items": {"enum": ["gaussian", "student_t"]}, "minItems": 1},
                "step_cap": {"type": ["number", "null"]},
            }
        ),
        "probe": _obj(
            {
                "ns": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
                "trials": {"type": "integer", "minimum": 1},
                "theta": _VEC,
                "n_steps": _INT,
                "h": _POS,
            }
        ),
        "tune": _obj(
            {
                "algorithms": {"type": "array", "items": {"enum": ["jala-em", "pgd", "soul"]}, "minItems": 1},
                "n_values": {"type": "integer", "minimum": 1},
                "theta_steps": {"type": "array", "items": _POS, "minItems": 1},
                "folds": {"type": "integer", "minimum": 2},
                "max_iters": {"type": "integer", "minimum": 1},
                "final_iterations": _INT,
            }
        ),
    }
)


def load_config(path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as err:
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {err.message}") from None


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


# -- builders -----------------------------------------------------------------


def build_run_config(cfg: dict, seed: int) -> RunConfig:
    run = dict(cfg.get("run", {}))
    opt_kw = run.pop("optimizer", {})
    run.setdefault("n_particles", 100)
    run.setdefault("n_iterations", 500)
    run.setdefault("langevin_step", 0.1)
    if "theta_init" in run:
        run["theta_init"] = tuple(run["theta_init"])
    try:
        return RunConfig(optimizer=OptimizerSpec(**opt_kw), seed=seed, **run)
    except ValueError as err:
        raise ConfigError(str(err)) from None


def build_data(cfg: dict, seed: int):
    """Returns ``(train, test_or_None)``."""
    d = cfg.get("data", {})
    src = d.get("source", "none")
    if src == "none":
        return None, None
    if src == "wisconsin":
        full = load_wisconsin(d.get("path"))
        return stratified_split(full, d.get("split_fraction", 0.8), seed)
    if src == "linreg":
        ds, _ = gen_linreg_data(d.get("d_y", 500), d.get("d_x", 8), d.get("alpha", 1.0), d.get("sigma", 1.0), d.get("error_kind", "gaussian"), d.get("nu", 4.0), seed)
        return ds, None
    if src == "poly":
        ds, _ = gen_poly_data(d.get("d_y", 500), d.get("p_true", 2), d.get("alpha", 1.0), d.get("sigma2", 7.5), seed)
        return ds, None
    n_test = d.get("n_test", 200)
    tr = gen_two_moons(d.get("d_y", 200), d.get("noise", 0.1), seed)
    te = gen_two_moons(n_test, d.get("noise", 0.1), seed + 1_000_003) if n_test else None
    return tr, te


def build_model(cfg: dict, data):
    m = cfg.get("model", {"kind": "conjugate"})
    kind = m["kind"]
    if kind == "conjugate":
        return ConjugateGaussianModel(m.get("y_obs", 2.0))
    if data is None:
        raise ConfigError(f"model {kind!r} needs a data source")
    if kind == "logistic":
        return BayesianLogisticModel(data.features, data.targets, m.get("prior_variance", 5.0))
    if kind == "linreg_gaussian":
        return GaussianLinRegModel(data.features, data.targets)
    if kind == "linreg_student_t":
        return StudentTLinRegModel(data.features, data.targets, m.get("nu_rate", 0.1))
    if kind == "polynomial":
        return PolynomialRegModel(data.features[:, 0], data.targets, m.get("order", 1))
    return TinyBnnModel(data.features, data.labels, m.get("hidden", 8), 2)


# -- output -------------------------------------------------------------------


class Writer:
    """Writes artifacts stamped with provenance and refuses to mix runs.

    An existing artifact whose recorded config hash differs from the current
    one aborts the run, so a directory never holds results of two configs.
    """

    def __init__(self, out_dir: Path, chash: str, seed: int):
        self.out = out_dir
        self.chash = chash
        self.seed = seed
        self.out.mkdir(parents=True, exist_ok=True)

    @property
    def stamp(self) -> str:
        return f"jarzmle config_sha256={self.chash} seed={self.seed} version=v{__version__}"

    def check(self) -> None:
        for p in sorted(self.out.iterdir()):
            if p.suffix not in (".csv", ".json") or not p.is_file():
                continue
            first = p.read_text(encoding="utf-8").split("\n", 1)[0]
            if "config_sha256=" in first and f"config_sha256={self.chash}" not in first:
                raise ConfigError(f"{p} was produced by a different config; refusing to overwrite")
            if first.startswith("{"):
                try:
                    prov = json.loads(p.read_text(encoding="utf-8")).get("provenance", {})
                except json.JSONDecodeError:
                    continue
                if prov.get("config_sha256") not in (None, self.chash):
                    raise ConfigError(f"{p} was produced by a different config; refusing to overwrite")

    def csv(self, name: str, text: str) -> None:
        (self.out / name).write_text(f"# {self.stamp}\n" + text, encoding="utf-8")

    def json(self, name: str, payload: dict) -> None:
        body = {"provenance": {"config_sha256": self.chash, "seed": self.seed, "version": f"v{__version__}"}, **payload}
        (self.out / name).write_text(json.dumps(body, indent=2, sort_keys=True, default=_jsonable) + "\n", encoding="utf-8")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


def _floats(a) -> list:
    return [None if not np.isfinite(v) else float(v) for v in np.asarray(a, dtype=float).ravel()]


# -- repeat workers (module level so they pickle) -----------------------------


def _fit_once(cfg: dict, seed: int) -> dict:
    train, test = build_data(cfg, seed)
    model = build_model(cfg, train)
    algo = cfg.get("algorithm", {"kind": "jala-em"})
    rc = build_run_config(cfg, seed)
    if algo["kind"] == "jala-em":
        log_z0 = float(model.log_marginal(rc.theta_init)) if hasattr(model, "log_marginal") else 0.0
        fit = run_jala_em(model, rc, log_Z0=log_z0)
    else:
        bc = BaselineConfig(
            algo["kind"], algo.get("gamma", rc.langevin_step), rc.n_particles, rc.n_iterations,
            soul_theta_gamma=algo.get("soul_theta_gamma", 0.1), sfla_beta=algo.get("sfla_beta", 1e3),
            sfla_epsilon=algo.get("sfla_epsilon", 0.1), seed=seed, theta_init=rc.theta_init,
        )
        fit = run_baseline(model, bc)
    summary = {
        "theta_final": _floats(fit.theta_final),
        "log_evidence_final": None if not np.isfinite(fit.log_evidence_final) else fit.log_evidence_final,
        "n_rows": len(fit.trajectory),
    }
    if test is not None and hasattr(model, "predict_proba"):
        lp, err = ensemble_metrics(model, fit.positions_final, fit.weights_final, test)
        summary.update(test_lppd=lp, test_error=err)
    return {
        "trajectory": fit.trajectory.to_csv(),
        "particles": fit.trajectory.particles_csv(),
        "summary": summary,
        "datasets": {"train": train, "test": test} if train is not None and train.indices is not None else None,
    }


def _error_model_once(cfg: dict, seed: int) -> dict:
    sel = cfg.get("selection", {})
    rc = build_run_config(cfg, seed)
    out = {}
    for gen in sel.get("generators", ["gaussian", "student_t"]):
        d = cfg.get("data", {})
        ds, _ = gen_linreg_data(d.get("d_y", 500), d.get("d_x", 8), d.get("alpha", 1.0), d.get("sigma", 1.0), gen, d.get("nu", 4.0), seed)
        mg = GaussianLinRegModel(ds.features, ds.targets)
        mt = StudentTLinRegModel(ds.features, ds.targets, cfg.get("model", {}).get("nu_rate", 0.1))
        t0 = tuple(rc.theta_init[:2]) if len(rc.theta_init) >= 2 else (1.0, 1.0)
        log_nu0 = rc.theta_init[2] if len(rc.theta_init) >= 3 else (np.log(4.0) + 1 if gen == "student_t" else np.log(5.0))
        cg = RunConfig(rc.n_particles, rc.n_iterations, rc.langevin_step, rc.optimizer, rc.ess_threshold, seed, t0)
        ct = RunConfig(rc.n_particles, rc.n_iterations, rc.langevin_step, rc.optimizer, rc.ess_threshold, seed, (*t0, log_nu0))
        _, rg = fit_with_evidence(mg, cg, mg.log_marginal(np.array(t0)), "M_G")
        lz0_t = is_evidence_student_t(mt, ct.theta_init, sel.get("is_samples", 5000), np.random.default_rng([seed, 7]))
        _, rt = fit_with_evidence(mt, ct, lz0_t, "M_T")
        bf = bayes_factor(rg.log_Z_final, rt.log_Z_final)
        decision = "M_G" if bf > 0 else "M_T"
        rg.selected, rt.selected = decision == "M_G", decision == "M_T"
        out[gen] = {
            "reports": [rg.to_dict(), rt.to_dict()],
            "log_bayes_factor_G_vs_T": bf,
            "decision": decision,
            "correct": decision == ("M_G" if gen == "gaussian" else "M_T"),
            "trajectories": {"M_G": _floats(rg.log_Z_trajectory), "M_T": _floats(rt.log_Z_trajectory)},
        }
    return out


def _order_once(cfg: dict, seed: int) -> dict:
    sel = cfg.get("selection", {})
    orders = sel.get("orders", list(range(1, 11)))
    d = cfg.get("data", {})
    p_true = d.get("p_true", 2)
    ds, _ = gen_poly_data(d.get("d_y", 500), p_true, d.get("alpha", 1.0), d.get("sigma2", 7.5), seed)
    x, y = ds.features[:, 0], ds.targets
    rc = build_run_config(cfg, seed)
    res = select_order_jala(x, y, orders, rc, sel.get("step_cap", 0.5))
    return {
        "p_true": p_true,
        "p_jala": res.selected,
        "p_bic": ols_bic_select(x, y, orders),
        "evidence": {str(p): r.log_Z_final for p, r in res.reports.items()},
    }


def _run_repeats(fn, cfg, seeds, threads):
    if threads <= 1 or len(seeds) == 1:
        return [fn(cfg, s) for s in seeds]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, [cfg] * len(seeds), seeds))


# -- commands -----------------------------------------------------------------


def cmd_fit(cfg, seeds, writer, threads):
    results = _run_repeats(_fit_once, cfg, seeds, threads)
    summaries = []
    for i, r in enumerate(results):
        tag = "" if len(results) == 1 else f"_r{i}"
        writer.csv(f"trajectory{tag}.csv", r["trajectory"])
        writer.csv(f"particles{tag}.csv", r["particles"])
        if r["datasets"] is not None:
            write_metadata(writer.out / f"dataset_metadata{tag}.json", r["datasets"], seeds[i])
        summaries.append({"seed": seeds[i], **r["summary"]})
    writer.json("result.json", {"experiment": "fit", "runs": summaries})


def cmd_select_error_model(cfg, seeds, writer, threads):
    results = _run_repeats(_error_model_once, cfg, seeds, threads)
    gens = list(results[0])
    rates = {g: float(np.mean([r[g]["correct"] for r in results])) for g in gens}
    lines = ["seed,generator,model,k,log_Z"]
    for s, r in zip(seeds, results):
        for g in gens:
            for name, traj in r[g]["trajectories"].items():
                lines += [f"{s},{g},{name},{k},{'' if v is None else repr(v)}" for k, v in enumerate(traj)]
    writer.csv("evidence_trajectories.csv", "\n".join(lines) + "\n")
    trials = [{"seed": s, **{g: {k: v for k, v in r[g].items() if k != "trajectories"} for g in gens}} for s, r in zip(seeds, results)]
    writer.json("report.json", {"experiment": "select-error-model", "correct_rate": rates, "trials": trials})


def cmd_select_order(cfg, seeds, writer, threads):
    results = _run_repeats(_order_once, cfg, seeds, threads)
    p_true = results[0]["p_true"]
    lines = ["seed,p_true,p_jala,p_bic"] + [f"{s},{r['p_true']},{r['p_jala']},{r['p_bic']}" for s, r in zip(seeds, results)]
    writer.csv("orders.csv", "\n".join(lines) + "\n")
    writer.json(
        "report.json",
        {
            "experiment": "select-order",
            "mae_jala": order_mae([r["p_jala"] for r in results], p_true),
            "mae_bic": order_mae([r["p_bic"] for r in results], p_true),
            "trials": [{"seed": s, **r} for s, r in zip(seeds, results)],
        },
    )


def cmd_tune(cfg, seeds, writer, threads):
    t = cfg.get("tune", {})
    seed = seeds[0]
    train, test = build_data(cfg, seed)
    if train is None:
        raise ConfigError("tune needs a data source")
    prior_var = cfg.get("model", {}).get("prior_variance", 5.0)
    lam = power_iteration(hessian_bound_blr(train.features, prior_var), train.features.shape[1], rng=np.random.default_rng(seed))
    grid = TuneGrid.from_h_euler(
        h_euler(lam), t.get("n_values", 10),
        theta_step_values=tuple(t.get("theta_steps", (0.05, 0.1, 0.15))),
        folds=t.get("folds", 3), max_iters=t.get("max_iters", 500),
    )
    rc = build_run_config(cfg, seed)
    factory = lambda X, y: BayesianLogisticModel(X, y, prior_var)
    chosen, csv_parts = {}, []
    for alg in t.get("algorithms", ["jala-em", "pgd", "soul"]):
        res = cv_tune(alg, train, grid, seed, rc.n_particles, factory, rc.theta_init)
        head, *rows = res.to_csv().splitlines()
        if not csv_parts:
            csv_parts.append(f"algorithm,{head}\n")
        csv_parts += [f"{alg},{r}\n" for r in rows]
        entry = {"particle_step": res.particle_step, "theta_step": res.theta_step, "mean_val_lppd": res.mean_lppd, "failed": res.failed}
        if test is not None and t.get("final_iterations", 0) > 0:
            model = factory(train.features, train.targets)
            fit = fit_algorithm(alg, model, res.particle_step, res.theta_step, rc.n_particles, t["final_iterations"], seed, rc.theta_init)
            lp, err = ensemble_metrics(model, fit.positions_final, fit.weights_final, test)
            entry.update(theta_final=_floats(fit.theta_final), test_lppd=lp, test_error=err)
        chosen[alg] = entry
    writer.csv("tuning.csv", "".join(csv_parts))
    writer.json("chosen_steps.json", {"experiment": "tune", "h_euler": h_euler(lam), "lambda_max": float(lam), "chosen": chosen})


def cmd_probe_mse(cfg, seeds, writer, threads):
    p = cfg.get("probe", {})
    model = build_model(cfg, None)
    if not hasattr(model, "grad_marginal"):
        raise ConfigError("probe-mse needs a model with an analytic marginal gradient")
    rows = mse_scaling_probe(
        model, p.get("theta", [0.0]), p.get("ns", [25, 50, 100, 200, 400]), p.get("trials", 200),
        np.random.default_rng(seeds[0]), p.get("n_steps", 10), p.get("h", 0.1),
    )
    ns = np.array([r[0] for r in rows], dtype=float)
    mse = np.array([r[1] for r in rows])
    slope = float(np.polyfit(np.log(ns), np.log(mse), 1)[0]) if len(rows) > 1 else float("nan")
    writer.csv("mse.csv", "n,mse\n" + "".join(f"{int(n)},{m!r}\n" for n, m in rows))
    writer.json("probe.json", {"experiment": "probe-mse", "loglog_slope": slope if np.isfinite(slope) else None, "rows": rows})


HANDLERS = {
    "fit": cmd_fit,
    "select-error-model": cmd_select_error_model,
    "select-order": cmd_select_order,
    "tune": cmd_tune,
    "probe-mse": cmd_probe_mse,
}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="jarzmle", description=__doc__.split("\n", 1)[0])
    ap.add_argument("--version", action="version", version=f"jarzmle v{__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON experiment config")
        sp.add_argument("--seed", type=int, help="base seed (overrides config)")
        sp.add_argument("--out", help="output directory (overrides config)")
        sp.add_argument("--repeats", type=int, help="number of seeded repeats (overrides config)")
        sp.add_argument("--threads", type=int, help="worker processes; falls back to $JARZMLE_THREADS, then 1")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if cfg.get("experiment", args.command) != args.command:
            raise ConfigError(f"config is for {cfg['experiment']!r}, not {args.command!r}")
        eff = copy.deepcopy(cfg)
        eff["experiment"] = args.command
        for key, val in (("seed", args.seed), ("repeats", args.repeats), ("output_dir", args.out)):
            if val is not None:
                eff[key] = val
        validate_config(eff)
        seed = eff.get("seed", 0)
        repeats = eff.get("repeats", 1)
        threads = args.threads if args.threads is not None else int(os.environ.get("JARZMLE_THREADS", "1") or 1)
        out = Path(eff.get("output_dir", "jarzmle_out"))
        run_cfg = {k: v for k, v in eff.items() if k != "output_dir"}
        writer = Writer(out, config_hash(run_cfg), seed)
        writer.check()
        seeds = [seed + i for i in range(repeats)]
        HANDLERS[args.command](run_cfg, seeds, writer, max(1, threads))
    except (ConfigError, ValueError) as err:
        # bad inputs (malformed data files, out-of-range settings) land here too
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (JarzmleError, FloatingPointError, np.linalg.LinAlgError) as err:
        diag = {"error": type(err).__name__, "message": str(err), "iteration": getattr(err, "iteration", None)}
        print(json.dumps(diag), file=sys.stderr)
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(json.dumps(diag, indent=2) + "\n", encoding="utf-8")
        except (OSError, NameError):
            pass
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
