"""Experiment harness: JSON configs in, CSV/JSON artifacts out.

A config fully determines a run; the harness writes three artifacts into
the output directory (the NATVB_OUTDIR environment variable, else the
working directory):

  * trace.csv    - per-iteration rows, every float in shortest
                   round-trip decimal form so replays are byte-identical;
  * summary.json - final objective/residual/iterations plus seeds,
                   config hash, and RNG algorithm;
  * config.used.json - the fully resolved config; feeding it back to
                   `run` reproduces the trace byte for byte.

The schema is versioned and strict: unknown keys are rejected, because
silently ignored knobs are how replays drift. Domain errors mid-run
flush the partial trace before propagating. Timing is reported in the
summary only, never in the trace, so traces stay deterministic.

The BLR retry policy lives here, not in the core: when a step leaves the
family's domain the harness halves the rate for that step, up to 20
times.
"""

from __future__ import annotations

import json
import os
import time
from pathlib import Path

import numpy as np

from .blr import (BLRConfig, blr_init, blr_step, fixed_point_residual,
                  multiplicative_form_check, vb_objective)
from .deep import (adam_init, config_hash, ivon_init, rmsprop_init, train,
                   VONState)
from .errors import DomainError, LeftDomain
from .gaussian import DiagGaussian, FullGaussian
from .losses import check_derivatives
from .models import (make_logistic_data, make_ridge_data, make_spirals_mlp,
                     ridge_exact_posterior, ridge_loss)
from .natgrad import EstimatorSpec
from .seeding import RNG_ALGORITHM, make_rng

SCHEMA_VERSION = 1
ENV_OUTDIR = "NATVB_OUTDIR"


class ConfigError(ValueError):
    """Invalid or schema-violating experiment configuration."""


def output_dir() -> Path:
    return Path(os.environ.get(ENV_OUTDIR, "."))


def _require(cfg: dict, context: str, required: dict, optional: dict) -> dict:
    """Strict key validation with defaults; returns the resolved mapping."""
    if not isinstance(cfg, dict):
        raise ConfigError(f"{context} must be an object")
    unknown = set(cfg) - set(required) - set(optional)
    if unknown:
        raise ConfigError(f"unknown keys in {context}: {sorted(unknown)}")
    missing = set(required) - set(cfg)
    if missing:
        raise ConfigError(f"missing keys in {context}: {sorted(missing)}")
    out = {}
    for key, kind in required.items():
        out[key] = _coerce(cfg[key], kind, f"{context}.{key}")
    for key, (kind, default) in optional.items():
        out[key] = _coerce(cfg[key], kind, f"{context}.{key}") if key in cfg else default
    return out


def _coerce(value, kind, where: str):
    if kind is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{where} must be a number")
        return float(value)
    if kind is int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{where} must be an integer")
        return value
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        return value
    if kind is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{where} must be an object")
        return value
    if kind is list:
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be a list")
        return value
    raise AssertionError(f"unhandled kind {kind}")


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as handle:
            cfg = json.load(handle)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("top-level config must be an object")
    return cfg


def resolve_config(cfg: dict) -> dict:
    """Validate and fill defaults; the result is what the sidecar records."""
    top = _require(cfg, "config",
                   required={"schema_version": int, "model": dict, "optimizer": dict},
                   optional={"seed": (int, 0), "output": (dict, {})})
    if top["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {top['schema_version']}")
    top["model"] = _resolve_model(top["model"])
    top["optimizer"] = _resolve_optimizer(top["optimizer"])
    top["output"] = _require(top["output"], "output", required={},
                             optional={"trace": (str, "trace.csv"),
                                       "summary": (str, "summary.json"),
                                       "config": (str, "config.used.json")})
    return top


def _resolve_model(cfg: dict) -> dict:
    kind = cfg.get("kind")
    if kind == "ridge":
        return _require(cfg, "model(ridge)", {"kind": str},
                        {"n": (int, 20), "p": (int, 3), "data_seed": (int, 0),
                         "noise": (float, 1.0), "prior_precision": (float, 1.0)})
    if kind == "logistic":
        return _require(cfg, "model(logistic)", {"kind": str},
                        {"n": (int, 100), "p": (int, 2), "data_seed": (int, 0),
                         "scale": (float, 3.0), "prior_precision": (float, 1.0)})
    if kind == "spirals_mlp":
        return _require(cfg, "model(spirals_mlp)", {"kind": str},
                        {"n": (int, 500), "hidden": (list, [16, 16]),
                         "noise": (float, 0.05), "data_seed": (int, 0)})
    raise ConfigError(f"unknown model kind {kind!r}")


_OPT_SCHEMAS = {
    "blr": ({"kind": str},
            {"family": (str, "full"), "learning_rate": (float, 1.0),
             "max_iter": (int, 100), "tol": (float, 1e-9),
             "estimator": (str, "exact"), "n_samples": (int, 1),
             "init_mean": (float, 0.0), "init_precision": (float, 1.0),
             "max_rate_halvings": (int, 20)}),
    "von": ({"kind": str},
            {"learning_rate": (float, 0.1), "steps": (int, 500),
             "n_samples": (int, 4), "init_mean": (float, 0.0),
             "init_precision": (float, 1.0), "prec_floor": (float, 0.0),
             "batch_size": (int, 0)}),
    "ivon": ({"kind": str},
             {"step_size": (float, 0.3), "steps": (int, 5000),
              "hess_init": (float, 1.0), "hess_rate": (float, 3e-3),
              "weight_decay": (float, 1e-2), "beta1": (float, 0.9),
              "ess": (float, 3e4), "damping": (float, 0.0),
              "init_seed": (int, 0), "batch_size": (int, 0)}),
    "adam": ({"kind": str},
             {"step_size": (float, 1e-3), "steps": (int, 1000),
              "beta1": (float, 0.9), "beta2": (float, 0.999),
              "damping": (float, 1e-8), "init_seed": (int, 0),
              "batch_size": (int, 0)}),
    "rmsprop": ({"kind": str},
                {"step_size": (float, 1e-2), "steps": (int, 1000),
                 "scale_rate": (float, 0.1), "damping": (float, 1e-8),
                 "init_seed": (int, 0), "batch_size": (int, 0)}),
}


def _resolve_optimizer(cfg: dict) -> dict:
    kind = cfg.get("kind")
    if kind not in _OPT_SCHEMAS:
        raise ConfigError(f"unknown optimizer kind {kind!r}")
    required, optional = _OPT_SCHEMAS[kind]
    out = _require(cfg, f"optimizer({kind})", required, optional)
    if kind == "blr":
        if out["family"] not in ("full", "diag"):
            raise ConfigError("optimizer.family must be 'full' or 'diag'")
        if out["estimator"] not in ("exact", "delta", "mc", "reparam"):
            raise ConfigError(f"unknown estimator {out['estimator']!r}")
    return out


def build_model(model_cfg: dict):
    kind = model_cfg["kind"]
    if kind == "ridge":
        model = make_ridge_data(model_cfg["data_seed"], model_cfg["n"],
                                model_cfg["p"], noise=model_cfg["noise"],
                                prior_precision=model_cfg["prior_precision"])
        return model, ridge_loss(model)
    if kind == "logistic":
        loss = make_logistic_data(model_cfg["data_seed"], model_cfg["n"],
                                  model_cfg["p"], scale=model_cfg["scale"],
                                  prior_precision=model_cfg["prior_precision"])
        return loss, loss
    loss = make_spirals_mlp(model_cfg["data_seed"], n=model_cfg["n"],
                            hidden=tuple(model_cfg["hidden"]),
                            noise=model_cfg["noise"])
    return loss, loss


# -- formatting ---------------------------------------------------------

def format_cell(value) -> str:
    """Shortest round-trip decimal for floats; plain text otherwise."""
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (np.floating,)):
        return repr(float(value))
    return str(value)


def write_trace(path: Path, columns, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(",".join(columns) + "\n")
        for row in rows:
            handle.write(",".join(format_cell(cell) for cell in row) + "\n")


def write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


# -- runners ------------------------------------------------------------

def _blr_runner(resolved: dict, loss, out: dict):
    opt = resolved["optimizer"]
    family = (FullGaussian if opt["family"] == "full" else DiagGaussian)(loss.dim)
    if opt["family"] == "full":
        lam0 = family.from_moment(np.full(loss.dim, opt["init_mean"]),
                                  opt["init_precision"] * np.eye(loss.dim))
    else:
        lam0 = family.from_moment(np.full(loss.dim, opt["init_mean"]),
                                  np.full(loss.dim, opt["init_precision"]))
    spec = EstimatorSpec(opt["estimator"], opt["n_samples"], resolved["seed"])
    cfg = BLRConfig(opt["learning_rate"], opt["max_iter"], opt["tol"], spec)
    state = blr_init(family, lam0)
    rows = []
    out["columns"] = ("t", "rho", "objective", "residual")
    out["rows"] = rows
    deterministic = spec.kind in ("exact", "delta")
    converged = False
    residual = np.inf
    for _ in range(cfg.max_iter):
        prev = state
        rho = cfg.rho_at(prev.t)
        # retry policy: halve the rate when a step exits the domain
        for _ in range(opt["max_rate_halvings"] + 1):
            try:
                state = blr_step(prev, loss, BLRConfig(rho, 1, cfg.tol, spec,
                                                       cfg.check_multiplicative))
                break
            except LeftDomain:
                rho *= 0.5
        else:
            raise LeftDomain(f"no valid step after {opt['max_rate_halvings']} halvings",
                             iteration=prev.t)
        report = multiplicative_form_check(prev, state, rho)
        if not report.passed:
            raise RuntimeError(f"Bayes-filter form violated at step {prev.t}")
        # stationarity certificate at the fresh iterate; a conjugate rate-1
        # jump therefore reports convergence after its single step
        residual = fixed_point_residual(family, state.lam, loss, spec,
                                        step=state.t)
        objective = vb_objective(family, state.lam, loss, spec)
        rows.append((state.t, rho, objective, residual))
        rel_change = (float(np.linalg.norm(state.lam.coords - prev.lam.coords))
                      / max(1.0, float(np.linalg.norm(prev.lam.coords))))
        if deterministic and (residual <= cfg.tol or rel_change <= cfg.tol):
            converged = True
            break
    return {"iterations": state.t, "converged": converged,
            "final_objective": rows[-1][2] if rows else None,
            "final_residual": residual}


def _deep_runner(resolved: dict, loss, out: dict):
    opt = resolved["optimizer"]
    seed = resolved["seed"]
    kind = opt["kind"]
    batch = opt["batch_size"] or None
    if kind == "von":
        state = VONState(np.full(loss.dim, opt["init_mean"]),
                         np.full(loss.dim, opt["init_precision"]),
                         learning_rate=opt["learning_rate"],
                         n_samples=opt["n_samples"], seed=seed,
                         prec_floor=opt["prec_floor"])
    elif kind == "ivon":
        theta0 = (loss.init_params(opt["init_seed"]) if hasattr(loss, "init_params")
                  else np.zeros(loss.dim))
        state = ivon_init(theta0, step_size=opt["step_size"],
                          hess_init=opt["hess_init"], hess_rate=opt["hess_rate"],
                          weight_decay=opt["weight_decay"], beta1=opt["beta1"],
                          damping=opt["damping"], ess=opt["ess"], seed=seed)
    else:
        theta0 = (loss.init_params(opt["init_seed"]) if hasattr(loss, "init_params")
                  else np.zeros(loss.dim))
        if kind == "adam":
            state = adam_init(theta0, step_size=opt["step_size"], beta1=opt["beta1"],
                              beta2=opt["beta2"], damping=opt["damping"])
        else:
            state = rmsprop_init(theta0, step_size=opt["step_size"],
                                 scale_rate=opt["scale_rate"], damping=opt["damping"])
    try:
        record = train(state, loss, opt["steps"], batch_size=batch, seed=seed,
                       metadata={"config_hash": config_hash(resolved),
                                 "optimizer": kind})
    except LeftDomain as exc:
        partial = getattr(exc, "partial_record", None)
        if partial is not None:
            out["columns"] = partial.columns
            out["rows"] = partial.rows
        raise
    out["columns"] = record.columns
    out["rows"] = record.rows
    summary = {"iterations": opt["steps"], "final_loss": record.rows[-1][1]}
    final = record.final_state
    if kind == "von":
        summary["final_objective"] = vb_objective(
            DiagGaussian(loss.dim),
            DiagGaussian(loss.dim).from_moment(final.mean, final.prec), loss)
        summary["min_scale"] = min(row[3] for row in record.rows)
    if hasattr(loss, "mean_data_loss"):
        point = final.mean if hasattr(final, "mean") else final.theta
        summary["mean_data_loss"] = loss.mean_data_loss(point)
    return summary


def run_experiment(cfg: dict, out_dir: Path | None = None) -> dict:
    """Execute one config; returns the summary written to summary.json.

    Raises ConfigError for schema problems (nothing written) and lets
    domain errors propagate after flushing the partial trace.
    """
    resolved = resolve_config(cfg)
    out_dir = Path(out_dir) if out_dir is not None else output_dir()
    out_paths = {key: out_dir / name for key, name in resolved["output"].items()}
    _, loss = build_model(resolved["model"])
    rng = make_rng(resolved["seed"], 0xC)
    probe = [rng.standard_normal(loss.dim) * 0.3 for _ in range(2)]
    check_derivatives(loss, probe)
    started = time.time()
    out: dict = {"columns": (), "rows": []}
    try:
        if resolved["optimizer"]["kind"] == "blr":
            summary = _blr_runner(resolved, loss, out)
        else:
            summary = _deep_runner(resolved, loss, out)
    except (DomainError, LeftDomain):
        write_trace(out_paths["trace"], out["columns"], out["rows"])
        raise
    summary.update({
        "seed": resolved["seed"],
        "optimizer": resolved["optimizer"]["kind"],
        "model": resolved["model"]["kind"],
        "config_hash": config_hash(resolved),
        "rng_algorithm": RNG_ALGORITHM,
        "wall_time_s": time.time() - started,
    })
    write_trace(out_paths["trace"], out["columns"], out["rows"])
    write_json(out_paths["summary"], summary)
    write_json(out_paths["config"], resolved)
    return summary


def compare_runs(cfg_a: dict, cfg_b: dict, out_dir: Path | None = None,
                 joint_name: str = "compare.csv") -> Path:
    """Run two configs side by side and emit a joint CSV keyed on step."""
    out_dir = Path(out_dir) if out_dir is not None else output_dir()
    results = []
    for tag, cfg in (("a", cfg_a), ("b", cfg_b)):
        resolved = resolve_config(cfg)
        resolved["output"] = {key: f"{tag}.{name}" for key, name
                              in resolved["output"].items()}
        run_experiment(resolved, out_dir)
        results.append(resolved)
    joint = out_dir / joint_name
    tables = []
    for tag, resolved in zip(("a", "b"), results):
        with open(out_dir / resolved["output"]["trace"], encoding="utf-8") as handle:
            lines = [line.rstrip("\n").split(",") for line in handle]
        tables.append((tag, lines[0], lines[1:]))
    with open(joint, "w", encoding="utf-8", newline="") as handle:
        header = ["step"]
        for tag, cols, _ in tables:
            header.extend(f"{tag}_{c}" for c in cols[1:])
        handle.write(",".join(header) + "\n")
        depth = max(len(rows) for _, _, rows in tables)
        for i in range(depth):
            cells = [str(i)]
            for _, cols, rows in tables:
                row = rows[i] if i < len(rows) else [""] * len(cols)
                cells.extend(row[1:])
            handle.write(",".join(cells) + "\n")
    return joint


def ridge_oracle(cfg: dict) -> dict:
    """Exact ridge posterior for a config's model block, as plain lists."""
    resolved_model = _resolve_model(cfg.get("model", {}))
    if resolved_model["kind"] != "ridge":
        raise ConfigError("oracle ridge needs a ridge model block")
    model, _ = build_model(resolved_model)
    posterior = ridge_exact_posterior(model)
    return {"mean": posterior.mean.tolist(),
            "precision": posterior.precision.tolist(),
            "covariance": np.linalg.inv(posterior.precision).tolist()}
