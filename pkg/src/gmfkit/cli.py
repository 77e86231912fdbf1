"""Command-line interface: fit, cv, simulate, eval.

Configuration comes from a flat TOML file (``--config``) mirrored 1:1 by
flags; explicitly passed flags win. Exit codes: 0 success, 1 input/config
error, 2 numerical divergence, 3 hit max epochs without convergence (outputs
are still written).
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from . import io as gio
from .exceptions import ConfigError, DivergenceError, GmfError
from .families import canonical_link, family, link
from .metrics import rel_deviance, rel_log_rmse
from .model import CovariateSet, PenaltyConfig, ResponseMatrix
from .optim import SgdConfig, fit_airwls, fit_asgd, fit_newton
from .select import cv_rank_select, elbow_pick, scree_eigenvalues
from .simulate import SimConfig, generate

_FITTERS = {"asgd": fit_asgd, "newton": fit_newton, "airwls": fit_airwls}

_PRESETS = {
    "small": dict(n=200, m=50, d_true=2),
    "medium": dict(n=1000, m=100, d_true=5),
    "large": dict(n=5000, m=500, d_true=5),
}

_SGD_KEYS = [f.name for f in SgdConfig.__dataclass_fields__.values()]  # type: ignore[attr-defined]


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="TOML config file; flags override it")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None,
                   help="worker parallelism cap (default: GMFKIT_THREADS or 1)")


def _add_model_flags(p: argparse.ArgumentParser):
    p.add_argument("--y", required=True, help="response matrix (.csv or .mtx)")
    p.add_argument("--mask", help="unobserved-entry list for .mtx inputs")
    p.add_argument("--x", help="row covariates (.csv)")
    p.add_argument("--z", help="column covariates (.csv)")
    p.add_argument("--family", default=None,
                   choices=["gaussian", "gamma", "inverse_gaussian", "poisson",
                            "bernoulli", "neg_binomial"])
    p.add_argument("--link", default=None,
                   choices=["identity", "log", "logit", "inverse", "inverse_squared"])
    p.add_argument("--nb-shape", type=float, default=None)
    p.add_argument("--penalty-lambda", type=float, default=None)
    p.add_argument("--penalty-blocks", default=None,
                   help="four comma-separated multipliers for B,Gamma,U,V")
    p.add_argument("--dispersion", choices=["auto", "fixed", "estimate"], default=None)
    for key in _SGD_KEYS:
        if key == "seed":
            continue
        p.add_argument(f"--{key.replace('_', '-')}", type=_SGD_ARG_TYPES[key],
                       default=None)


_SGD_ARG_TYPES = {
    "max_epochs": int, "rate_k0": float, "rate_k1": float, "rate_tau": float,
    "mb_rows": int, "mb_cols": int, "smooth_a1": float, "smooth_a2": float,
    "damping": float, "tol": float, "nafill_every": int, "seed": int,
    "stepsize": float, "nsteps": int, "max_eval_entries": int,
}


def _merge_config(args: argparse.Namespace, keys) -> dict:
    """defaults < config file < explicit flags."""
    merged = {}
    if args.config:
        with open(args.config, "rb") as fh:
            try:
                file_cfg = tomllib.load(fh)
            except tomllib.TOMLDecodeError as err:
                raise ConfigError(f"{args.config}: {err}") from err
        unknown = set(file_cfg) - set(keys)
        if unknown:
            raise ConfigError(f"{args.config}: unknown keys {sorted(unknown)}")
        merged.update(file_cfg)
    for key in keys:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    return merged


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("GMFKIT_THREADS")
    return max(1, int(env)) if env else 1


def _load_response(args) -> tuple[ResponseMatrix, list, list]:
    path = Path(args.y)
    if not path.exists():
        raise ConfigError(f"response file {path} does not exist")
    if path.suffix == ".mtx":
        values = gio.read_matrix_market(path)
        mask = (gio.read_mask_file(args.mask, values.shape)
                if args.mask else np.ones(values.shape, dtype=bool))
        rn = [f"r{i + 1}" for i in range(values.shape[0])]
        cn = [f"c{j + 1}" for j in range(values.shape[1])]
        return ResponseMatrix(values, mask), rn, cn
    values, rn, cn = gio.read_dense_csv(path)
    mask = gio.read_mask_file(args.mask, values.shape) if args.mask else None
    return ResponseMatrix(values, mask), rn, cn


def _load_covariates(args, n, m) -> CovariateSet:
    x = gio.read_dense_csv(args.x)[0] if args.x else None
    z = gio.read_dense_csv(args.z)[0] if args.z else None
    if x is not None and x.shape[0] != n:
        raise ConfigError("row covariate matrix has the wrong number of rows")
    if z is not None and z.shape[0] != m:
        raise ConfigError("column covariate matrix has the wrong number of rows")
    return CovariateSet(x=x, z=z, n=n, m=m)


def _model_pieces(merged):
    fam = family(merged.get("family", "poisson"), merged.get("nb_shape"))
    lnk = link(merged["link"]) if merged.get("link") else canonical_link(fam)
    blocks = merged.get("penalty_blocks", (0.0, 0.0, 1.0, 0.0))
    if isinstance(blocks, str):
        blocks = tuple(float(v) for v in blocks.split(","))
    penalty = PenaltyConfig(lam=float(merged.get("penalty_lambda", 1.0)),
                            blocks=tuple(blocks))
    sgd_kwargs = {k: merged[k] for k in _SGD_KEYS if k in merged}
    cfg = SgdConfig(**sgd_kwargs)
    return fam, lnk, penalty, cfg


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_fit(args) -> int:
    keys = _SGD_KEYS + ["family", "link", "nb_shape", "penalty_lambda",
                        "penalty_blocks", "rank", "algorithm", "identify",
                        "dispersion"]
    merged = _merge_config(args, keys)
    if args.seed is not None:
        merged["seed"] = args.seed
    if "rank" not in merged:
        raise ConfigError("--rank is required (or set rank in the config file)")
    fam, lnk, penalty, cfg = _model_pieces(merged)
    algorithm = merged.get("algorithm", "asgd")
    if algorithm not in _FITTERS:
        raise ConfigError(f"unknown algorithm {algorithm!r}")
    identify = merged.get("identify", "B1")

    data, row_names, col_names = _load_response(args)
    covs = _load_covariates(args, data.n, data.m)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    inputs = [p for p in (args.y, args.mask, args.x, args.z) if p]
    manifest = gio.Manifest("fit", {**merged, "algorithm": algorithm},
                            merged.get("seed", cfg.seed), inputs)

    state, report = _FITTERS[algorithm](
        data, covs, fam, lnk, penalty, cfg, rank=int(merged["rank"]),
        identify_mode=identify,
        dispersion=merged.get("dispersion", "auto"),
    )

    factor_names = [f"f{k + 1}" for k in range(state.rank)]
    gio.write_dense_csv(out / "U.csv", state.u, row_names, factor_names)
    gio.write_dense_csv(out / "V.csv", state.v, col_names, factor_names)
    gio.write_dense_csv(out / "B.csv", state.b, col_names,
                        [f"x{k + 1}" for k in range(covs.p)])
    gio.write_dense_csv(out / "Gamma.csv", state.gamma, row_names,
                        [f"z{k + 1}" for k in range(covs.q)])
    gio.write_json(out / "fit_report.json", {
        "final_objective": report.final_objective,
        "objective_trace": report.objective_trace,
        "epochs_run": report.epochs_run,
        "converged": report.converged,
        "phi_trace": report.phi_trace,
        "nb_shape_trace": report.nb_shape_trace,
        "phi": state.phi,
        "nb_shape": state.nb_shape,
        "algorithm": algorithm,
        "identify": identify,
    })
    manifest.finish(out / "manifest.json",
                    {"fit_seconds": report.elapsed_seconds})
    return 0 if report.converged else 3


def cmd_cv(args) -> int:
    keys = _SGD_KEYS + ["family", "link", "nb_shape", "penalty_lambda",
                        "penalty_blocks", "ranks", "folds", "algorithm",
                        "criterion", "holdout_fraction", "dispersion"]
    merged = _merge_config(args, keys)
    if args.seed is not None:
        merged["seed"] = args.seed
    fam, lnk, penalty, cfg = _model_pieces(merged)
    ranks = _parse_ranks(merged.get("ranks", "1:10"))
    criterion = merged.get("criterion", "all")

    data, _, _ = _load_response(args)
    covs = _load_covariates(args, data.n, data.m)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    inputs = [p for p in (args.y, args.mask, args.x, args.z) if p]
    manifest = gio.Manifest("cv", merged, merged.get("seed", cfg.seed), inputs)

    payload: dict = {"ranks": ranks, "criterion": criterion}
    if criterion == "scree":
        max_rank = min(max(ranks) + 1, min(data.values.shape))
        eig = scree_eigenvalues(data, covs, max_rank)
        pick, flags = elbow_pick(eig)
        payload.update({"scree_eigenvalues": list(eig),
                        "chosen": {"scree": pick}, "flags": flags})
        _write_scree(out / "scree.csv", eig)
        n_failed = 0
        total = 1
    else:
        rep = cv_rank_select(
            data, covs, fam, lnk, ranks,
            folds=int(merged.get("folds", 5)), cfg=cfg, penalty=penalty,
            algorithm=merged.get("algorithm", "asgd"),
            holdout_fraction=float(merged.get("holdout_fraction", 0.3)),
            seed=int(merged.get("seed", cfg.seed)), threads=_threads(args),
        )
        payload.update({
            "aic": rep.aic, "bic": rep.bic, "cv_deviance": rep.cv_deviance,
            "scree_eigenvalues": rep.scree_eigenvalues, "chosen": rep.chosen,
            "failed_cells": [
                {"rank": r, "fold": f, "error": msg} for r, f, msg in rep.failures
            ],
        })
        _write_scree(out / "scree.csv", rep.scree_eigenvalues)
        n_failed = len(rep.failures)
        total = len(ranks) * int(merged.get("folds", 5))
    gio.write_json(out / "rank_report.json", payload)
    manifest.finish(out / "manifest.json")
    return 0 if n_failed <= total / 2 else 2


def _write_scree(path, eigenvalues) -> None:
    gio.write_dense_csv(path, np.asarray(eigenvalues, dtype=float)[:, None],
                        [f"{k + 1}" for k in range(len(eigenvalues))],
                        ["eigenvalue"])


def _parse_ranks(spec) -> list:
    if isinstance(spec, (list, tuple)):
        return [int(v) for v in spec]
    s = str(spec)
    if ":" in s:
        lo, hi = s.split(":")
        return list(range(int(lo), int(hi) + 1))
    return [int(v) for v in s.split(",")]


def cmd_simulate(args) -> int:
    keys = ["preset", "n", "m", "d_true", "n_groups", "group_probs", "n_batches",
            "batch_effect_scale", "libsize_log_sd", "family", "nb_shape", "phi",
            "seed", "format"]
    merged = _merge_config(args, keys)
    preset = merged.get("preset", "small")
    if preset not in _PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    sim_kwargs = dict(_PRESETS[preset])
    for key in ("n", "m", "d_true", "n_groups", "n_batches"):
        if key in merged:
            sim_kwargs[key] = int(merged[key])
    for key in ("batch_effect_scale", "libsize_log_sd", "phi"):
        if key in merged:
            sim_kwargs[key] = float(merged[key])
    if "group_probs" in merged:
        probs = merged["group_probs"]
        if isinstance(probs, str):
            probs = tuple(float(v) for v in probs.split(","))
        sim_kwargs["group_probs"] = tuple(probs)
        sim_kwargs.setdefault("n_groups", len(sim_kwargs["group_probs"]))
        sim_kwargs["n_groups"] = len(sim_kwargs["group_probs"])
    sim_kwargs["family"] = family(merged.get("family", "poisson"),
                                  merged.get("nb_shape"))
    sim_kwargs["seed"] = int(merged.get("seed", 0))
    cfg = SimConfig(**sim_kwargs)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = gio.Manifest("simulate", {**merged, "preset": preset}, cfg.seed)
    data, covs, truth = generate(cfg)

    if merged.get("format", "csv") == "mm":
        gio.write_matrix_market(out / "y.mtx", data.values, data.mask)
        gio.write_mask_file(out / "y_mask.txt", data.mask)
    else:
        gio.write_dense_csv(out / "y.csv", data.values)
    gio.write_dense_csv(out / "x.csv", covs.x)
    gio.write_dense_csv(out / "z.csv", covs.z)
    gio.write_dense_csv(out / "truth_U.csv", truth.u)
    gio.write_dense_csv(out / "truth_V.csv", truth.v)
    gio.write_dense_csv(out / "truth_B.csv", truth.b)
    gio.write_dense_csv(out / "truth_Gamma.csv", truth.gamma)
    gio.write_dense_csv(out / "truth_mu.csv", truth.mu)
    gio.write_dense_csv(out / "truth_labels.csv",
                        np.column_stack([truth.groups, truth.batches]).astype(float),
                        None, ["group", "batch"])
    manifest.finish(out / "manifest.json")
    return 0


def cmd_eval(args) -> int:
    keys = ["family", "nb_shape"]
    merged = _merge_config(args, keys)
    fam = family(merged.get("family", "poisson"), merged.get("nb_shape"))
    y, _, _ = gio.read_dense_csv(args.y)
    mu, _, _ = gio.read_dense_csv(args.mu)
    if y.shape != mu.shape:
        raise ConfigError("response and prediction matrices differ in shape")
    test_mask = ~gio.read_mask_file(args.test, y.shape)
    if not test_mask.any():
        raise ConfigError("test index list is empty")
    if args.train_mean is not None:
        ybar = args.train_mean
    else:
        train = np.isfinite(y) & ~test_mask
        if not train.any():
            raise ConfigError("no training entries left to form the baseline mean")
        ybar = float(np.mean(y[train]))
    y_test, mu_test = y[test_mask], mu[test_mask]
    result = {
        "rel_log_rmse": rel_log_rmse(y_test, mu_test, ybar),
        "rel_deviance": rel_deviance(y_test, mu_test, ybar, fam),
        "n_test": int(test_mask.sum()),
        "train_mean": ybar,
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gio.write_json(out / "metrics.json", result)
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gmfkit",
        description="Penalized generalized matrix factorization",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a model and write the factor files")
    _add_model_flags(p_fit)
    p_fit.add_argument("--rank", type=int, default=None)
    p_fit.add_argument("--algorithm", choices=sorted(_FITTERS), default=None)
    p_fit.add_argument("--identify", choices=["B1", "B2", "B3"], default=None)
    _add_common(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_cv = sub.add_parser("cv", help="rank selection by CV / AIC / BIC / scree")
    _add_model_flags(p_cv)
    p_cv.add_argument("--ranks", default=None, help="e.g. 1:10 or 2,4,6")
    p_cv.add_argument("--folds", type=int, default=None)
    p_cv.add_argument("--algorithm", choices=sorted(_FITTERS), default=None)
    p_cv.add_argument("--criterion", choices=["all", "scree"], default=None)
    p_cv.add_argument("--holdout-fraction", type=float, default=None)
    _add_common(p_cv)
    p_cv.set_defaults(func=cmd_cv)

    p_sim = sub.add_parser("simulate", help="generate a synthetic dataset")
    p_sim.add_argument("--preset", choices=sorted(_PRESETS), default=None)
    for key, typ in [("n", int), ("m", int), ("d-true", int), ("n-groups", int),
                     ("n-batches", int), ("batch-effect-scale", float),
                     ("libsize-log-sd", float), ("phi", float)]:
        p_sim.add_argument(f"--{key}", type=typ, default=None)
    p_sim.add_argument("--group-probs", default=None)
    p_sim.add_argument("--family", default=None)
    p_sim.add_argument("--nb-shape", type=float, default=None)
    p_sim.add_argument("--format", choices=["csv", "mm"], default=None)
    _add_common(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_eval = sub.add_parser("eval", help="out-of-sample metrics on held-out entries")
    p_eval.add_argument("--y", required=True, help="full response matrix (.csv)")
    p_eval.add_argument("--mu", required=True, help="predicted means (.csv)")
    p_eval.add_argument("--test", required=True,
                        help="held-out entry list, 1-based 'row col' lines")
    p_eval.add_argument("--train-mean", type=float, default=None)
    p_eval.add_argument("--family", default=None)
    p_eval.add_argument("--nb-shape", type=float, default=None)
    _add_common(p_eval)
    p_eval.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as err:
        print(f"gmfkit: divergence: {err}", file=sys.stderr)
        return 2
    except (ConfigError, GmfError, FileNotFoundError) as err:
        print(f"gmfkit: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
