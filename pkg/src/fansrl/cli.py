"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 failed invariant (``validate``).
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, default_config, load, reference
from .errors import ConfigError, ContractViolation, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_INVALID = 0, 1, 2, 3


def _header(cfg: ExperimentConfig, seed) -> dict:
    return {"config_hash": cfg.hash, "seed": seed, "version": __version__}


def _dump(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    raise TypeError(f"not serializable: {type(x).__name__}")


# ---- subcommands ------------------------------------------------------------------

def cmd_ident(cfg: ExperimentConfig, out: Path) -> None:
    from .benches import hide_theta, n_episodes_for
    from .env import collect_trajectories, read_jsonl
    from .graph import shd
    from .ident import identify_full, identify_partial, shd_blocks
    ic = cfg.section("ident")
    for seed in cfg.doc["seeds"]:
        spec = cfg.with_seeds([seed]).env_spec()
        if ic["data"] is not None:
            trajs = read_jsonl(cfg.base_dir / ic["data"])
        else:
            trajs = collect_trajectories(spec, None, n_episodes_for(ic["n_transitions"], spec.horizon), seed=seed)
        ci = cfg.ci_config(seed)
        doc = {"header": _header(cfg, seed)}
        if ic["mode"] == "full":
            res = identify_full(trajs, ci)
            doc["shd"] = shd(res.recovered, spec.graph) if ic["data"] is None else None
        else:
            res = identify_partial(hide_theta(trajs), ci, spec.p, spec.q)
            doc["shd"] = (shd_blocks(res.recovered, spec.graph, ("Css", "Cas", "csr", "car"))
                          if ic["data"] is None else None)
        doc["result"] = res.to_dict()
        _dump(out / f"ident_seed{seed}.json", doc)
        print(f"ident seed {seed}: shd={doc['shd']}")


def cmd_train_model(cfg: ExperimentConfig, out: Path) -> None:
    from .env import collect_trajectories, read_jsonl
    from .fnvae import FnVaeConfig, FnVaeParams, extract_masks, train_fnvae
    from .graph import shd
    f = cfg.section("fnvae")
    for seed in cfg.doc["seeds"]:
        spec = cfg.with_seeds([seed]).env_spec()
        trajs = (read_jsonl(cfg.base_dir / f["data"]) if f["data"] is not None
                 else collect_trajectories(spec, None, f["n_episodes"], seed=seed))
        params = FnVaeParams(FnVaeConfig(spec.d, spec.m, f["p"], f["q"], **cfg.fnvae_overrides(), seed=seed))
        params.fit_normalizer(np.concatenate([t.s for t in trajs]), np.concatenate([t.r for t in trajs]))
        train_fnvae(params, trajs, cfg.train_config(seed))
        params.save(out / f"fnvae_seed{seed}.fnv")
        hist = params.history
        keys = ["total", "rec_dyn", "rec_rw", "pred_dyn", "pred_rw", "kl", "smooth", "sparse"]
        with open(out / f"fnvae_seed{seed}_history.csv", "w") as fh:
            for k, v in _header(cfg, seed).items():
                fh.write(f"# {k}={v}\n")
            fh.write("epoch," + ",".join(keys) + "\n")
            for i, row in enumerate(hist):
                fh.write(f"{i}," + ",".join(repr(float(row[k])) for k in keys) + "\n")
        g = extract_masks(params)
        observed = sum(int(np.sum(getattr(g, k).astype(bool) != getattr(spec.graph, k).astype(bool)))
                       for k in ("Css", "Cas", "csr", "car"))
        doc = {"header": _header(cfg, seed), "graph": g.to_dict(), "shd_observed": observed}
        if (g.p, g.q) == (spec.p, spec.q):
            doc["shd"] = shd(g, spec.graph)
        _dump(out / f"fnvae_seed{seed}_masks.json", doc)
        print(f"train-model seed {seed}: final loss {hist[-1]['total'] if hist else float('nan'):.4f}, "
              f"observed-block shd {observed}")


def _run_one(task):
    """Worker body; top-level so process pools can pickle it."""
    doc, base_dir, method, seed, out = task
    from .driver import RUNNERS
    cfg = ExperimentConfig(doc, Path(base_dir))
    spec = cfg.with_seeds([seed]).env_spec()
    m = RUNNERS[method](spec, cfg.run_config(seed), seed)
    m.write_csv(Path(out) / f"{method}_seed{seed}.csv", _header(cfg, seed))
    last = cfg.doc["run"]["final_window"]
    info = {k: v for k, v in m.info.items() if k != "graph"}
    return {"method": method, "seed": seed, "final_return": m.final_return(last),
            "policy_input_dim": m.policy_input_dim, "eval_returns": m.eval_returns, "info": info}


def _pool_map(fn, tasks, threads: int):
    if threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, tasks))


def cmd_run(cfg: ExperimentConfig, out: Path, mode: str, threads: int) -> None:
    methods = ["sac", "oracle", "fansrl"] if mode == "compare" else [mode]
    tasks = [(cfg.doc, str(cfg.base_dir), meth, s, str(out)) for meth in methods for s in cfg.doc["seeds"]]
    results = _pool_map(_run_one, tasks, threads)
    summary = {"header": _header(cfg, cfg.doc["seeds"]), "methods": {}}
    for meth in methods:
        rows = [r for r in results if r["method"] == meth]
        vals = np.array([r["final_return"] for r in rows])
        summary["methods"][meth] = {
            "seeds": [r["seed"] for r in rows], "final_returns": vals.tolist(),
            "mean": float(vals.mean()), "std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0,
            "policy_input_dim": [r["policy_input_dim"] for r in rows],
            "runs": [{k: r[k] for k in ("seed", "eval_returns", "info")} for r in rows]}
        print(f"{meth:7s} final return {summary['methods'][meth]['mean']:.2f} "
              f"± {summary['methods'][meth]['std']:.2f} over {len(rows)} seed(s)")
    _dump(out / "summary.json", summary)


def _theta_one(task):
    doc, base_dir, seed, out = task
    from .driver import run_fansrl, theta_analysis
    cfg = ExperimentConfig(doc, Path(base_dir))
    m = run_fansrl(cfg.with_seeds([seed]).env_spec(), cfg.run_config(seed), seed)
    res = theta_analysis(m, cfg.doc["run"]["n_sampled"])
    with open(Path(out) / f"theta_seed{seed}.csv", "w") as fh:
        for k, v in _header(cfg, seed).items():
            fh.write(f"# {k}={v}\n")
        n = len(res["true"])
        fh.write("true_theta_r," + ",".join(f"d{j}" for j in range(n)) + "\n")
        for i in range(n):
            fh.write(repr(float(res["true"][i, 0])) + "," + ",".join(repr(float(x)) for x in res["distances"][i]) + "\n")
    return {"seed": seed, "rho": res["rho"], "true_theta_r": res["true"][:, 0].tolist()}


def cmd_theta_analysis(cfg: ExperimentConfig, out: Path, threads: int) -> None:
    tasks = [(cfg.doc, str(cfg.base_dir), s, str(out)) for s in cfg.doc["seeds"]]
    rows = _pool_map(_theta_one, tasks, threads)
    for r in rows:
        print(f"theta-analysis seed {r['seed']}: spearman rho {r['rho']:.3f}")
    _dump(out / "theta_analysis.json", {"header": _header(cfg, cfg.doc["seeds"]), "runs": rows})


def cmd_validate() -> int:
    from .validate import run_all
    return EXIT_OK if run_all() else EXIT_INVALID


# ---- argument handling --------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fansrl", description="Factored non-stationary RL experiments.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, threads=False):
        p.add_argument("--config", help="JSON experiment config (defaults when omitted)")
        p.add_argument("--seed", type=int, help="run this seed instead of the config's seed list")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        if threads:
            p.add_argument("--threads", type=int, default=1, help="parallel workers for seed sweeps")
        return p

    common(sub.add_parser("ident", help="structure identification on simulated or recorded data"))
    common(sub.add_parser("train-model", help="offline FN-VAE training"))
    run = common(sub.add_parser("run", help="online FANS-RL, oracle or SAC runs"), threads=True)
    run.add_argument("--mode", choices=["fansrl", "oracle", "sac", "compare"], default="fansrl")
    common(sub.add_parser("theta-analysis", help="learned-θ distance matrices"), threads=True)
    sub.add_parser("validate", help="run the invariant suite")
    sub.add_parser("schema", help="print the config reference")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "schema":
        sys.stdout.write(reference())
        return EXIT_OK
    if args.command == "validate":
        return cmd_validate()
    try:
        cfg = load(args.config) if args.config else default_config()
        if args.seed is not None:
            cfg = cfg.with_seeds([args.seed])
        out = Path(args.out or cfg.doc["output_dir"])
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "ident":
            cmd_ident(cfg, out)
        elif args.command == "train-model":
            cmd_train_model(cfg, out)
        elif args.command == "run":
            cmd_run(cfg, out, args.mode, args.threads)
        else:
            cmd_theta_analysis(cfg, out, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ContractViolation as exc:
        print(f"invalid setting: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        snap = Path(args.out or ".") / "numerical_failure.npz"
        flat = {}
        _flatten(exc.snapshot, "", flat)
        np.savez(snap, **flat)
        print(f"state snapshot written to {snap}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _flatten(obj, prefix: str, out: dict) -> None:
    if isinstance(obj, dict):
        for k, v in obj.items():
            _flatten(v, f"{prefix}{k}/", out)
        return
    try:
        out[prefix.rstrip("/") or "value"] = np.asarray(obj, dtype=np.float64)
    except (TypeError, ValueError):
        out[prefix.rstrip("/") or "value"] = np.asarray(str(obj))


if __name__ == "__main__":
    sys.exit(main())
