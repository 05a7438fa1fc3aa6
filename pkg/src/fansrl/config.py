"""Strict JSON experiment configs.

Every key is declared in ``SCHEMA`` with its default, type and a one-line
description; unknown keys and wrongly typed values are rejected with the
line and column of the offending key. ``reference()`` renders the schema as
the documentation printed by ``fansrl schema``.
"""

from __future__ import annotations

import copy
import hashlib
import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

from .env import (ChangeSchedule, EnvSpec, TrackingConfig, fn_from_dict, make_tracking_env)
from .errors import ConfigError, ContractViolation

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class F:
    default: object
    kind: str
    doc: str
    choices: tuple = ()


_SINE_RW = {"kind": "sine", "offset": 1.5, "amp": 1.5, "freq": 0.2}

SCHEMA: dict = {
    "schema": F(SCHEMA_VERSION, "int", "config format version", (SCHEMA_VERSION,)),
    "output_dir": F("out", "str", "directory for every output file (overridden by --out)"),
    "seeds": F([0], "list[int]", "root seeds; each run derives all randomness from its seed"),
    "env": {
        "kind": F("tracking", "str", "environment family", ("tracking", "bench", "file")),
        "path": F(None, "str?", "EnvSpec JSON document when kind is 'file'"),
        "tracking": {
            "horizon": F(50, "int", "episode length H"),
            "decay": F(0.5, "float", "velocity carry-over per step"),
            "gain": F(1.5, "float", "action gain on velocity"),
            "dt": F(0.1, "float", "position integration step"),
            "wind_gain": F(0.05, "float", "θˢ (wind) gain on velocity"),
            "sigma_s": F(0.05, "float", "state noise std"),
            "sigma_r": F(0.0, "float", "reward noise std"),
            "init_scale": F(0.1, "float", "std of the initial state"),
            "reward_fn": F(_SINE_RW, "dict", "change function for the target velocity θʳ"),
            "reward_schedule": F({"mode": "across_episode"}, "dict", "change schedule for θʳ"),
            "wind_fn": F({"kind": "constant", "c": 0.0}, "dict", "change function for the wind θˢ"),
            "wind_schedule": F({"mode": "across_episode"}, "dict", "change schedule for θˢ"),
            "mechanism_change": F(False, "bool", "disable one random action column per episode"),
        },
        "bench": {
            "d": F(4, "int", "state dimension"),
            "m": F(1, "int", "action dimension"),
            "p": F(2, "int", "θˢ dimension"),
            "q": F(1, "int", "θʳ dimension"),
            "density": F(0.4, "float", "edge probability of the random graph"),
            "sigma": F(0.3, "float", "state and reward noise std"),
            "horizon": F(50, "int", "episode length H"),
            "theta": F("markov", "str", "θ process", ("markov", "sine")),
            "reward_varying": F(True, "bool", "θʳ varies (sine θ only)"),
            "family": F("linear", "str", "mechanism family", ("linear", "mlp")),
        },
    },
    "ident": {
        "mode": F("full", "str", "full: θ observed; partial: θ hidden", ("full", "partial")),
        "n_transitions": F(20000, "int", "transitions to simulate when no data file is given"),
        "data": F(None, "str?", "JSONL trajectories to use instead of simulating"),
        "test": F("partial_correlation", "str", "conditional-independence test",
                  ("partial_correlation", "permutation")),
        "alpha": F(0.01, "float", "significance level"),
        "min_samples": F(50, "int", "minimum rows per test"),
        "n_perm": F(200, "int", "permutations for the permutation test"),
        "basis_freqs": F([0.005, 0.05, 0.2], "list[float]", "surrogate time-basis frequencies (partial mode)"),
    },
    "fnvae": {
        "p": F(2, "int", "learned θˢ dimension"),
        "q": F(2, "int", "learned θʳ dimension"),
        "embed": F(32, "int", "inference embedding width"),
        "lstm": F(32, "int", "inference LSTM width"),
        "dec_hidden": F(32, "int", "decoder hidden width"),
        "prior_hidden": F(16, "int", "prior net hidden width"),
        "prior_residual": F(True, "bool", "prior mean adds diag(Ctt)·θ_prev"),
        "mask_init": F(2.0, "float", "initial mask logit"),
        "epochs": F(1500, "int", "offline training epochs"),
        "batch": F(4, "int", "windows per epoch"),
        "window": F(150, "int", "window length k"),
        "lr": F(3e-3, "float", "learning rate for the nets"),
        "lr_g": F(1e-2, "float", "learning rate for the mask logits"),
        "weights": F({}, "dict", "loss weights k1..k5 and per-family sparsity weights w (7 values)"),
        "smooth": F({"kind": "l1"}, "dict", "smoothness penalty: kind l1|ma|ema, window, beta"),
        "n_episodes": F(40, "int", "uniform-random episodes simulated by train-model"),
        "data": F(None, "str?", "JSONL trajectories for train-model instead of simulating"),
    },
    "policy": {
        "hidden": F(64, "int", "hidden width of actor and critics"),
        "layers": F(2, "int", "hidden layers"),
        "discount": F(0.99, "float", "discount factor"),
        "tau": F(0.005, "float", "Polyak rate"),
        "lr": F(3e-4, "float", "learning rate of actor, critics and temperature"),
        "init_log_alpha": F(0.0, "float", "initial log temperature"),
        "fixed_alpha": F(None, "float?", "fix the temperature instead of learning it"),
        "init_scale": F(0.1, "float", "std of the Gaussian weight init"),
        "batch_size": F(128, "int", "SAC minibatch size"),
        "buffer_capacity": F(100000, "int", "replay capacity"),
        "update_every": F(1, "int", "environment steps per SAC update"),
    },
    "run": {
        "n_episodes": F(300, "int", "online episodes N"),
        "n_init": F(20, "int", "uniform-random episodes before the online loop"),
        "mode": F("auto", "str", "θ handling; auto follows the env schedules", ("auto", "continuous", "discrete")),
        "refresh_every": F(10, "int", "steps between online FN-VAE refreshes (0 = never)"),
        "refresh_batch": F(4, "int", "windows per refresh"),
        "relabel_every": F(10, "int", "episodes between buffer θ relabels (0 = never)"),
        "theta_sample": F(False, "bool", "sample θ from the prior instead of using its mean"),
        "eval_every": F(0, "int", "episodes between deterministic held-out evaluations (0 = never)"),
        "final_window": F(50, "int", "episodes averaged for the final return"),
        "n_sampled": F(10, "int", "episodes sampled by theta-analysis"),
    },
}


def _defaults(schema: dict) -> dict:
    return {k: _defaults(v) if isinstance(v, dict) else copy.deepcopy(v.default) for k, v in schema.items()}


def _locate(text: str | None, path: tuple[str, ...]) -> tuple[int | None, int | None]:
    """Line and column of the key at ``path``, found by scanning key by key."""
    if text is None:
        return None, None
    pos, found = 0, None
    for key in path:
        m = re.compile(r'"' + re.escape(key) + r'"\s*:').search(text, pos)
        if m is None:
            break
        found, pos = m.start(), m.end()
    if found is None:
        return 1, 1
    line = text.count("\n", 0, found) + 1
    col = found - (text.rfind("\n", 0, found) + 1) + 1
    return line, col


def _type_ok(value, kind: str) -> bool:
    if kind.endswith("?"):
        if value is None:
            return True
        kind = kind[:-1]
    is_num = lambda v: isinstance(v, (int, float)) and not isinstance(v, bool)  # noqa: E731
    if kind == "int":
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == "float":
        return is_num(value)
    if kind == "bool":
        return isinstance(value, bool)
    if kind == "str":
        return isinstance(value, str)
    if kind == "dict":
        return isinstance(value, dict)
    if kind == "list[int]":
        return isinstance(value, list) and all(isinstance(v, int) and not isinstance(v, bool) for v in value)
    if kind == "list[float]":
        return isinstance(value, list) and all(is_num(v) for v in value)
    raise AssertionError(kind)


def _merge(schema: dict, doc: dict, text: str | None, path: tuple[str, ...]) -> dict:
    out = {}
    for key in doc:
        if key not in schema:
            where = ".".join(path + (key,))
            raise ConfigError(f"unknown key {where!r}", *_locate(text, path + (key,)))
    for key, spec in schema.items():
        here = path + (key,)
        if isinstance(spec, dict):
            sub = doc.get(key, {})
            if not isinstance(sub, dict):
                raise ConfigError(f"{'.'.join(here)} must be an object", *_locate(text, here))
            out[key] = _merge(spec, sub, text, here)
            continue
        if key not in doc:
            out[key] = copy.deepcopy(spec.default)
            continue
        v = doc[key]
        if not _type_ok(v, spec.kind):
            raise ConfigError(f"{'.'.join(here)} must be {spec.kind}, got {json.dumps(v)}", *_locate(text, here))
        if spec.choices and v not in spec.choices:
            raise ConfigError(f"{'.'.join(here)} must be one of {list(spec.choices)}, got {json.dumps(v)}",
                              *_locate(text, here))
        out[key] = float(v) if spec.kind.startswith("float") and v is not None else v
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """A fully resolved config: every key present, defaults filled in."""

    doc: dict
    base_dir: Path = Path(".")
    # source text, kept for error locations
    text: str | None = field(default=None, compare=False, repr=False)

    @property
    def hash(self) -> str:
        canon = json.dumps(self.doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]

    def section(self, name: str) -> dict:
        return self.doc[name]

    def with_seeds(self, seeds: list[int]) -> "ExperimentConfig":
        return replace(self, doc={**self.doc, "seeds": list(seeds)})

    # ---- builders -----------------------------------------------------------------

    def env_spec(self) -> EnvSpec:
        e = self.doc["env"]
        try:
            if e["kind"] == "tracking":
                t = dict(e["tracking"])
                for k in ("reward_fn", "wind_fn"):
                    t[k] = fn_from_dict(t[k])
                for k in ("reward_schedule", "wind_schedule"):
                    t[k] = ChangeSchedule.from_dict(t[k])
                return make_tracking_env(TrackingConfig(**t))
            if e["kind"] == "bench":
                from .benches import ident_bench
                b = e["bench"]
                seed = self.doc["seeds"][0] if self.doc["seeds"] else 0
                return ident_bench(seed, **b)
            if e["path"] is None:
                raise ConfigError("env.path is required when env.kind is 'file'", *_locate(self.text, ("env", "path")))
            return EnvSpec.from_dict(json.loads((self.base_dir / e["path"]).read_text()))
        except (ContractViolation, ValueError, TypeError, KeyError, OSError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"env: {exc}") from exc

    def ci_config(self, seed: int = 0):
        from .ident import CiConfig
        i = self.doc["ident"]
        try:
            return CiConfig(i["test"], i["alpha"], i["min_samples"], i["n_perm"], seed, tuple(i["basis_freqs"]))
        except ContractViolation as exc:
            raise ConfigError(f"ident: {exc}") from exc

    def fnvae_overrides(self) -> dict:
        f = self.doc["fnvae"]
        return {k: f[k] for k in ("embed", "lstm", "dec_hidden", "prior_hidden", "prior_residual", "mask_init")}

    def train_config(self, seed: int = 0):
        from .fnvae import LossWeights, Smoothness, TrainConfig
        f = self.doc["fnvae"]
        try:
            w = LossWeights.from_dict({**LossWeights().to_dict(), **f["weights"]})
            sm = Smoothness(**f["smooth"])
            return TrainConfig(f["epochs"], f["batch"], f["window"], f["lr"], f["lr_g"], True, w, sm, seed)
        except (ContractViolation, TypeError) as exc:
            raise ConfigError(f"fnvae: {exc}") from exc

    def run_config(self, seed: int = 0):
        from .driver import RunConfig
        from .sac import SacConfig
        pol, r, f = self.doc["policy"], self.doc["run"], self.doc["fnvae"]
        try:
            sac = SacConfig(pol["hidden"], pol["layers"], pol["discount"], pol["tau"], pol["lr"],
                            pol["init_log_alpha"], pol["fixed_alpha"], pol["init_scale"], seed)
            return RunConfig(r["n_episodes"], r["n_init"], r["mode"], f["p"], f["q"], self.fnvae_overrides(),
                             self.train_config(seed), r["refresh_every"], r["refresh_batch"], r["relabel_every"],
                             r["theta_sample"], sac, pol["batch_size"], pol["buffer_capacity"], pol["update_every"],
                             r["eval_every"], seed)
        except ContractViolation as exc:
            raise ConfigError(f"run/policy: {exc}") from exc


def loads(text: str, base_dir: Path | str = ".") -> ExperimentConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc.msg}", exc.lineno, exc.colno) from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object", 1, 1)
    if "schema" not in doc:
        raise ConfigError(f'missing "schema": {SCHEMA_VERSION}', 1, 1)
    return ExperimentConfig(_merge(SCHEMA, doc, text, ()), Path(base_dir), text)


def load(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return loads(text, path.parent)


def default_config() -> ExperimentConfig:
    return ExperimentConfig(_defaults(SCHEMA))


def reference() -> str:
    """Every key with type, default and description, one per line."""
    lines = [f"Experiment config reference (schema {SCHEMA_VERSION}). Unknown keys are rejected.", ""]

    def walk(schema, prefix):
        for k, v in schema.items():
            name = prefix + k
            if isinstance(v, dict):
                lines.append("")
                lines.append(f"[{name}]")
                walk(v, name + ".")
                continue
            extra = f"  one of {list(v.choices)}" if v.choices and len(v.choices) > 1 else ""
            lines.append(f"{name:34s} {v.kind:12s} default {json.dumps(v.default)}")
            lines.append(f"    {v.doc}{extra}")
    walk(SCHEMA, "")
    return "\n".join(lines) + "\n"
