"""Load an :class:`ExperimentConfig` from a TOML file.

Layout (every key optional)::

    [experiment]   seed, rounds, clients, local_steps, batch_size, eta, alpha,
                   per_client, attacker_id, victims, reference_size, threads,
                   record_wall_time
    [data]         dir (fills the four paths with the usual IDX names),
                   train_images, train_labels, test_images, test_labels,
                   downsample, n_classes
    [model]        arch, hidden, activation, init, channels, kernel, stride
    [aggregation]  rule, then that rule's parameters by name
    [dp]           enabled, clip, sigma, delta, c, epsilon
    [attack]       any AttackConfig field
    [bound]        probes, recon_iterations, grad_sample
    [output]       dir

Relative paths are resolved against the config file's directory.  Unknown
sections or keys are errors.
"""

from __future__ import annotations

import dataclasses
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .adversary import AttackConfig
from .errors import ConfigError
from .harness import BoundConfig, DataConfig, ExperimentConfig, ModelConfig
from .privacy import DpConfig, calibrate_sigma

IDX_NAMES = {
    "train_images": "train-images-idx3-ubyte.gz",
    "train_labels": "train-labels-idx1-ubyte.gz",
    "test_images": "t10k-images-idx3-ubyte.gz",
    "test_labels": "t10k-labels-idx1-ubyte.gz",
}

_EXPERIMENT_KEYS = {
    "seed": "seed", "rounds": "rounds", "clients": "n_clients", "local_steps": "local_steps",
    "batch_size": "batch_size", "eta": "eta", "alpha": "alpha", "per_client": "per_client",
    "attacker_id": "attacker_id", "victims": "victims", "reference_size": "reference_size",
    "threads": "threads", "record_wall_time": "record_wall_time",
}
_SECTIONS = {"experiment", "data", "model", "aggregation", "dp", "attack", "bound", "output"}


def _fields(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def _check_keys(section: str, table: dict, allowed) -> None:
    extra = set(table) - set(allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in [{section}]: {sorted(extra)}")


def _tuples(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


def _resolve(path: str, base: Path) -> str:
    p = Path(path).expanduser()
    return str(p if p.is_absolute() else base / p)


def from_dict(raw: dict, base_dir=".") -> ExperimentConfig:
    base = Path(base_dir)
    _check_keys("top level", raw, _SECTIONS)
    for name, table in raw.items():
        if not isinstance(table, dict):
            raise ConfigError(f"[{name}] must be a table")

    data = dict(raw.get("data", {}))
    _check_keys("data", data, _fields(DataConfig) | {"dir"})
    root = data.pop("dir", None)
    if root is not None:
        for key, fname in IDX_NAMES.items():
            data.setdefault(key, str(Path(root) / fname))
    for key in IDX_NAMES:
        if key in data:
            data[key] = _resolve(data[key], base)

    mdl = raw.get("model", {})
    _check_keys("model", mdl, _fields(ModelConfig))

    agg = dict(raw.get("aggregation", {}))
    rule = agg.pop("rule", "fedavg")

    dp = dict(raw.get("dp", {}))
    _check_keys("dp", dp, _fields(DpConfig) | {"epsilon"})
    eps = dp.pop("epsilon", None)

    attack = raw.get("attack", {})
    _check_keys("attack", attack, _fields(AttackConfig))
    bnd = raw.get("bound", {})
    _check_keys("bound", bnd, _fields(BoundConfig))
    out = raw.get("output", {})
    _check_keys("output", out, {"dir"})
    exp = raw.get("experiment", {})
    _check_keys("experiment", exp, _EXPERIMENT_KEYS)

    kwargs = {_EXPERIMENT_KEYS[k]: v for k, v in exp.items()}
    if "victims" in kwargs:
        kwargs["victims"] = tuple(kwargs["victims"])
    try:
        if eps is not None:
            # calibrate the noise multiplier for the requested nominal epsilon
            batch = kwargs.get("batch_size", 4)
            per_client = kwargs.get("per_client", 100)
            steps = kwargs.get("rounds", 10) * kwargs.get("local_steps", 1)
            dp.setdefault("enabled", True)
            dp["sigma"] = calibrate_sigma(min(1.0, batch / per_client), steps, dp.get("delta", 1e-5),
                                          float(eps), dp.get("c", 1.0))
        return ExperimentConfig(
            data=DataConfig(**data),
            model=ModelConfig(**_tuples(mdl)),
            rule=rule,
            rule_params=agg,
            dp=DpConfig(**dp),
            attack=AttackConfig(**_tuples(attack)),
            bound=BoundConfig(**bnd),
            out_dir=_resolve(out["dir"], base) if "dir" in out else "runs/out",
            **kwargs,
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path}: not a text file ({exc})") from None
    return from_dict(raw, path.parent)
