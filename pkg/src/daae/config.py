"""Run configuration: one flat key-path document per run.

A config is a JSON object; nested objects are equivalent to dotted flat
keys (``{"train": {"epochs": 3}}`` == ``{"train.epochs": 3}``).  CLI
flags override by key path with values parsed to the existing field's
type.  The canonical serialized form (sorted flat keys) is hashed to
stamp runs, so two runs are comparable iff their hashes match.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .losses import LossWeights
from .training import TrainConfig

SENSITIVITY_TARGETS_KEY = "eval.sensitivity_targets"


@dataclass
class DataConfig:
    dataset_dir: str = ""  # prepared dataset directory (manifest + .tensors)
    synth_n_per_class: int = 0  # when > 0, generate a synthetic corpus instead
    n_unlabelled: int = 2000
    n_labelled_train: int = 100
    n_val: int = 250
    n_test: int = 250
    augment: bool = False


@dataclass
class RunConfig:
    variant: str = "ssdaae"
    out_dir: str = ""
    seed: int = 0
    checkpoint_every: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        if isinstance(self.data, dict):
            self.data = DataConfig(**self.data)


def flatten(tree, prefix=""):
    flat = {}
    for key, value in tree.items():
        path = f"{prefix}.{key}" if prefix else key
        if isinstance(value, dict):
            flat.update(flatten(value, path))
        else:
            flat[path] = value
    return flat


def unflatten(flat):
    tree = {}
    for path, value in flat.items():
        node = tree
        parts = path.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"key path {path!r} collides with a scalar")
        node[parts[-1]] = value
    return tree


def config_to_flat(cfg):
    return flatten(asdict(cfg))


def config_hash(cfg):
    """Stable hash of the canonical flat form."""
    canon = json.dumps(config_to_flat(cfg), sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _coerce(value, reference):
    """Parse a CLI string to the type of the existing value at that path."""
    if isinstance(reference, bool):
        if str(value).lower() in ("1", "true", "yes", "on"):
            return True
        if str(value).lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {value!r}")
    if isinstance(reference, int) and not isinstance(reference, bool):
        return int(value)
    if isinstance(reference, float):
        return float(value)
    return str(value)


def load_config(path=None, overrides=()):
    """Build a RunConfig from an optional JSON file plus key=value overrides."""
    flat = {}
    if path:
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: not valid JSON ({exc})")
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config root must be an object")
        flat = flatten(doc)

    defaults = config_to_flat(RunConfig())
    for key in flat:
        if key not in defaults:
            raise ConfigError(f"unknown config key {key!r}")

    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        key, value = item.split("=", 1)
        key = key.strip()
        if key not in defaults:
            raise ConfigError(f"unknown config key {key!r}")
        flat[key] = _coerce(value, defaults[key])

    merged = dict(defaults)
    merged.update(flat)
    tree = unflatten(merged)
    tree["train"]["weights"] = LossWeights(**tree["train"]["weights"])
    return RunConfig(**tree)


def save_config(cfg, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(config_to_flat(cfg), fh, indent=2, sort_keys=True)
