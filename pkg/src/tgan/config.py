"""Flat ``key = value`` run configuration.

Every key is declared in :data:`DEFAULTS` with its type; unknown keys are
rejected. Only the IDX dataset paths lack a usable default.
"""

from .exceptions import ContractError


class ConfigError(ContractError):
    pass


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (type, default); a default of None marks an optional path
DEFAULTS = {
    "seed": (int, 0),
    "out_dir": (str, "runs/default"),
    "dataset.kind": (str, "ring"),
    "dataset.k": (int, 8),
    "dataset.radius": (float, 2.0),
    "dataset.std": (float, 0.05),
    "dataset.n": (int, 2000),
    "dataset.labeled": (bool, True),
    "dataset.images": (str, None),
    "dataset.labels": (str, None),
    "dataset.per_class": (int, 50),
    "dataset.side": (int, 8),
    "latent.kind": (str, "t_mixture"),
    "latent.n_components": (int, 10),
    "latent.dim": (int, 10),
    "latent.nu": (float, 5.0),
    "latent.attention_hidden": (int, 0),  # 0 = max(n_components, 32)
    "latent.sigma_penalty": (float, 0.0),
    "model.hidden": (int, 128),
    "train.steps": (int, 5000),
    "train.batch": (int, 64),
    "train.lr": (float, 2e-4),
    "train.beta1": (float, 0.5),
    "train.beta2": (float, 0.999),
    "train.optimizer": (str, "adam"),
    "train.alpha": (float, 1.0),
    "train.g_mode": (str, "nonsaturating"),
    "train.d_g_ratio": (int, 1),
    "train.dropout": (float, 0.3),
    "train.checkpoint_every": (int, 1000),
    "eval.auto": (bool, True),
    "eval.samples": (int, 2000),
    "eval.splits": (int, 10),
    "eval.threshold_sigma": (float, 3.0),
    "eval.tail_fraction": (float, 0.1),
    "eval.grid_rows": (int, 10),
    "verify.sweep": (int, 50),
    "verify.grid_points": (int, 13),
    "verify.max_dim": (int, 5),
    "verify.samples": (int, 100_000),
    "verify.sampling_sets": (int, 5),
    "verify.ks_threshold": (float, 1e-3),
}

_CHOICES = {
    "dataset.kind": ("ring", "mnist"),
    "latent.kind": ("t_mixture", "gaussian_mixture", "single_gaussian"),
    "train.optimizer": ("adam", "sgd"),
    "train.g_mode": ("nonsaturating", "saturating"),
}


def coerce(key, raw):
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}")
    kind, default = DEFAULTS[key]
    if not isinstance(raw, str):
        value = raw
    elif raw.strip() == "" and default is None:
        value = None
    else:
        try:
            value = _parse_bool(raw) if kind is bool else kind(raw.strip())
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
    if key in _CHOICES and value not in _CHOICES[key]:
        raise ConfigError(f"{key} must be one of {_CHOICES[key]}, got {value!r}")
    return value


def _format(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


class RunConfig:
    """Fully resolved run settings; index with the dotted key."""

    def __init__(self, values=None):
        self.values = {k: default for k, (_, default) in DEFAULTS.items()}
        for k, v in (values or {}).items():
            self.values[k] = coerce(k, v)

    def __getitem__(self, key):
        return self.values[key]

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.values == other.values

    @classmethod
    def parse(cls, text):
        values = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
            key, raw = (part.strip() for part in line.split("=", 1))
            values[key] = raw
        return cls(values)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.parse(fh.read())

    def with_overrides(self, overrides):
        merged = dict(self.values)
        merged.update({k: coerce(k, v) for k, v in overrides.items()})
        return RunConfig(merged)

    def serialize(self):
        return "".join(f"{k} = {_format(v)}\n" for k, v in sorted(self.values.items()))
