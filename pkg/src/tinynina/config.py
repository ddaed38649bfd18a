"""Training hyperparameters and the flat ``key=value`` run configuration."""
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError
from .optim import AdamState, Schedule

# Defaults follow the published hyperparameter table: Adam, step decay x0.5 every
# 10 epochs, batch size 1, 200 SR epochs / 70 predictor epochs, lambda = 1e-4.
SR_EPOCHS = 200
PREDICTOR_EPOCHS = 70


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = SR_EPOCHS
    base_lr: float = 1e-3
    decay_factor: float = 0.5
    decay_period: int = 10
    lam: float = 1e-4
    batch_size: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    val_fraction: float = 0.2

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size != 1:
            raise ConfigError("only batch size 1 is supported")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in (0, 1)")

    @property
    def schedule(self):
        return Schedule(self.base_lr, self.decay_factor, self.decay_period)

    def adam(self):
        return AdamState(self.beta1, self.beta2, self.adam_eps)

    def with_(self, **kw):
        return replace(self, **kw)


def predictor_train_config(**kw):
    kw.setdefault("epochs", PREDICTOR_EPOCHS)
    kw.setdefault("lam", 0.0)
    return TrainConfig(**kw)


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise ValueError(f"must be >= 1, got {v}")
    return v


def _nonneg_float(text):
    v = float(text)
    if not v >= 0.0:
        raise ValueError(f"must be >= 0, got {v}")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0.0:
        raise ValueError(f"must be > 0, got {v}")
    return v


def _mode(text):
    if text not in ("naive", "channel", "both"):
        raise ValueError(f"mode must be naive, channel or both, got {text!r}")
    return text


# closed schema: key -> parser
RUN_SCHEMA = {
    "mode": _mode,
    "scale": _positive_int,
    "epochs": _positive_int,
    "sr_epochs": _positive_int,
    "pred_epochs": _positive_int,
    "base_lr": _positive_float,
    "lambda": _nonneg_float,
    "seed": int,
    "data_seed": int,
    "tiles": _positive_int,
    "size": _positive_int,
    "noise_sigma": _nonneg_float,
    "out": str,
    "data": str,
    "threads": _positive_int,
    "features": _positive_int,
    "blocks": int,
    "stem_channels": _positive_int,
    "desk_scale": _bool,
}


def parse_run_config(text, source="<config>"):
    """Parse flat ``key=value`` lines; ``#`` starts a comment. Unknown keys are rejected."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        if key not in RUN_SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            out[key] = RUN_SCHEMA[key](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return out


def load_run_config(path):
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    return parse_run_config(text, str(p))


def config_fields(cls):
    return [f.name for f in fields(cls)]
