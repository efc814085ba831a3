"""Training configuration: a flat key=value text format, one key per field."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass


@dataclass
class TrainConfig:
    lr: float = 0.0001
    epochs: int = 3
    batch_size: int = 8
    h: int = 64
    k: int = 30  # candidate cap per mention
    t: int = 3  # type cap per entity
    r: int = 50  # relation cap per entity
    heads: int = 16
    layers: int = 1
    dropout: float = 0.1
    reg_scheme: str = "inv_pop_power"  # fixed | inv_pop_power | inv_pop_linear | inv_pop_log | pop_power
    reg_fixed_p: float = 0.0
    reg_max_count: int = 0  # pop_power pivot; 0 = use the observed maximum
    freeze_encoder: bool = False
    use_entity: bool = True
    use_type: bool = True
    use_kg: bool = True
    type_prediction: bool = True
    seed: int = 0
    d_u: int = 64
    d_t: int = 32
    d_r: int = 32
    d_c: int = 32
    c: int = 6  # coarse type count
    encoder_layers: int = 0
    max_sentence_len: int = 100
    max_ngram: int = 5

    def validate(self) -> "TrainConfig":
        if not (self.use_entity or self.use_type or self.use_kg):
            raise ValueError("at least one of use_entity/use_type/use_kg must be enabled")
        for name in ("lr", "epochs", "batch_size", "h", "k", "t", "r", "heads", "layers",
                     "d_u", "d_t", "d_r", "d_c", "c", "max_sentence_len", "max_ngram"):
            if getattr(self, name) <= 0:
                raise ValueError(f"config field {name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.h % self.heads != 0:
            raise ValueError(f"h={self.h} not divisible by heads={self.heads}")
        if self.reg_scheme not in ("fixed", "inv_pop_power", "inv_pop_linear",
                                   "inv_pop_log", "pop_power"):
            raise ValueError(f"unknown reg_scheme {self.reg_scheme!r}")
        if self.reg_scheme == "fixed" and not 0.0 <= self.reg_fixed_p <= 1.0:
            raise ValueError(f"fixed masking probability must be in [0, 1], got {self.reg_fixed_p}")
        if self.encoder_layers not in (0, 1, 2):
            raise ValueError(f"encoder_layers must be 0, 1 or 2, got {self.encoder_layers}")
        return self


_BOOL_FIELDS = {"freeze_encoder", "use_entity", "use_type", "use_kg", "type_prediction"}


def _coerce(name: str, raw: str):
    ftypes = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    if name not in ftypes:
        raise ValueError(f"unknown config key {name!r}")
    if name in _BOOL_FIELDS:
        low = raw.strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"config key {name!r} expects a boolean, got {raw!r}")
    if name == "reg_scheme":
        return raw.strip()
    if ftypes[name] in ("int", int):
        return int(raw)
    return float(raw)


def parse_config(text: str, source: str = "<config>") -> TrainConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected key=value")
        name, raw = line.split("=", 1)
        name = name.strip()
        try:
            values[name] = _coerce(name, raw)
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: {exc}") from None
    return TrainConfig(**values).validate()


def load_config(path) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), source=str(path))


def serialize_config(cfg: TrainConfig) -> str:
    lines = []
    for f in sorted(dataclasses.fields(cfg), key=lambda f: f.name):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{f.name}={value}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: TrainConfig) -> bytes:
    return hashlib.sha256(serialize_config(cfg).encode("utf-8")).digest()
