"""Run configuration: defaults, TOML loading, and env interpolation.

Defaults mirror the standard watermark settings (entity/relation list sizes,
tuple count, texts per tuple, epochs, retrieval width, query budget).
Secrets (the owner key and the API key) may be given as "${ENV_NAME}" in the
config file and are resolved from the environment; nothing else is
interpolated.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ValidationError

_SECRET_FIELDS = ("key_hex", "api_key")


@dataclass
class RunConfig:
    kb_path: str = ""
    wm_kb_path: str = ""
    key_hex: str = ""
    e_size: int = 100
    r_size: int = 20
    tuple_count: int = 50
    p: float = 0.05
    n_wm: int = 5
    max_epochs: int = 10
    k: int = 1
    metric: str = "cosine"
    dim: int = 256
    n: int = 30
    alpha: float = 0.05
    p0: float | None = None
    template: int = 1
    seed: int = 0
    sample_size: int = 0
    mode: str = "concat"
    backend: str = "mock:"
    model: str = "gpt-3.5-turbo"
    api_key: str = ""

    def to_json(self) -> dict:
        """Config echo for report provenance; secrets reduced to presence."""
        obj = asdict(self)
        for secret in _SECRET_FIELDS:
            obj[secret] = bool(obj[secret])
        return obj

    def resolved_p0(self, observed_relations: int | None = None) -> float:
        """Explicit p0 if set; else 1 over the suspect domain's observed
        relation-vocabulary size when known, else 1/100."""
        if self.p0 is not None:
            return self.p0
        if observed_relations and observed_relations >= 2:
            return 1.0 / observed_relations
        return 0.01


def _interpolate(value: str) -> str:
    if value.startswith("${") and value.endswith("}"):
        name = value[2:-1]
        resolved = os.environ.get(name)
        if resolved is None:
            raise ValidationError(f"environment variable {name} is not set")
        return resolved
    return value


def load_config(path: str | None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from an optional TOML file plus explicit overrides."""
    values: dict = {}
    if path:
        with open(path, "rb") as fh:
            values.update(tomllib.load(fh))
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(RunConfig)}
    unknown = set(values) - known
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    for secret in _SECRET_FIELDS:
        if isinstance(values.get(secret), str):
            values[secret] = _interpolate(values[secret])
    return RunConfig(**values)
