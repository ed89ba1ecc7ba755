from __future__ import annotations

import re
from pathlib import Path
from typing import Any, Literal, Mapping, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from ghvit.errors import ConfigError

VariantName = Literal["vit4", "vit16", "hvit", "gcn_hvit_1", "gcn_hvit_2"]
DatasetName = Literal["mnist", "fashion_mnist", "quickdraw"]

# `#` opens a comment at line start or after whitespace, so `runs/#1` stays a value
_COMMENT = re.compile(r"(?:^|\s)#.*$")


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="GHVIT_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # Dataset root; each dataset lives in <data_dir>/<name>/
    data_dir: Path = Path("./data")
    out_dir: Path = Path("./runs")

    log_level: str = "INFO"
    progress: bool = False  # tqdm bars during training


settings = Settings()


class RunConfig(BaseModel):
    """Flat, fully-resolved description of one training run.

    Every field is a key of the run config file. Unknown keys are an error.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    variant: VariantName = "gcn_hvit_1"
    dataset: DatasetName = "mnist"
    data_dir: Optional[Path] = None

    embed_dim: int = Field(default=64, ge=1)
    layers_per_level: int = Field(default=4, ge=1)
    heads: int = Field(default=4, ge=1)

    batch_size: int = Field(default=128, ge=1)
    drop_last: bool = False
    seed: int = Field(default=0, ge=0, lt=2**64)
    epochs: int = Field(default=30, ge=0)

    learning_rate: float = Field(default=1e-3, gt=0)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    adam_eps: float = Field(default=1e-8, gt=0)

    # first-n subsets; 0 keeps the whole split
    train_limit: int = Field(default=0, ge=0)
    test_limit: int = Field(default=0, ge=0)

    out: Optional[Path] = None
    eval_split: Literal["train", "test"] = "test"

    def resolved(self) -> "RunConfig":
        """Fill data_dir and out from the process settings."""
        data_dir = self.data_dir if self.data_dir is not None else settings.data_dir
        out = self.out if self.out is not None else settings.out_dir / f"{self.variant}-{self.dataset}-s{self.seed}"
        return self.model_copy(update={"data_dir": data_dir, "out": out})

    def to_text(self) -> str:
        lines = []
        for key in sorted(type(self).model_fields):
            value = getattr(self, key)
            if value is None:
                continue
            lines.append(f"{key}={_format_value(value)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, *, source: str = "<config>") -> "RunConfig":
        return build_run_config(parse_key_values(text, source=source))


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_key_values(text: str, *, source: str = "<config>") -> dict[str, str]:
    """Parse flat `key = value` lines with full-line and trailing `#` comments."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _COMMENT.sub("", raw).strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}", details={"key": key})
        out[key] = value
    return out


def build_run_config(values: Mapping[str, Any], overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Validate file values merged with overrides (overrides win)."""
    merged: dict[str, Any] = dict(values)
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value
    try:
        return RunConfig(**merged)
    except ValidationError as e:
        problems = []
        for err in e.errors():
            key = ".".join(str(p) for p in err.get("loc", ())) or "<root>"
            if err.get("type") == "extra_forbidden":
                problems.append(f"unknown config key {key!r}")
            else:
                problems.append(f"bad value for {key!r}: {err.get('msg')}")
        raise ConfigError("; ".join(problems), details=problems) from e


def load_run_config(path: Optional[Path], overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    values: dict[str, str] = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e.strerror}", details={"path": str(path)}) from e
        values = parse_key_values(text, source=str(path))
    return build_run_config(values, overrides).resolved()
