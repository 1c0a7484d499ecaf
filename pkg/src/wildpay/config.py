"""Run configuration: species roster, listeners, payout policy, eval knobs.

Configuration is a YAML file; every field has a default, so an empty (or
absent) file yields a fully working local setup.  ``digest()`` hashes the
resolved configuration so reports can state exactly what produced them.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, replace
from pathlib import Path

import yaml

from .ledger import DEFAULT_INITIAL_CREDIT, GUARDIAN_ACCOUNT, PayoutPolicy

#: The trial's twelve species, account ids and class labels alike.
DEFAULT_SPECIES: tuple[str, ...] = (
    "Acinonyx jubatus",
    "Canis mesomelas",
    "Connochaetes taurinus",
    "Crocuta crocuta",
    "Equus quagga",
    "Giraffa camelopardalis",
    "Hystrix cristata",
    "Loxodonta africana",
    "Panthera leo",
    "Papio sp",
    "Rhinocerotidae",
    "Tragelaphus oryx",
)

BLANK_LABEL = "Blank"

ENV_CONFIG = "WILDPAY_CONFIG"


class ConfigError(ValueError):
    """A configuration file that cannot be used."""


@dataclass(frozen=True)
class RunConfig:
    """Everything the pipeline and the evaluators need to run."""

    species: tuple[str, ...] = DEFAULT_SPECIES
    blank_label: str = BLANK_LABEL
    guardian_account: str = GUARDIAN_ACCOUNT
    initial_credit: int = DEFAULT_INITIAL_CREDIT

    journal_path: str = "data/journal.jsonl"
    snapshot_path: str = "data/snapshot.json"
    image_dir: str = "data/images"
    reports_dir: str = "reports"

    smtp_host: str = "127.0.0.1"
    smtp_port: int = 2525
    max_message_bytes: int = 10 * 1024 * 1024
    http_host: str = "127.0.0.1"
    http_port: int = 8080
    workers: int = 4

    backend_kind: str = "fixture"
    backend_trace: str = ""
    backend_url: str = ""
    backend_timeout: float = 10.0

    confidence_threshold: float = 0.5
    nms_threshold: float = 0.6

    unit_amount: int = 1
    granularity: str = "per_instance"
    insufficient_funds: str = "skip"

    folds: int = 10
    per_class: int = 29
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "species", tuple(self.species))
        if not self.species:
            raise ConfigError("species roster must be non-empty")
        if len(set(self.species)) != len(self.species):
            raise ConfigError("species roster contains duplicates")
        if self.blank_label in self.species:
            raise ConfigError(f"blank label {self.blank_label!r} collides with a species")
        if self.guardian_account in self.species:
            raise ConfigError(f"guardian account {self.guardian_account!r} collides with a species")
        if self.initial_credit < 0:
            raise ConfigError("initial_credit must be non-negative")
        if self.backend_kind not in ("fixture", "remote"):
            raise ConfigError(f"backend_kind must be fixture or remote, got {self.backend_kind!r}")
        if not (0.0 <= self.confidence_threshold <= 1.0):
            raise ConfigError("confidence_threshold must be in [0, 1]")
        if not (0.0 <= self.nms_threshold <= 1.0):
            raise ConfigError("nms_threshold must be in [0, 1]")
        # Delegate payout validation so CLI errors match library errors.
        self.payout_policy()

    def payout_policy(self) -> PayoutPolicy:
        return PayoutPolicy(
            unit_amount=self.unit_amount,
            granularity=self.granularity,
            insufficient_funds=self.insufficient_funds,
            guardian_account=self.guardian_account,
        )

    @property
    def class_labels(self) -> tuple[str, ...]:
        """Classification label set: the roster plus the blank class."""
        return tuple(sorted(self.species)) + (self.blank_label,)

    def to_dict(self) -> dict:
        return {
            "species": list(self.species),
            "blank_label": self.blank_label,
            "guardian_account": self.guardian_account,
            "initial_credit": self.initial_credit,
            "journal_path": self.journal_path,
            "snapshot_path": self.snapshot_path,
            "image_dir": self.image_dir,
            "reports_dir": self.reports_dir,
            "smtp": {
                "host": self.smtp_host,
                "port": self.smtp_port,
                "max_message_bytes": self.max_message_bytes,
            },
            "http": {"host": self.http_host, "port": self.http_port},
            "workers": self.workers,
            "backend": {
                "kind": self.backend_kind,
                "trace": self.backend_trace,
                "url": self.backend_url,
                "timeout": self.backend_timeout,
            },
            "detector": {
                "confidence_threshold": self.confidence_threshold,
                "nms_threshold": self.nms_threshold,
            },
            "payout": {
                "unit_amount": self.unit_amount,
                "granularity": self.granularity,
                "insufficient_funds": self.insufficient_funds,
            },
            "eval": {"folds": self.folds, "per_class": self.per_class, "seed": self.seed},
        }

    def digest(self) -> str:
        """Stable hash of the resolved configuration."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _section(data: dict, key: str) -> dict:
    value = data.get(key, {})
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"config section {key!r} must be a mapping")
    return value


def config_from_dict(data: dict) -> RunConfig:
    """Build a RunConfig from parsed YAML, applying defaults field by field."""
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be a mapping, got {type(data).__name__}")
    base = RunConfig()
    smtp = _section(data, "smtp")
    http = _section(data, "http")
    backend = _section(data, "backend")
    detector = _section(data, "detector")
    payout = _section(data, "payout")
    eval_cfg = _section(data, "eval")
    try:
        return RunConfig(
            species=tuple(data.get("species", base.species)),
            blank_label=str(data.get("blank_label", base.blank_label)),
            guardian_account=str(data.get("guardian_account", base.guardian_account)),
            initial_credit=int(data.get("initial_credit", base.initial_credit)),
            journal_path=str(data.get("journal_path", base.journal_path)),
            snapshot_path=str(data.get("snapshot_path", base.snapshot_path)),
            image_dir=str(data.get("image_dir", base.image_dir)),
            reports_dir=str(data.get("reports_dir", base.reports_dir)),
            smtp_host=str(smtp.get("host", base.smtp_host)),
            smtp_port=int(smtp.get("port", base.smtp_port)),
            max_message_bytes=int(smtp.get("max_message_bytes", base.max_message_bytes)),
            http_host=str(http.get("host", base.http_host)),
            http_port=int(http.get("port", base.http_port)),
            workers=int(data.get("workers", base.workers)),
            backend_kind=str(backend.get("kind", base.backend_kind)),
            backend_trace=str(backend.get("trace", base.backend_trace)),
            backend_url=str(backend.get("url", base.backend_url)),
            backend_timeout=float(backend.get("timeout", base.backend_timeout)),
            confidence_threshold=float(
                detector.get("confidence_threshold", base.confidence_threshold)
            ),
            nms_threshold=float(detector.get("nms_threshold", base.nms_threshold)),
            unit_amount=int(payout.get("unit_amount", base.unit_amount)),
            granularity=str(payout.get("granularity", base.granularity)),
            insufficient_funds=str(payout.get("insufficient_funds", base.insufficient_funds)),
            folds=int(eval_cfg.get("folds", base.folds)),
            per_class=int(eval_cfg.get("per_class", base.per_class)),
            seed=int(eval_cfg.get("seed", base.seed)),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path | None = None) -> RunConfig:
    """Load configuration from ``path``, the WILDPAY_CONFIG env var, or defaults."""
    if path is None:
        env = os.environ.get(ENV_CONFIG)
        path = env if env else None
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    with open(path, "r", encoding="utf-8") as handle:
        try:
            data = yaml.safe_load(handle)
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    if data is None:
        return RunConfig()
    return config_from_dict(data)


def with_overrides(config: RunConfig, **overrides) -> RunConfig:
    """Return a copy with some fields replaced (CLI flags beat file values)."""
    return replace(config, **{k: v for k, v in overrides.items() if v is not None})
