"""Run configuration: one JSON file, environment overrides for comms, then CLI flags."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .retrieval import RetrievalConfig
from .safety import SafetyLimits, SsmParams
from .scenario_db import default_database_path
from .kinematics import DEFAULT_MODEL_PATH
from .sim import SCRIPTS_DIR, SimConfig


@dataclass(frozen=True)
class CommsConfig:
    host: str = "127.0.0.1"
    port: int = 8765
    stream_rate: float = 1.0
    staleness_timeout: float = 3.0
    slew_duration: float = 0.3
    latency: float = 0.0


ENV_OVERRIDES = {
    "GAINRAG_HOST": ("host", str),
    "GAINRAG_PORT": ("port", int),
    "GAINRAG_STREAM_RATE": ("stream_rate", float),
    "GAINRAG_STALENESS_TIMEOUT": ("staleness_timeout", float),
    "GAINRAG_LATENCY": ("latency", float),
}


@dataclass(frozen=True)
class RunConfig:
    db: Path = field(default_factory=default_database_path)
    model: Path = DEFAULT_MODEL_PATH
    scripts_dir: Path = SCRIPTS_DIR
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    safety: SafetyLimits = field(default_factory=SafetyLimits)
    ssm: SsmParams = field(default_factory=SsmParams)
    comms: CommsConfig = field(default_factory=CommsConfig)
    embedder: str = "hashing"
    embedder_url: str | None = None
    seed: int = 0

    def check_files(self) -> None:
        for name in ("db", "model"):
            p = getattr(self, name)
            if not Path(p).is_file():
                raise FileNotFoundError(f"{name} file not found: {p}")
        if not Path(self.scripts_dir).is_dir():
            raise FileNotFoundError(f"scripts directory not found: {self.scripts_dir}")

    def sim_config(self) -> SimConfig:
        c = self.comms
        return SimConfig(stream_rate=c.stream_rate, staleness_timeout=c.staleness_timeout,
                         slew_duration=c.slew_duration, base_latency=c.latency, seed=self.seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("db", "model", "scripts_dir"):
            d[k] = str(d[k])
        return d


def _section(cls, data: Mapping[str, Any] | None):
    if not data:
        return cls()
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**data)


def load_config(path: str | Path | None = None, env: Mapping[str, str] | None = None) -> RunConfig:
    """Defaults, overlaid by the JSON file (relative paths resolve against it), then env vars."""
    doc: dict[str, Any] = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        doc = json.loads(path.read_text(encoding="utf-8"))
        base = path.parent

    def resolve(key, default):
        if key not in doc:
            return default
        p = Path(doc[key])
        return p if p.is_absolute() else base / p

    cfg = RunConfig(
        db=resolve("db", default_database_path()),
        model=resolve("model", DEFAULT_MODEL_PATH),
        scripts_dir=resolve("scripts_dir", SCRIPTS_DIR),
        retrieval=_section(RetrievalConfig, doc.get("retrieval")),
        safety=_section(SafetyLimits, doc.get("safety")),
        ssm=_section(SsmParams, doc.get("ssm")),
        comms=_section(CommsConfig, doc.get("comms")),
        embedder=doc.get("embedder", "hashing"),
        embedder_url=doc.get("embedder_url"),
        seed=int(doc.get("seed", 0)),
    )
    env = os.environ if env is None else env
    overrides = {}
    for var, (key, conv) in ENV_OVERRIDES.items():
        if var in env:
            overrides[key] = conv(env[var])
    if overrides:
        cfg = replace(cfg, comms=replace(cfg.comms, **overrides))
    return cfg
