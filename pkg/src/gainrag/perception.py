"""Fixed-schema scene descriptors, enum normalization and VLM client stand-ins."""

from __future__ import annotations

import json
import logging
import math
import re
import urllib.error
import urllib.request
from dataclasses import asdict, dataclass, fields, replace
from functools import lru_cache
from pathlib import Path
from typing import Any, Mapping

log = logging.getLogger(__name__)

DATA_DIR = Path(__file__).parent / "data"

DESCRIPTOR_KEYS = (
    "task_type",
    "main_object",
    "object_fragility",
    "human_presence",
    "obstacle_count",
    "obstacle_type",
    "workspace_condition",
    "arm_posture",
    "object_location",
    "spacing",
    "complexity",
    "confidence",
)
OBJECT_LOCATIONS = ("left", "center", "right")


class DescriptorError(ValueError):
    """Missing key or out-of-range value in a structured perception message."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class VLMUnavailable(RuntimeError):
    """The perception backend could not produce a descriptor."""


@dataclass(frozen=True)
class SceneDescriptor:
    task_type: str
    main_object: str
    object_fragility: str
    human_presence: str
    obstacle_count: int
    obstacle_type: str
    workspace_condition: str
    arm_posture: str
    object_location: str
    spacing: str
    complexity: str
    confidence: float

    def __post_init__(self):
        if isinstance(self.obstacle_count, bool) or not isinstance(self.obstacle_count, int):
            raise DescriptorError(f"obstacle_count must be an integer, got {self.obstacle_count!r}", "obstacle_count")
        if self.obstacle_count < 0:
            raise DescriptorError("obstacle_count must be non-negative", "obstacle_count")
        if self.object_location not in OBJECT_LOCATIONS:
            raise DescriptorError(f"object_location must be one of {OBJECT_LOCATIONS}, got {self.object_location!r}",
                                  "object_location")
        c = float(self.confidence)
        if not (math.isfinite(c) and 0.0 <= c <= 1.0):
            raise DescriptorError(f"confidence {self.confidence!r} outside [0, 1]", "confidence")
        object.__setattr__(self, "confidence", c)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class NormalizedDescriptor:
    """Descriptor whose four semantic fields hold database enum values."""

    task_enum: str
    main_object: str
    object_fragility: str
    human_presence: str
    obstacle_count: int
    obstacle_type: str
    workspace_condition: str
    arm_posture: str
    object_location: str
    spacing: str
    complexity: str
    confidence: float

    def to_descriptor(self) -> SceneDescriptor:
        d = asdict(self)
        d["task_type"] = d.pop("task_enum")
        return SceneDescriptor(**d)


def parse_descriptor(text: str | bytes | Mapping[str, Any]) -> SceneDescriptor:
    """Parse a JSON object (or an already-decoded mapping) into a descriptor."""
    if isinstance(text, Mapping):
        doc = dict(text)
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DescriptorError(f"not a JSON document: {exc}") from None
    if not isinstance(doc, dict):
        raise DescriptorError("descriptor must be a JSON object")
    for key in DESCRIPTOR_KEYS:
        if key not in doc:
            raise DescriptorError(f"missing key {key!r}", key)
    extra = sorted(set(doc) - set(DESCRIPTOR_KEYS))
    if extra:
        log.warning("ignoring unknown descriptor keys: %s", ", ".join(extra))
    values = {k: doc[k] for k in DESCRIPTOR_KEYS}
    for key in DESCRIPTOR_KEYS:
        if key in ("obstacle_count", "confidence"):
            continue
        if not isinstance(values[key], str):
            raise DescriptorError(f"{key} must be a string", key)
    count = values["obstacle_count"]
    if isinstance(count, float) and count.is_integer():
        values["obstacle_count"] = int(count)
    conf = values["confidence"]
    if isinstance(conf, bool) or not isinstance(conf, (int, float)):
        raise DescriptorError("confidence must be a number", "confidence")
    return SceneDescriptor(**values)


@lru_cache(maxsize=None)
def _load_json(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def normalization_table(path: str | Path | None = None) -> dict:
    return _load_json(str(path or DATA_DIR / "normalization.json"))


def _slug(value: str) -> str:
    return re.sub(r"[\s\-]+", "_", value.strip().lower())


def _words(value: str) -> list[str]:
    return re.findall(r"[a-z0-9]+", value.lower())


def _has_keyword(words: list[str], keywords) -> bool:
    # multi-word keywords match as contiguous phrases
    joined = " " + " ".join(words) + " "
    return any((" " + k + " ") in joined for k in keywords)


def normalize_field(field_name: str, raw: str, table: Mapping | None = None) -> str:
    """Map one raw perception string to an enum value.

    Lookup order: exact slug match, negation words, keywords, default.
    """
    rules = (table or normalization_table())[field_name]
    slug = _slug(raw)
    if slug in rules["values"]:
        return rules["values"][slug]
    words = _words(raw)
    negated = rules.get("negated")
    if negated and _has_keyword(words, rules.get("negations", ())):
        return negated
    for target, keywords in rules.get("keywords", {}).items():
        if _has_keyword(words, keywords):
            return target
    return rules["default"]


def normalize(d: SceneDescriptor | NormalizedDescriptor, table: Mapping | None = None) -> NormalizedDescriptor:
    """Total, deterministic mapping onto database enums; residual fields pass through."""
    table = table or normalization_table()
    task = d.task_enum if isinstance(d, NormalizedDescriptor) else d.task_type
    return NormalizedDescriptor(
        task_enum=normalize_field("task_enum", task, table),
        main_object=normalize_field("main_object", d.main_object, table),
        object_fragility=normalize_field("object_fragility", d.object_fragility, table),
        human_presence=normalize_field("human_presence", d.human_presence, table),
        obstacle_count=d.obstacle_count,
        obstacle_type=d.obstacle_type,
        workspace_condition=d.workspace_condition,
        arm_posture=d.arm_posture,
        object_location=d.object_location,
        spacing=d.spacing,
        complexity=d.complexity,
        confidence=d.confidence,
    )


QUERY_KEYS = ("task_enum",) + DESCRIPTOR_KEYS[1:]


def _escape(value: str) -> str:
    return value.replace("\\", "\\\\").replace(";", "\\;").replace("=", "\\=")


def to_query_text(n: NormalizedDescriptor) -> str:
    """Canonical ``key=value; ...`` text in schema order.

    Separators inside values are backslash-escaped so distinct descriptors
    never collide.
    """
    parts = []
    for key in QUERY_KEYS:
        value = getattr(n, key)
        if key == "confidence":
            token = repr(float(value))
        elif key == "obstacle_count":
            token = str(int(value))
        else:
            token = _escape(value)
        parts.append(f"{key}={token}")
    return "; ".join(parts)


class VLMClient:
    """Interface: turn a camera frame (or a named scene stub) into a descriptor."""

    def describe(self, frame: bytes | str) -> SceneDescriptor:
        raise NotImplementedError


class MockVLMClient(VLMClient):
    """Lookup-table client keyed by scene stub name."""

    def __init__(self, table: Mapping[str, Mapping[str, Any]] | None = None, path: str | Path | None = None):
        if table is None:
            table = _load_json(str(path or DATA_DIR / "mock_scenes.json"))["scenes"]
        self._scenes = {name: parse_descriptor(doc) for name, doc in table.items()}

    @property
    def stubs(self) -> list[str]:
        return sorted(self._scenes)

    def describe(self, frame: bytes | str) -> SceneDescriptor:
        if isinstance(frame, bytes):
            raise VLMUnavailable("mock client accepts scene stub names only")
        try:
            return self._scenes[frame]
        except KeyError:
            raise VLMUnavailable(f"unknown scene stub {frame!r}") from None


class HTTPVLMClient(VLMClient):
    """POSTs image bytes to a remote VLM endpoint that returns the descriptor JSON.

    Requests are serialized by the caller; one client per stream.
    """

    def __init__(self, url: str, timeout: float = 5.0):
        self.url = url
        self.timeout = timeout

    def describe(self, frame: bytes | str) -> SceneDescriptor:
        data = frame.encode() if isinstance(frame, str) else frame
        req = urllib.request.Request(self.url, data=data, headers={"Content-Type": "application/octet-stream"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                body = resp.read()
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            raise VLMUnavailable(f"VLM endpoint {self.url} unreachable: {exc}") from exc
        return parse_descriptor(body)


def descriptor_with(d: SceneDescriptor, **changes) -> SceneDescriptor:
    return replace(d, **changes)


def descriptor_fields() -> tuple[str, ...]:
    return tuple(f.name for f in fields(SceneDescriptor))
