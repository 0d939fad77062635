"""Curated scenario database: CSV schema, record validation and category counts.

Each row pairs a scene's semantic labels with 14 stiffness gains, 14 damping
gains and a discrete nominal speed. The column layout is documented in
``data/SCHEMA.md``.
"""

from __future__ import annotations

import csv
import io
import math
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

N_JOINTS = 14
JOINTS_PER_ARM = 7

KP_RANGE = (10.0, 60.0)
KD_RANGE = (0.1, 2.0)

TASKS = ("pick", "handover", "other")
MAIN_OBJECTS = ("cube", "fruit", "other")
FRAGILITY = ("fragile", "non_fragile")
HUMAN_PRESENCE = ("none", "hand_visible")
# ordered slowest first; the index doubles as the wire velocity code
SPEED_LEVELS = ("slow", "mid", "normal")

ENUM_FIELDS = {
    "task_enum": TASKS,
    "main_object": MAIN_OBJECTS,
    "object_fragility": FRAGILITY,
    "human_presence": HUMAN_PRESENCE,
    "nominal_v": SPEED_LEVELS,
}

IDENTITY_COLUMNS = (
    "scenario_id",
    "task_enum",
    "main_object",
    "object_fragility",
    "human_presence",
    "nominal_v",
)


def joint_labels() -> list[str]:
    """``L0..L6, R0..R6`` in payload order."""
    return [f"L{i}" for i in range(JOINTS_PER_ARM)] + [f"R{i}" for i in range(JOINTS_PER_ARM)]


GAIN_COLUMNS = tuple(f"{j}_{g}" for j in joint_labels() for g in ("kp", "kd"))
SCHEMA_COLUMNS = IDENTITY_COLUMNS + GAIN_COLUMNS
DESCRIPTION_COLUMN = "description"
FILE_COLUMNS = SCHEMA_COLUMNS + (DESCRIPTION_COLUMN,)

assert len(SCHEMA_COLUMNS) == 34


class ScenarioDBError(Exception):
    """Base class for database loading problems."""


class SchemaError(ScenarioDBError):
    def __init__(self, message: str, column: str | None = None):
        super().__init__(message)
        self.column = column


class RowError(ScenarioDBError):
    def __init__(self, message: str, row_index: int, column: str | None = None):
        super().__init__(f"row {row_index}: {message}")
        self.row_index = row_index
        self.column = column


class ValidationError(ScenarioDBError):
    def __init__(self, findings: Sequence["Finding"], row_index: int | None = None):
        self.findings = list(findings)
        self.row_index = row_index
        where = f"row {row_index}: " if row_index is not None else ""
        super().__init__(where + "; ".join(str(f) for f in self.findings))


@dataclass(frozen=True)
class Finding:
    field: str
    value: object
    bound: str

    def __str__(self) -> str:
        return f"{self.field}={self.value!r} violates {self.bound}"


@dataclass(frozen=True)
class GainSet:
    kp: tuple[float, ...]
    kd: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "kp", tuple(float(v) for v in self.kp))
        object.__setattr__(self, "kd", tuple(float(v) for v in self.kd))


@dataclass(frozen=True)
class ScenarioRecord:
    scenario_id: str
    task_enum: str
    main_object: str
    object_fragility: str
    human_presence: str
    nominal_v: str
    gains: GainSet
    description: str = ""


@dataclass(frozen=True)
class ScenarioDatabase:
    records: tuple[ScenarioRecord, ...]
    source: str | None = None
    loaded_at: float = field(default_factory=time.time, compare=False)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i: int) -> ScenarioRecord:
        return self.records[i]

    def __iter__(self):
        return iter(self.records)

    def ids(self) -> list[str]:
        return [r.scenario_id for r in self.records]


def _check_gain_list(name: str, values: Sequence[float], lo: float, hi: float) -> list[Finding]:
    findings = []
    if len(values) != N_JOINTS:
        findings.append(Finding(name, len(values), f"length == {N_JOINTS}"))
    labels = joint_labels()
    for i, v in enumerate(values):
        label = f"{labels[i]}_{name}" if i < N_JOINTS else f"{name}[{i}]"
        if not math.isfinite(v):
            findings.append(Finding(label, v, "finite"))
        elif v < lo:
            findings.append(Finding(label, v, f">= {lo:g}"))
        elif v > hi:
            findings.append(Finding(label, v, f"<= {hi:g}"))
    return findings


def validate_record(record: ScenarioRecord) -> list[Finding]:
    """Return every invariant violation of ``record``; an empty list means valid."""
    findings: list[Finding] = []
    if not record.scenario_id:
        findings.append(Finding("scenario_id", record.scenario_id, "non-empty"))
    for name, allowed in ENUM_FIELDS.items():
        value = getattr(record, name)
        if value not in allowed:
            findings.append(Finding(name, value, "one of {" + ", ".join(allowed) + "}"))
    findings += _check_gain_list("kp", record.gains.kp, *KP_RANGE)
    findings += _check_gain_list("kd", record.gains.kd, *KD_RANGE)
    return findings


def validate_database(db: ScenarioDatabase) -> list[tuple[int, Finding]]:
    """Per-record findings plus database-level ones (duplicate ids)."""
    out = []
    seen: dict[str, int] = {}
    for i, rec in enumerate(db.records):
        out += [(i, f) for f in validate_record(rec)]
        if rec.scenario_id in seen:
            out.append((i, Finding("scenario_id", rec.scenario_id, f"unique (duplicate of row {seen[rec.scenario_id]})")))
        else:
            seen[rec.scenario_id] = i
    return out


def _parse_row(row: dict[str, str], index: int) -> ScenarioRecord:
    values = {}
    for col in GAIN_COLUMNS:
        raw = row[col]
        try:
            values[col] = float(raw)
        except (TypeError, ValueError):
            raise RowError(f"cannot parse {col}={raw!r} as a number", index, col) from None
    labels = joint_labels()
    gains = GainSet(
        kp=[values[f"{j}_kp"] for j in labels],
        kd=[values[f"{j}_kd"] for j in labels],
    )
    return ScenarioRecord(
        scenario_id=row["scenario_id"].strip(),
        task_enum=row["task_enum"].strip(),
        main_object=row["main_object"].strip(),
        object_fragility=row["object_fragility"].strip(),
        human_presence=row["human_presence"].strip(),
        nominal_v=row["nominal_v"].strip(),
        gains=gains,
        description=row.get(DESCRIPTION_COLUMN, "") or "",
    )


def _check_header(header: Sequence[str] | None) -> None:
    if header is None:
        raise SchemaError("missing header row")
    header = [h.strip() for h in header]
    for col in FILE_COLUMNS:
        if col not in header:
            raise SchemaError(f"missing column {col!r}", col)
    for col in header:
        if col not in FILE_COLUMNS:
            raise SchemaError(f"unexpected column {col!r}", col)
    if len(header) != len(set(header)):
        dup = next(c for c in header if header.count(c) > 1)
        raise SchemaError(f"duplicate column {dup!r}", dup)
    if list(header) != list(FILE_COLUMNS):
        first = next(a for a, b in zip(header, FILE_COLUMNS) if a != b)
        raise SchemaError(f"column {first!r} out of order", first)


def parse_database(text: str, source: str | None = None, strict: bool = True) -> ScenarioDatabase:
    """Parse CSV text. With ``strict=False`` range and enum violations are kept for
    ``validate_database`` to report instead of raising on the first one."""
    reader = csv.DictReader(io.StringIO(text))
    _check_header(reader.fieldnames)
    records = []
    seen: dict[str, int] = {}
    for index, row in enumerate(reader):
        if None in row:
            raise RowError("too many fields", index)
        if any(row[c] is None for c in FILE_COLUMNS):
            raise RowError("too few fields", index)
        rec = _parse_row(row, index)
        findings = validate_record(rec)
        if rec.scenario_id in seen:
            findings.append(Finding("scenario_id", rec.scenario_id, f"unique (duplicate of row {seen[rec.scenario_id]})"))
        if findings and strict:
            raise ValidationError(findings, index)
        seen[rec.scenario_id] = index
        records.append(rec)
    return ScenarioDatabase(records=tuple(records), source=source)


def load_database(path: str | Path, strict: bool = True) -> ScenarioDatabase:
    """Load and validate a scenario CSV. Raises on the first bad row unless ``strict`` is off."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    return parse_database(text, source=str(path), strict=strict)


def serialize_database(db: ScenarioDatabase | Iterable[ScenarioRecord]) -> str:
    records = db.records if isinstance(db, ScenarioDatabase) else list(db)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(FILE_COLUMNS)
    for rec in records:
        row = [rec.scenario_id, rec.task_enum, rec.main_object, rec.object_fragility,
               rec.human_presence, rec.nominal_v]
        for kp, kd in zip(rec.gains.kp, rec.gains.kd):
            row += [repr(kp), repr(kd)]
        row.append(rec.description)
        writer.writerow(row)
    return buf.getvalue()


def save_database(db: ScenarioDatabase | Iterable[ScenarioRecord], path: str | Path) -> None:
    Path(path).write_text(serialize_database(db), encoding="utf-8")


def category_counts(db: ScenarioDatabase) -> dict[str, dict[str, int]]:
    """Counts per value for each semantic field; every allowed value is present, zeros included."""
    out = {}
    for name, allowed in ENUM_FIELDS.items():
        c = Counter(getattr(r, name) for r in db.records)
        out[name] = {v: c.get(v, 0) for v in allowed}
        # keep out-of-enum values visible rather than silently dropping them
        for v, n in c.items():
            if v not in out[name]:
                out[name][v] = n
    return out


def speed_code(level: str) -> int:
    return SPEED_LEVELS.index(level)


def default_database_path() -> Path:
    return Path(__file__).parent / "data" / "scenarios.csv"


def load_default_database() -> ScenarioDatabase:
    return load_database(default_database_path())
