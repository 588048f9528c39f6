"""Event ingestion: CAMEO-coded records to model-ready tuples.

Raw rows carry an action category (1-20), CAMEO actor codes for subject and
target, casualty annotations, a location and a date.  This module maps actor
codes into four coarse classes, rescales the expert action score into a
conflict predicate on (0, 1), sums casualties into a quantifier, and tags each
tuple with its location and month.
"""

from __future__ import annotations

import csv
import io
import logging
from collections import Counter
from dataclasses import dataclass, field
from datetime import date, datetime
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

ACTOR_CLASSES = ("civilian", "military", "government", "political")

SITE_SUBJECT = "subject"
SITE_PREDICATE = "predicate"
SITE_QUANTIFIER = "quantifier"
SITE_OBJECT = "object"
ALL_SITES = (SITE_SUBJECT, SITE_PREDICATE, SITE_QUANTIFIER, SITE_OBJECT)

# Expert conflict-cooperation score per top-level action category. The most
# conflictual categories (fight, mass violence) sit at -10.0, the most
# cooperative (provide aid) at +7.0.
GOLDSTEIN_SCALE = {
    1: 0.0,    # public statement
    2: 3.0,    # appeal
    3: 4.0,    # intent cooperate
    4: 1.0,    # consult
    5: 3.5,    # diplomatic cooperation
    6: 6.0,    # material cooperation
    7: 7.0,    # provide aid
    8: 5.0,    # yield
    9: -2.0,   # investigate
    10: -5.0,  # demand
    11: -2.0,  # disapprove
    12: -4.0,  # reject
    13: -6.0,  # threaten
    14: -6.5,  # protest
    15: -7.2,  # force posture
    16: -4.0,  # reduce relations
    17: -7.0,  # coerce
    18: -9.0,  # assault
    19: -10.0, # fight
    20: -10.0, # mass violence
}

# Generic CAMEO actor types grouped into four classes.
ACTOR_CLASS_MAP = {
    "REB": "military",    # rebels
    "MIL": "military",    # military
    "GOV": "government",  # government
    "ETH": "civilian",    # ethnic
    "REL": "civilian",    # religious
    "COP": "military",    # police forces
    "JUD": "political",   # judiciary
    "OPP": "political",   # political opposition
    "LLY": "government",  # regime loyalists
    "ACT": "political",   # activists
    "NON": "military",    # non-aligned third party
    "SPY": "military",    # state intelligence
    "UAF": "military",    # unidentified armed forces
    "UNS": "civilian",    # unidentified unarmed non-state actors
    "NGO": "political",   # non-governmental organisation
    "BUS": "civilian",    # business
    "CVL": "civilian",    # civilian group
    "IND": "civilian",    # civilian individual
    "EDU": "civilian",    # educators
    "STU": "civilian",    # students
    "YTH": "civilian",    # youth
    "ELI": "civilian",    # elites
    "LAB": "civilian",    # labour
    "LEG": "political",   # legislature
    "PTY": "political",   # political party
    "MED": "civilian",    # media
    "REF": "civilian",    # refugees
    "IGO": "political",   # inter-governmental
    "NGM": "political",   # non-governmental movement
    "MNC": "civilian",    # multinational cooperation
    "INT": "political",   # international actors
    "TOP": "political",   # top officials
    "MID": "political",   # mid-lower level officials
    "HAR": "political",   # hardliners
    "MOD": "political",   # moderates
}

PREDICATE_CLAMP = 1e-3

# Default column names follow the NAVCO 3.0 release; everything is
# overridable through the column map passed to load_raw.
DEFAULT_COLUMNS = {
    "action": "verb10",
    "actor": "actor3",
    "actor_alt": "actor6",
    "target": "target3",
    "target_alt": "target6",
    "fatalities": "fatalities",
    "wounded": "wounded",
    "location": "location",
    "date": "date",
}

_DATE_FORMATS = ("%Y-%m-%d", "%Y/%m/%d", "%m/%d/%Y", "%d.%m.%Y")


class DataError(Exception):
    """Raised for unusable inputs: bad schemas, unmappable codes, bad domains."""


class UnmappableActorError(DataError):
    """Actor code has no entry in the actor-class table."""


@dataclass(frozen=True)
class RawEventRecord:
    """One coded event row before any model-specific mapping."""

    action_code: int
    actor_code: str
    target_code: str
    fatalities: int
    wounded: int
    location: str
    date: date


@dataclass(frozen=True)
class EventTuple:
    """Model observation: (subject class, predicate, quantifier, object class).

    ``subject`` and ``object`` index into ACTOR_CLASSES, ``predicate`` lies
    strictly inside (0, 1) with 1 most conflictual, ``quantifier`` is the
    non-negative casualty count. ``location`` and ``month`` tag the event for
    the time-series tasks; ``month`` is "YYYY-MM".
    """

    subject: int
    predicate: float
    quantifier: int
    object: int
    location: str = "unknown"
    month: str = "0001-01"


def month_index(label: str) -> int:
    """Map "YYYY-MM" to a contiguous integer month index."""
    year, _, mon = label.partition("-")
    return int(year) * 12 + int(mon) - 1


def month_label(index: int) -> str:
    return f"{index // 12:04d}-{index % 12 + 1:02d}"


def map_actor(code: str, table: dict[str, str] | None = None) -> int:
    """Resolve a CAMEO actor code to one of the four actor classes.

    Tries the leading 3-letter type first, then the remainder of a 6-letter
    form (country-prefixed codes keep the type in the trailing triple).
    """
    table = ACTOR_CLASS_MAP if table is None else table
    code = (code or "").strip().upper()
    if not code:
        raise UnmappableActorError("empty actor code")
    candidates = [code[:3]]
    if len(code) >= 6:
        candidates.append(code[3:6])
    for cand in candidates:
        if cand in table:
            return ACTOR_CLASSES.index(table[cand])
    raise UnmappableActorError(f"unknown actor code {code!r}")


def goldstein_to_predicate(action_code: int, table: dict[int, float] | None = None) -> float:
    """Rescale an action's expert score to (0, 1), 1 most conflictual.

    The score is min-max rescaled over the 20-entry table and inverted, then
    clamped away from the boundary so Beta densities stay finite.
    """
    table = GOLDSTEIN_SCALE if table is None else table
    if action_code not in table:
        raise DataError(f"action code {action_code} has no scale entry")
    values = table.values()
    g_min, g_max = min(values), max(values)
    p = 1.0 - (table[action_code] - g_min) / (g_max - g_min)
    return float(min(max(p, PREDICATE_CLAMP), 1.0 - PREDICATE_CLAMP))


def make_tuple(
    record: RawEventRecord,
    actor_table: dict[str, str] | None = None,
    goldstein_table: dict[int, float] | None = None,
) -> EventTuple:
    """Build an EventTuple from a raw record; propagates mapping errors."""
    return EventTuple(
        subject=map_actor(record.actor_code, actor_table),
        predicate=goldstein_to_predicate(record.action_code, goldstein_table),
        quantifier=int(record.fatalities) + int(record.wounded),
        object=map_actor(record.target_code, actor_table),
        location=record.location,
        month=f"{record.date.year:04d}-{record.date.month:02d}",
    )


@dataclass
class LoadReport:
    """Row accounting for one ingestion run."""

    n_rows: int = 0
    n_loaded: int = 0
    skipped: Counter = field(default_factory=Counter)
    n_missing_casualties: int = 0

    def as_dict(self) -> dict:
        return {
            "rows": self.n_rows,
            "loaded": self.n_loaded,
            "skipped": dict(self.skipped),
            "missing_casualties": self.n_missing_casualties,
        }


def _parse_date(text: str) -> date:
    text = text.strip()
    for fmt in _DATE_FORMATS:
        try:
            return datetime.strptime(text, fmt).date()
        except ValueError:
            continue
    raise ValueError(f"unparsable date {text!r}")


def _parse_count(text: str, report: LoadReport) -> int:
    """Missing casualty annotations count as zero (logged)."""
    text = (text or "").strip()
    if not text or text.lower() in ("na", "nan", "-99", "."):
        report.n_missing_casualties += 1
        return 0
    value = int(float(text))
    if value < 0:
        raise ValueError(f"negative count {text!r}")
    return value


def load_raw(
    source: io.TextIOBase | io.BufferedIOBase | bytes | str,
    column_map: dict[str, str] | None = None,
) -> tuple[list[RawEventRecord], LoadReport]:
    """Read raw event rows from a UTF-8 CSV with a header row.

    Unparsable rows are skipped and tallied by reason; a missing mapped
    column is a fatal schema error.
    """
    columns = dict(DEFAULT_COLUMNS)
    if column_map:
        columns.update(column_map)

    if isinstance(source, bytes):
        source = io.StringIO(source.decode("utf-8"))
    elif isinstance(source, str):
        source = io.StringIO(source)
    elif isinstance(source, io.BufferedIOBase) or (
        hasattr(source, "read") and isinstance(source.read(0), bytes)
    ):
        source = io.TextIOWrapper(source, encoding="utf-8")

    reader = csv.DictReader(source)
    if reader.fieldnames is None:
        raise DataError("empty CSV: no header row")
    header = set(reader.fieldnames)
    required = ["action", "fatalities", "wounded", "location", "date"]
    for key in required:
        if columns[key] not in header:
            raise DataError(f"missing mapped column {columns[key]!r} (for {key})")
    if columns["actor"] not in header and columns["actor_alt"] not in header:
        raise DataError(f"missing actor column {columns['actor']!r}")
    if columns["target"] not in header and columns["target_alt"] not in header:
        raise DataError(f"missing target column {columns['target']!r}")

    def pick_code(row: dict, key: str) -> str:
        primary = (row.get(columns[key]) or "").strip()
        if primary:
            return primary
        return (row.get(columns[key + "_alt"]) or "").strip()

    report = LoadReport()
    records: list[RawEventRecord] = []
    for row in reader:
        report.n_rows += 1
        try:
            action = int(float(row[columns["action"]]))
        except (TypeError, ValueError):
            report.skipped["bad action code"] += 1
            continue
        if action not in GOLDSTEIN_SCALE:
            # the extra unscored category (and anything else off-table)
            report.skipped["unscored category"] += 1
            continue
        actor, target = pick_code(row, "actor"), pick_code(row, "target")
        try:
            map_actor(actor)
            map_actor(target)
        except UnmappableActorError:
            report.skipped["unmappable actor"] += 1
            continue
        try:
            fatalities = _parse_count(row[columns["fatalities"]], report)
            wounded = _parse_count(row[columns["wounded"]], report)
            when = _parse_date(row[columns["date"]])
        except ValueError:
            report.skipped["unparsable row"] += 1
            continue
        records.append(
            RawEventRecord(
                action_code=action,
                actor_code=actor,
                target_code=target,
                fatalities=fatalities,
                wounded=wounded,
                location=(row.get(columns["location"]) or "unknown").strip(),
                date=when,
            )
        )
    report.n_loaded = len(records)
    if report.n_missing_casualties:
        logger.info("treated %d missing casualty cells as zero", report.n_missing_casualties)
    return records, report


def split(
    tuples: Sequence[EventTuple], train_fraction: float, seed: int
) -> tuple[list[EventTuple], list[EventTuple]]:
    """Deterministic disjoint train/held-out split by shuffled indices."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    n = len(tuples)
    if n == 0:
        raise DataError("cannot split an empty tuple sequence")
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(n * train_fraction))
    train_idx = set(order[:n_train].tolist())
    train = [tuples[i] for i in range(n) if i in train_idx]
    heldout = [tuples[i] for i in range(n) if i not in train_idx]
    return train, heldout


class EventArrays:
    """Column-oriented view of a tuple sequence for the numeric core."""

    def __init__(self, subject, predicate, quantifier, object, location=None, month=None):
        self.subject = np.asarray(subject, dtype=np.int64)
        self.predicate = np.asarray(predicate, dtype=np.float64)
        self.quantifier = np.asarray(quantifier, dtype=np.int64)
        self.object = np.asarray(object, dtype=np.int64)
        n = len(self.subject)
        self.location = (
            np.asarray(location, dtype="O")
            if location is not None
            else np.asarray(["unknown"] * n, dtype="O")
        )
        self.month = (
            np.asarray(month, dtype=np.int64)
            if month is not None
            else np.zeros(n, dtype=np.int64)
        )

    def __len__(self) -> int:
        return len(self.subject)

    @classmethod
    def from_tuples(cls, tuples: Iterable[EventTuple]) -> "EventArrays":
        tuples = list(tuples)
        return cls(
            subject=[t.subject for t in tuples],
            predicate=[t.predicate for t in tuples],
            quantifier=[t.quantifier for t in tuples],
            object=[t.object for t in tuples],
            location=[t.location for t in tuples],
            month=[month_index(t.month) for t in tuples],
        )

    def to_tuples(self) -> list[EventTuple]:
        return [
            EventTuple(
                subject=int(self.subject[i]),
                predicate=float(self.predicate[i]),
                quantifier=int(self.quantifier[i]),
                object=int(self.object[i]),
                location=str(self.location[i]),
                month=month_label(int(self.month[i])),
            )
            for i in range(len(self))
        ]

    def subset(self, mask: np.ndarray) -> "EventArrays":
        return EventArrays(
            self.subject[mask],
            self.predicate[mask],
            self.quantifier[mask],
            self.object[mask],
            self.location[mask],
            self.month[mask],
        )

    def validate(self, n_subject: int = 4, n_object: int = 4) -> None:
        """Domain checks; errors name the first offending event index."""
        checks = [
            ((self.subject < 0) | (self.subject >= n_subject), "subject class out of range"),
            ((self.predicate <= 0.0) | (self.predicate >= 1.0), "predicate outside (0, 1)"),
            (self.quantifier < 0, "negative quantifier"),
            ((self.object < 0) | (self.object >= n_object), "object class out of range"),
        ]
        for bad, reason in checks:
            if bad.any():
                raise DataError(f"event {int(np.argmax(bad))}: {reason}")


def as_event_arrays(data) -> EventArrays:
    """Coerce tuples or EventArrays to validated EventArrays."""
    arrays = data if isinstance(data, EventArrays) else EventArrays.from_tuples(data)
    arrays.validate()
    return arrays


TUPLE_CSV_FIELDS = ("subject", "predicate", "quantifier", "object", "location", "month")


def write_tuples_csv(path, tuples: Sequence[EventTuple], extra: dict | None = None) -> None:
    """Dump tuples to the canonical CSV; extra columns (e.g. labels) optional."""
    extra = extra or {}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(TUPLE_CSV_FIELDS) + list(extra))
        for i, t in enumerate(tuples):
            row = [
                ACTOR_CLASSES[t.subject],
                f"{t.predicate:.10g}",
                t.quantifier,
                ACTOR_CLASSES[t.object],
                t.location,
                t.month,
            ]
            row += [extra[k][i] for k in extra]
            writer.writerow(row)


def read_tuples_csv(path) -> list[EventTuple]:
    """Read the canonical tuple CSV; ignores comment lines and extra columns."""
    tuples = []
    with open(path, newline="", encoding="utf-8") as fh:
        lines = (line for line in fh if not line.startswith("#"))
        reader = csv.DictReader(lines)
        for i, row in enumerate(reader):
            try:
                tuples.append(
                    EventTuple(
                        subject=ACTOR_CLASSES.index(row["subject"]),
                        predicate=float(row["predicate"]),
                        quantifier=int(row["quantifier"]),
                        object=ACTOR_CLASSES.index(row["object"]),
                        location=row.get("location", "unknown"),
                        month=row.get("month", "0001-01"),
                    )
                )
            except (KeyError, ValueError) as exc:
                raise DataError(f"tuple CSV row {i}: {exc}") from exc
    return tuples


def load_actor_table(path) -> dict[str, str]:
    """Read an actor-class override table from JSON ({code: class})."""
    import json

    with open(path, encoding="utf-8") as fh:
        table = json.load(fh)
    for code, cls in table.items():
        if cls not in ACTOR_CLASSES:
            raise DataError(f"unknown actor class {cls!r} for code {code!r}")
    return {code.upper(): cls for code, cls in table.items()}


def load_goldstein_table(path) -> dict[int, float]:
    """Read a scale override table from JSON ({action code: value})."""
    import json

    with open(path, encoding="utf-8") as fh:
        table = json.load(fh)
    return {int(code): float(value) for code, value in table.items()}
