"""30-day readmission labels from encounter records.

For each patient, encounters are ordered by admission time and the interval
from each discharge to the next admission decides the label. Encounters that
have no later admission and were discharged too close to the end of the data
are excluded, since a readmission after the data cutoff could not be seen.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterable, Sequence

from .errors import LabelInputError

EXCLUDED = "excluded"
SECONDS_PER_DAY = 86400.0

ENCOUNTER_COLUMNS = ("patient_id", "encounter_id", "admit_time", "discharge_time", "note_id")
LABEL_COLUMNS = ENCOUNTER_COLUMNS + ("label", "readmission_interval_days", "warning")


@dataclass(frozen=True)
class EncounterRecord:
    patient_id: str
    encounter_id: str
    admit_time: float  # UTC seconds
    discharge_time: float
    note_id: str = ""

    def __post_init__(self):
        if self.discharge_time < self.admit_time:
            raise ValueError(f"encounter {self.encounter_id!r}: discharge before admission")


@dataclass(frozen=True)
class LabeledEncounter:
    record: EncounterRecord
    label: int | str  # 0, 1 or EXCLUDED
    readmission_interval: float | None = None  # days
    warning: str = ""

    @property
    def encounter_id(self):
        return self.record.encounter_id

    @property
    def excluded(self):
        return self.label == EXCLUDED


def generate_labels(
    encounters: Iterable[EncounterRecord],
    window_days: float = 30,
    buffer_days: float = 30,
) -> list[LabeledEncounter]:
    """Label every encounter as 1, 0 or EXCLUDED.

    An encounter with a later admission gets label 1 when the gap between its
    discharge and that admission is at most ``window_days``. An encounter with
    no later admission is labelled 0 if it was discharged at least
    ``buffer_days`` before the latest admission in the whole dataset, and is
    excluded otherwise. Overlapping stays (next admission before discharge)
    get interval 0 and a warning.

    Output is ordered by ``(patient_id, admit_time, encounter_id)`` regardless
    of input order.
    """
    records = list(encounters)
    seen = set()
    for r in records:
        key = (r.patient_id, r.encounter_id)
        if key in seen:
            raise ValueError(f"duplicate encounter {key}")
        seen.add(key)
    if not records:
        return []

    latest_admit = max(r.admit_time for r in records)
    window_s = window_days * SECONDS_PER_DAY
    buffer_s = buffer_days * SECONDS_PER_DAY

    by_patient: dict[str, list[EncounterRecord]] = {}
    for r in records:
        by_patient.setdefault(r.patient_id, []).append(r)

    out = []
    for pid in sorted(by_patient):
        visits = sorted(by_patient[pid], key=lambda r: (r.admit_time, r.discharge_time, r.encounter_id))
        for cur, nxt in zip(visits, visits[1:] + [None]):
            if nxt is None:
                if latest_admit - cur.discharge_time < buffer_s:
                    out.append(LabeledEncounter(cur, EXCLUDED))
                else:
                    out.append(LabeledEncounter(cur, 0))
                continue
            gap = nxt.admit_time - cur.discharge_time
            warning = ""
            if gap < 0:
                warning = f"overlaps encounter {nxt.encounter_id}"
                gap = 0.0
            label = 1 if gap <= window_s else 0
            out.append(LabeledEncounter(cur, label, gap / SECONDS_PER_DAY, warning))
    return out


# --------------------------------------------------------------------------
# tabular io

def parse_timestamp(text: str) -> float:
    """ISO-8601 to UTC seconds; naive timestamps are taken as UTC."""
    s = text.strip()
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def format_timestamp(seconds: float) -> str:
    dt = datetime.fromtimestamp(seconds, tz=timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


def read_encounters(fh) -> list[EncounterRecord]:
    """Parse a comma-separated encounter table with a header row."""
    reader = csv.DictReader(fh)
    if reader.fieldnames is None:
        return []
    missing = [c for c in ENCOUNTER_COLUMNS if c not in reader.fieldnames]
    if missing:
        raise LabelInputError(f"missing columns: {', '.join(missing)}", line=1)
    out = []
    for row in reader:
        line = reader.line_num
        try:
            admit = parse_timestamp(row["admit_time"])
            discharge = parse_timestamp(row["discharge_time"])
        except (ValueError, AttributeError) as exc:
            raise LabelInputError(f"bad timestamp ({exc})", line=line) from None
        try:
            out.append(EncounterRecord(row["patient_id"], row["encounter_id"], admit, discharge, row["note_id"]))
        except ValueError as exc:
            raise LabelInputError(str(exc), line=line) from None
    return out


def _format_interval(days: float | None) -> str:
    return "" if days is None else f"{days:.6f}"


def format_labels(labeled: Sequence[LabeledEncounter]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LABEL_COLUMNS)
    for le in labeled:
        r = le.record
        w.writerow([
            r.patient_id,
            r.encounter_id,
            format_timestamp(r.admit_time),
            format_timestamp(r.discharge_time),
            r.note_id,
            le.label,
            _format_interval(le.readmission_interval),
            le.warning,
        ])
    return buf.getvalue()
