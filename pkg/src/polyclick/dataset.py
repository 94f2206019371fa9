"""Click-log ingestion, per-campaign labeling, and train/calibration splits.

The click space is partitioned: a campaign's own clicks are its positives
and every other campaign's clicks in the same window are its negatives.
"""

from __future__ import annotations

import csv
import io
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator

from .model_core import Impression, normalize_domain, normalize_zip

REQUIRED_FIELDS = (
    "exchange", "hour", "day", "ad_format", "ad_size",
    "domain", "zip", "campaign", "clicked", "ts",
)


class EmptyInputError(Exception):
    """Source yielded no usable click records."""


class SchemaMismatchError(Exception):
    def __init__(self, message: str, line: int):
        super().__init__(f"{message} (line {line})")
        self.line = line


class NoPositivesError(Exception):
    pass


class NoNegativesError(Exception):
    pass


class TooSmallError(Exception):
    """Set cannot be split while keeping a positive and a negative on each side."""


@dataclass(frozen=True)
class ClickPool:
    """All clicked impressions in a collection window."""

    clicks: tuple[Impression, ...]
    campaigns: frozenset[str]

    def __post_init__(self) -> None:
        for imp in self.clicks:
            if not imp.clicked:
                raise ValueError("ClickPool holds clicked impressions only")

    @classmethod
    def from_impressions(cls, clicks: Iterable[Impression]) -> "ClickPool":
        clicks = tuple(clicks)
        return cls(clicks=clicks, campaigns=frozenset(i.campaign for i in clicks))

    @property
    def window(self) -> tuple[int, int]:
        ts = [i.timestamp for i in self.clicks]
        return (min(ts), max(ts))


@dataclass(frozen=True)
class LabeledSet:
    """Rows labeled 1 for the target campaign's clicks, 0 for everyone else's."""

    campaign: str
    rows: tuple[tuple[Impression, int], ...]

    def __post_init__(self) -> None:
        n_pos = sum(label for _, label in self.rows)
        if n_pos == 0:
            raise NoPositivesError(f"no positives for campaign {self.campaign!r}")
        if n_pos == len(self.rows):
            raise NoNegativesError(f"no negatives for campaign {self.campaign!r}")
        for imp, label in self.rows:
            if label != int(imp.campaign == self.campaign):
                raise ValueError("label inconsistent with campaign field")

    @property
    def n_positive(self) -> int:
        return sum(label for _, label in self.rows)

    @property
    def n_negative(self) -> int:
        return len(self.rows) - self.n_positive


@dataclass(frozen=True)
class Split:
    training: LabeledSet
    calibration: LabeledSet
    method: str  # "time" | "random"
    seed: int | None = None


@dataclass(frozen=True)
class IngestReport:
    total_records: int
    ingested: int
    skipped: int
    non_clicks: int
    skip_reasons: tuple[tuple[str, int], ...]

    def to_json(self) -> str:
        doc = {
            "total_records": self.total_records,
            "ingested": self.ingested,
            "skipped": self.skipped,
            "non_clicks": self.non_clicks,
            "skip_reasons": dict(self.skip_reasons),
        }
        return json.dumps(doc, ensure_ascii=False, indent=2) + "\n"


@dataclass(frozen=True)
class IngestResult:
    pool: ClickPool
    report: IngestReport


def _coerce_record(rec: dict) -> Impression:
    return Impression(
        exchange=str(rec["exchange"]),
        hour=int(rec["hour"]),
        day=int(rec["day"]),
        ad_format=str(rec["ad_format"]),
        ad_size=str(rec["ad_size"]),
        domain=normalize_domain(str(rec["domain"])),
        zip=normalize_zip(str(rec["zip"])),
        campaign=str(rec["campaign"]),
        clicked=_coerce_bool(rec["clicked"]),
        timestamp=int(rec["ts"]),
    )


def _coerce_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    if isinstance(v, (int, float)) and v in (0, 1):
        return bool(v)
    if isinstance(v, str) and v.lower() in ("true", "false", "0", "1"):
        return v.lower() in ("true", "1")
    raise ValueError(f"not a boolean: {v!r}")


def _jsonl_records(fp: IO[str]) -> Iterator[tuple[int, dict | str]]:
    for line_no, line in enumerate(fp, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            yield line_no, "unparseable json"
            continue
        if not isinstance(rec, dict):
            yield line_no, "record is not an object"
            continue
        yield line_no, rec


def _csv_records(fp: IO[str]) -> Iterator[tuple[int, dict | str]]:
    reader = csv.DictReader(fp)
    if reader.fieldnames is None:
        raise EmptyInputError("csv input has no header")
    missing = [f for f in REQUIRED_FIELDS if f not in reader.fieldnames]
    if missing:
        raise SchemaMismatchError(f"csv header missing columns {missing}", line=1)
    for line_no, rec in enumerate(reader, start=2):
        yield line_no, rec


def ingest(source: str | Path | IO[str], format: str = "jsonl") -> IngestResult:
    """Parse a click log, skipping and counting malformed records.

    Records missing any of the seven feature fields, campaign, clicked or ts
    raise SchemaMismatchError with the first offending line.  Value-level
    violations (hour out of range, bad types) are skipped and tallied.
    """
    if format not in ("jsonl", "csv"):
        raise ValueError(f"unsupported format {format!r}")
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fp:
            return ingest(fp, format=format)

    records = _jsonl_records(source) if format == "jsonl" else _csv_records(source)
    clicks: list[Impression] = []
    reasons: dict[str, int] = {}
    total = skipped = non_clicks = 0
    for line_no, rec in records:
        total += 1
        if isinstance(rec, str):  # parse failure; reason text
            skipped += 1
            reasons[rec] = reasons.get(rec, 0) + 1
            continue
        missing = [f for f in REQUIRED_FIELDS if f not in rec or rec[f] is None or rec[f] == ""]
        if missing:
            raise SchemaMismatchError(f"record missing fields {missing}", line=line_no)
        try:
            imp = _coerce_record(rec)
        except (ValueError, TypeError) as exc:
            skipped += 1
            reason = str(exc)
            reasons[reason] = reasons.get(reason, 0) + 1
            continue
        if not imp.clicked:
            non_clicks += 1
            continue
        clicks.append(imp)

    if not clicks:
        raise EmptyInputError(
            f"no usable click records ({total} read, {skipped} skipped, "
            f"{non_clicks} non-clicks)"
        )
    report = IngestReport(
        total_records=total,
        ingested=len(clicks),
        skipped=skipped,
        non_clicks=non_clicks,
        skip_reasons=tuple(sorted(reasons.items())),
    )
    return IngestResult(pool=ClickPool.from_impressions(clicks), report=report)


def emit(pool: ClickPool, sink: str | Path | IO[str], format: str = "jsonl") -> None:
    """Write a pool back out in the ingestion schema (round-trip safe)."""
    write_impressions(pool.clicks, sink, format=format)


def _record_of(imp: Impression) -> dict:
    return {
        "exchange": imp.exchange,
        "hour": imp.hour,
        "day": imp.day,
        "ad_format": imp.ad_format,
        "ad_size": imp.ad_size,
        "domain": imp.domain,
        "zip": imp.zip,
        "campaign": imp.campaign,
        "clicked": imp.clicked,
        "ts": imp.timestamp,
    }


def build_labeled_set(
    pool: ClickPool, campaign: str, window: tuple[int, int] | None = None
) -> LabeledSet:
    """Positives: the campaign's clicks in the window; negatives: all other clicks."""
    if campaign not in pool.campaigns:
        raise NoPositivesError(f"campaign {campaign!r} not present in pool")
    lo, hi = window if window is not None else pool.window
    rows = tuple(
        (imp, int(imp.campaign == campaign))
        for imp in pool.clicks
        if lo <= imp.timestamp <= hi
    )
    n_pos = sum(label for _, label in rows)
    if n_pos == 0:
        raise NoPositivesError(f"no clicks for {campaign!r} within window [{lo}, {hi}]")
    if n_pos == len(rows):
        raise NoNegativesError(f"no other campaigns' clicks within window [{lo}, {hi}]")
    return LabeledSet(campaign=campaign, rows=rows)


def split_random(labeled: LabeledSet, ratio: float = 3.0, seed: int = 0) -> Split:
    """Label-stratified random split with |T|/|C| = ratio, deterministic per seed."""
    if ratio <= 0:
        raise ValueError("ratio must be positive")
    frac = ratio / (1.0 + ratio)
    rng = random.Random(seed)
    train_rows: list[tuple[Impression, int]] = []
    calib_rows: list[tuple[Impression, int]] = []
    for label in (1, 0):
        group = [row for row in labeled.rows if row[1] == label]
        if len(group) < 2:
            raise TooSmallError(
                f"label {label} has {len(group)} row(s); need >= 2 to keep one per side"
            )
        rng.shuffle(group)
        n_train = min(max(round(frac * len(group)), 1), len(group) - 1)
        train_rows.extend(group[:n_train])
        calib_rows.extend(group[n_train:])
    return Split(
        training=LabeledSet(labeled.campaign, tuple(train_rows)),
        calibration=LabeledSet(labeled.campaign, tuple(calib_rows)),
        method="random",
        seed=seed,
    )


def split_time(labeled: LabeledSet, fraction: float = 0.75) -> Split:
    """Chronological split: training up to the fraction point, ties go to training."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    stamps = [imp.timestamp for imp, _ in labeled.rows]
    t_a, t_c = min(stamps), max(stamps)
    t_b = t_a + fraction * (t_c - t_a)
    train_rows = tuple(row for row in labeled.rows if row[0].timestamp <= t_b)
    calib_rows = tuple(row for row in labeled.rows if row[0].timestamp > t_b)
    for side, rows in (("training", train_rows), ("calibration", calib_rows)):
        labels = {label for _, label in rows}
        if labels != {0, 1}:
            raise TooSmallError(
                f"time split leaves {side} without both labels "
                f"(cut at {t_b:.0f} over [{t_a}, {t_c}])"
            )
    return Split(
        training=LabeledSet(labeled.campaign, train_rows),
        calibration=LabeledSet(labeled.campaign, calib_rows),
        method="time",
    )


def load_impressions(
    source: str | Path | IO[str], format: str = "jsonl"
) -> list[Impression]:
    """Read an impression batch without the clicked-only filter (scoring input)."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fp:
            return load_impressions(fp, format=format)
    records = _jsonl_records(source) if format == "jsonl" else _csv_records(source)
    out: list[Impression] = []
    for line_no, rec in records:
        if isinstance(rec, str):
            continue
        try:
            out.append(_coerce_record(rec))
        except (ValueError, TypeError, KeyError):
            continue
    if not out:
        raise EmptyInputError("no usable impression records")
    return out


def write_impressions(
    impressions: Iterable[Impression], sink: str | Path | IO[str], format: str = "jsonl"
) -> None:
    if isinstance(sink, (str, Path)):
        with open(sink, "w", encoding="utf-8", newline="") as fp:
            write_impressions(impressions, fp, format=format)
        return
    if format == "jsonl":
        for imp in impressions:
            sink.write(json.dumps(_record_of(imp), ensure_ascii=False) + "\n")
    elif format == "csv":
        writer = csv.DictWriter(sink, fieldnames=REQUIRED_FIELDS)
        writer.writeheader()
        for imp in impressions:
            writer.writerow(_record_of(imp))
    else:
        raise ValueError(f"unsupported format {format!r}")


def ingest_string(text: str, format: str = "jsonl") -> IngestResult:
    """Convenience for tests and small tools."""
    return ingest(io.StringIO(text), format=format)
