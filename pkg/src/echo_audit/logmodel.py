"""Interaction-log schemas, CSV/JSONL parsing, and page-view grouping.

Three log kinds are supported. Browse rows record one recommended item
impression (with its list position and whether it was clicked); click and
purchase rows record one interaction with its price. CSV files carry a
header row; JSONL files carry one object per line with the same field
names. ``clicked`` is serialized as ``0``/``1`` in both formats.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, NamedTuple

from .errors import IntegrityError, LogParseError, SchemaError

BROWSE = "browse"
CLICK = "click"
PURCHASE = "purchase"
KINDS = (BROWSE, CLICK, PURCHASE)

BROWSE_COLUMNS = ("timestamp", "pv_id", "user_id", "item_id", "position", "clicked")
EVENT_COLUMNS = ("timestamp", "pv_id", "user_id", "item_id", "price")

# Click logs from some exporters carry a user_profile field; it is accepted
# and dropped because no downstream computation uses it.
_IGNORED_FIELDS = frozenset({"user_profile"})


@dataclass(frozen=True, slots=True)
class InteractionRecord:
    """One browse, click, or purchase event.

    Browse records carry ``position`` and ``clicked``; click and purchase
    records carry ``price``. The unused trio is always None.
    """

    kind: str
    timestamp: int
    pv_id: str
    user_id: str
    item_id: str
    position: int | None = None
    clicked: bool | None = None
    price: float | None = None

    def validate(self) -> None:
        """Raise ValueError if any field invariant is violated."""
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.timestamp <= 0:
            raise ValueError("timestamp must be positive")
        if not (self.pv_id and self.user_id and self.item_id):
            raise ValueError("ids must be non-empty")
        if self.kind == BROWSE:
            if self.position is None or self.clicked is None or self.price is not None:
                raise ValueError("browse records need position and clicked, no price")
            if self.position < 0:
                raise ValueError("position must be non-negative")
        else:
            if self.price is None or self.position is not None or self.clicked is not None:
                raise ValueError(f"{self.kind} records need price, no position/clicked")
            if self.price < 0:
                raise ValueError("price must be non-negative")


class PvItem(NamedTuple):
    item_id: str
    position: int
    clicked: bool


@dataclass(frozen=True, slots=True)
class PageView:
    """All impressions rendered on one recommendation page.

    ``items`` is ordered by list position; ``start_time`` is the earliest
    member timestamp.
    """

    pv_id: str
    user_id: str
    start_time: int
    items: tuple[PvItem, ...]

    @property
    def clicked(self) -> bool:
        """True when at least one displayed item was clicked."""
        return any(item.clicked for item in self.items)


@dataclass(slots=True)
class ParseResult:
    """Records parsed from one stream plus the count of skipped rows.

    ``skipped`` is always 0 in strict mode. Iterating a ParseResult
    iterates its records.
    """

    records: list[InteractionRecord]
    skipped: int = 0

    def __iter__(self) -> Iterator[InteractionRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)


def _text_lines(stream: IO | bytes | str | Iterable[str]) -> Iterable[str]:
    if isinstance(stream, bytes):
        return io.StringIO(stream.decode("utf-8"))
    if isinstance(stream, str):
        return io.StringIO(stream)
    if hasattr(stream, "read"):
        first = stream.read(0)
        if isinstance(first, bytes):
            return io.TextIOWrapper(stream, encoding="utf-8")
        return stream
    return stream


def parse_log(
    kind: str,
    stream: IO | bytes | str | Iterable[str],
    format: str = "csv",
    lenient: bool = False,
) -> ParseResult:
    """Parse one log stream into validated InteractionRecords.

    ``stream`` may be a file object, raw bytes/str content, or an iterable
    of lines. In strict mode (default) a malformed row raises LogParseError
    with its line number; in lenient mode malformed rows are skipped and
    counted. A wrong field set for the kind raises SchemaError regardless
    of mode for CSV (the header is structural); for JSONL a bad key set is
    per-row and obeys the lenient flag.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown log kind {kind!r}")
    if format not in ("csv", "jsonl"):
        raise ValueError(f"unknown format {format!r}")
    lines = _text_lines(stream)
    if format == "csv":
        return _parse_csv(kind, lines, lenient)
    return _parse_jsonl(kind, lines, lenient)


def parse_log_path(kind: str, path, format: str = "csv", lenient: bool = False) -> ParseResult:
    """Open ``path`` and parse it with :func:`parse_log`."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return parse_log(kind, fh, format=format, lenient=lenient)


def _parse_csv(kind: str, lines: Iterable[str], lenient: bool) -> ParseResult:
    reader = csv.reader(lines)
    expected = BROWSE_COLUMNS if kind == BROWSE else EVENT_COLUMNS
    try:
        header = next(reader)
    except StopIteration:
        return ParseResult([], 0)
    header = [h.strip() for h in header]
    kept = [i for i, name in enumerate(header) if name not in _IGNORED_FIELDS]
    names = tuple(header[i] for i in kept)
    if names != expected:
        missing = [c for c in expected if c not in names]
        if missing:
            raise SchemaError(f"{kind} log is missing column {missing[0]!r}", line=1)
        raise SchemaError(
            f"{kind} log header {list(names)} does not match {list(expected)}", line=1
        )
    project = kept if len(kept) != len(header) else None

    records: list[InteractionRecord] = []
    append = records.append
    skipped = 0
    is_browse = kind == BROWSE
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if project is not None:
            row = [row[i] for i in project]
        try:
            if len(row) != len(expected):
                raise ValueError(f"expected {len(expected)} fields, got {len(row)}")
            ts = int(row[0])
            pv_id, user_id, item_id = row[1], row[2], row[3]
            if ts <= 0 or not (pv_id and user_id and item_id):
                raise ValueError("bad timestamp or empty id")
            if is_browse:
                position = int(row[4])
                flag = row[5]
                if flag == "0":
                    clicked = False
                elif flag == "1":
                    clicked = True
                else:
                    raise ValueError(f"clicked must be 0 or 1, got {flag!r}")
                if position < 0:
                    raise ValueError("negative position")
                append(
                    InteractionRecord(kind, ts, pv_id, user_id, item_id, position, clicked, None)
                )
            else:
                price = float(row[4])
                if price < 0:
                    raise ValueError("negative price")
                append(InteractionRecord(kind, ts, pv_id, user_id, item_id, None, None, price))
        except ValueError as exc:
            if lenient:
                skipped += 1
                continue
            raise LogParseError(f"malformed {kind} row: {exc}", line=lineno) from exc
    return ParseResult(records, skipped)


def _parse_jsonl(kind: str, lines: Iterable[str], lenient: bool) -> ParseResult:
    expected = set(BROWSE_COLUMNS if kind == BROWSE else EVENT_COLUMNS)
    records: list[InteractionRecord] = []
    skipped = 0
    is_browse = kind == BROWSE
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise ValueError("row is not an object")
            keys = {k for k in obj if k not in _IGNORED_FIELDS}
            if keys != expected:
                raise SchemaError(
                    f"{kind} row fields {sorted(keys)} do not match {sorted(expected)}",
                    line=lineno,
                )
            ts = int(obj["timestamp"])
            pv_id = str(obj["pv_id"])
            user_id = str(obj["user_id"])
            item_id = str(obj["item_id"])
            if ts <= 0 or not (pv_id and user_id and item_id):
                raise ValueError("bad timestamp or empty id")
            if is_browse:
                position = int(obj["position"])
                flag = obj["clicked"]
                if flag in (0, 1, False, True):
                    clicked = bool(flag)
                else:
                    raise ValueError(f"clicked must be 0 or 1, got {flag!r}")
                if position < 0:
                    raise ValueError("negative position")
                rec = InteractionRecord(kind, ts, pv_id, user_id, item_id, position, clicked, None)
            else:
                price = float(obj["price"])
                if price < 0:
                    raise ValueError("negative price")
                rec = InteractionRecord(kind, ts, pv_id, user_id, item_id, None, None, price)
            records.append(rec)
        except (ValueError, SchemaError) as exc:
            if lenient:
                skipped += 1
                continue
            if isinstance(exc, SchemaError):
                raise
            raise LogParseError(f"malformed {kind} row: {exc}", line=lineno) from exc
    return ParseResult(records, skipped)


def _price_str(price: float) -> str:
    # repr round-trips floats exactly; integral prices stay readable.
    return repr(price) if price != int(price) else str(int(price)) + ".0"


def serialize_log(records: Iterable[InteractionRecord], format: str = "csv") -> str:
    """Serialize records to CSV (with header) or JSONL text.

    All records must share one kind. parse_log(serialize_log(rs)) is the
    identity on any valid record list.
    """
    records = list(records)
    if format not in ("csv", "jsonl"):
        raise ValueError(f"unknown format {format!r}")
    if not records:
        return ""
    kind = records[0].kind
    if any(r.kind != kind for r in records):
        raise ValueError("records of mixed kinds cannot share a stream")
    out = io.StringIO()
    if format == "csv":
        writer = csv.writer(out, lineterminator="\n")
        if kind == BROWSE:
            writer.writerow(BROWSE_COLUMNS)
            for r in records:
                writer.writerow(
                    (r.timestamp, r.pv_id, r.user_id, r.item_id, r.position, int(r.clicked))
                )
        else:
            writer.writerow(EVENT_COLUMNS)
            for r in records:
                writer.writerow((r.timestamp, r.pv_id, r.user_id, r.item_id, _price_str(r.price)))
    else:
        for r in records:
            if kind == BROWSE:
                obj = {
                    "timestamp": r.timestamp,
                    "pv_id": r.pv_id,
                    "user_id": r.user_id,
                    "item_id": r.item_id,
                    "position": r.position,
                    "clicked": int(r.clicked),
                }
            else:
                obj = {
                    "timestamp": r.timestamp,
                    "pv_id": r.pv_id,
                    "user_id": r.user_id,
                    "item_id": r.item_id,
                    "price": r.price,
                }
            out.write(json.dumps(obj, separators=(",", ":")))
            out.write("\n")
    return out.getvalue()


def group_page_views(browse_records: Iterable[InteractionRecord]) -> dict[str, list[PageView]]:
    """Group browse records into PageViews, keyed by user.

    Each PageView holds exactly the records sharing its pv_id, with items
    ordered by position. Per-user lists are ordered by start_time, ties
    broken by first appearance in the input. The result is independent of
    row order within a pv_id.
    """
    by_pv: dict[str, list[InteractionRecord]] = {}
    first_seen: dict[str, int] = {}
    for idx, rec in enumerate(browse_records):
        if rec.kind != BROWSE:
            raise ValueError(f"group_page_views expects browse records, got {rec.kind!r}")
        bucket = by_pv.get(rec.pv_id)
        if bucket is None:
            by_pv[rec.pv_id] = [rec]
            first_seen[rec.pv_id] = idx
        else:
            bucket.append(rec)

    by_user: dict[str, list[tuple[int, int, PageView]]] = {}
    for pv_id, members in by_pv.items():
        user_id = members[0].user_id
        positions = set()
        start = members[0].timestamp
        for rec in members:
            if rec.user_id != user_id:
                raise IntegrityError(
                    f"pv_id {pv_id!r} is shared by users {user_id!r} and {rec.user_id!r}"
                )
            if rec.position in positions:
                raise IntegrityError(f"duplicate position {rec.position} within pv_id {pv_id!r}")
            positions.add(rec.position)
            if rec.timestamp < start:
                start = rec.timestamp
        members.sort(key=lambda r: r.position)
        pv = PageView(
            pv_id=pv_id,
            user_id=user_id,
            start_time=start,
            items=tuple(PvItem(r.item_id, r.position, r.clicked) for r in members),
        )
        by_user.setdefault(user_id, []).append((start, first_seen[pv_id], pv))

    result: dict[str, list[PageView]] = {}
    for user_id, tagged in by_user.items():
        tagged.sort(key=lambda t: (t[0], t[1]))
        result[user_id] = [pv for _, _, pv in tagged]
    return result
