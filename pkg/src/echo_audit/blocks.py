"""Fixed-size interaction blocks and eligibility filtering.

A user's same-kind interaction history is cut into consecutive blocks of
exactly n events; the incomplete trailing remainder is dropped so every
block is the same size. Temporal comparisons use a user's first and last
block, so users need a minimum block count to be eligible.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .logmodel import InteractionRecord


@dataclass(frozen=True, slots=True)
class InteractionBlock:
    user_id: str
    kind: str
    index: int
    item_ids: tuple[str, ...]
    span: tuple[int, int]

    def __len__(self) -> int:
        return len(self.item_ids)


def build_blocks(user_events: Sequence[InteractionRecord], n: int) -> list[InteractionBlock]:
    """Cut one user's time-sorted same-kind events into blocks of n.

    Produces floor(len(events)/n) blocks in event order; the remainder is
    discarded. Raises ValueError on unsorted, mixed-user, or mixed-kind
    input.
    """
    if n < 1:
        raise ValueError(f"block size must be >= 1, got {n}")
    if not user_events:
        return []
    user_id = user_events[0].user_id
    kind = user_events[0].kind
    prev_ts = None
    for rec in user_events:
        if rec.user_id != user_id:
            raise ValueError("events of multiple users in one history")
        if rec.kind != kind:
            raise ValueError("events of multiple kinds in one history")
        if prev_ts is not None and rec.timestamp < prev_ts:
            raise ValueError("events are not sorted by time")
        prev_ts = rec.timestamp

    count = len(user_events) // n
    blocks = []
    for i in range(count):
        chunk = user_events[i * n : (i + 1) * n]
        blocks.append(
            InteractionBlock(
                user_id=user_id,
                kind=kind,
                index=i,
                item_ids=tuple(rec.item_id for rec in chunk),
                span=(chunk[0].timestamp, chunk[-1].timestamp),
            )
        )
    return blocks


def blocks_by_user(
    events: Iterable[InteractionRecord], n: int
) -> dict[str, list[InteractionBlock]]:
    """Group events by user, sort each history by time (stable, so ties
    keep file order), and build blocks per user."""
    histories: dict[str, list[InteractionRecord]] = {}
    for rec in events:
        histories.setdefault(rec.user_id, []).append(rec)
    out: dict[str, list[InteractionBlock]] = {}
    for user_id, history in histories.items():
        history.sort(key=lambda r: r.timestamp)
        out[user_id] = build_blocks(history, n)
    return out


def filter_eligible(
    blocks_per_user: Mapping[str, Sequence[InteractionBlock]], min_blocks: int = 3
) -> frozenset[str]:
    """Users whose block count reaches min_blocks for this kind.

    min_blocks must be at least 2 so that a user's first and last block
    are distinct.
    """
    if min_blocks < 2:
        raise ValueError(f"min_blocks must be >= 2, got {min_blocks}")
    return frozenset(u for u, blocks in blocks_per_user.items() if len(blocks) >= min_blocks)


def block_summary_csv(blocks_per_user: Mapping[str, Sequence[InteractionBlock]]) -> str:
    """Render block summaries as CSV: user_id,kind,index,size,first_ts,last_ts."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(("user_id", "kind", "index", "size", "first_ts", "last_ts"))
    for user_id in sorted(blocks_per_user):
        for block in blocks_per_user[user_id]:
            writer.writerow(
                (user_id, block.kind, block.index, len(block), block.span[0], block.span[1])
            )
    return out.getvalue()
