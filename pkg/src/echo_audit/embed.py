"""Item-embedding table loading and per-block average pooling.

The embedding table is a headerless TSV of ``item_id<TAB>v1...<TAB>vD``;
the dimension D is inferred from the first row. A user's embedding for
one interaction block is the component-wise arithmetic mean of the
block's item vectors, so user and item embeddings live in the same space.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import IO, Iterable

import numpy as np

from .blocks import InteractionBlock
from .errors import DimensionError, IntegrityError, MissingEmbeddingError
from .logmodel import _text_lines


@dataclass(frozen=True)
class EmbeddingTable:
    """Immutable item-id to vector map backed by one (n, D) array."""

    dim: int
    ids: tuple[str, ...]
    matrix: np.ndarray
    _index: dict[str, int] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        if not self._index:
            self._index.update({item: i for i, item in enumerate(self.ids)})

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._index

    def __getitem__(self, item_id: str) -> np.ndarray:
        try:
            return self.matrix[self._index[item_id]]
        except KeyError:
            raise MissingEmbeddingError(f"unknown item id {item_id!r}") from None

    def rows(self, item_ids: Iterable[str]) -> np.ndarray:
        """Stack the vectors for item_ids into one (k, D) array."""
        index = self._index
        try:
            picks = [index[i] for i in item_ids]
        except KeyError as exc:
            raise MissingEmbeddingError(f"unknown item id {exc.args[0]!r}") from None
        return self.matrix[picks]


@dataclass(frozen=True, slots=True)
class UserBlockEmbedding:
    user_id: str
    kind: str
    block_index: int
    vector: np.ndarray


def load_embedding_table(stream: IO | bytes | str | Iterable[str]) -> EmbeddingTable:
    """Parse a TSV embedding stream; D comes from the first data row.

    Raises DimensionError (with line number) for ragged or non-finite
    rows and IntegrityError for duplicate item ids.
    """
    ids: list[str] = []
    rows: list[np.ndarray] = []
    seen: set[str] = set()
    dim = None
    for lineno, line in enumerate(_text_lines(stream), start=1):
        line = line.rstrip("\n").rstrip("\r")
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) < 2:
            raise DimensionError("embedding row needs an id and at least one value", line=lineno)
        item_id = parts[0]
        if not item_id:
            raise DimensionError("empty item id", line=lineno)
        if dim is None:
            dim = len(parts) - 1
        elif len(parts) - 1 != dim:
            raise DimensionError(
                f"row has {len(parts) - 1} values, table dimension is {dim}", line=lineno
            )
        if item_id in seen:
            raise IntegrityError(f"duplicate item id {item_id!r} at line {lineno}")
        seen.add(item_id)
        try:
            vec = np.array(parts[1:], dtype=np.float64)
        except ValueError as exc:
            raise DimensionError(f"non-numeric value: {exc}", line=lineno) from None
        if not np.all(np.isfinite(vec)):
            raise DimensionError("non-finite embedding value", line=lineno)
        ids.append(item_id)
        rows.append(vec)
    if dim is None:
        raise DimensionError("embedding stream is empty")
    matrix = np.vstack(rows)
    matrix.setflags(write=False)
    return EmbeddingTable(dim=dim, ids=tuple(ids), matrix=matrix)


def dump_embedding_table(table: EmbeddingTable) -> str:
    """Serialize a table back to TSV text (row order preserved)."""
    lines = []
    for item_id, vec in zip(table.ids, table.matrix):
        lines.append(item_id + "\t" + "\t".join(repr(float(v)) for v in vec))
    return "\n".join(lines) + "\n"


def block_embedding(
    block: InteractionBlock,
    table: EmbeddingTable,
    missing_policy: str = "error",
) -> UserBlockEmbedding:
    """Average-pool a block's item vectors into one user embedding.

    ``missing_policy`` is ``error`` (unknown item raises) or ``skip``
    (unknown items are dropped; raises only if nothing resolves).
    """
    if missing_policy not in ("error", "skip"):
        raise ValueError(f"unknown missing_policy {missing_policy!r}")
    if not block.item_ids:
        raise ValueError("block has no items")
    if missing_policy == "error":
        vectors = table.rows(block.item_ids)
    else:
        known = [i for i in block.item_ids if i in table]
        if not known:
            raise MissingEmbeddingError(
                f"no item of block {block.index} for user {block.user_id!r} "
                "is present in the embedding table"
            )
        vectors = table.rows(known)
    mean = vectors.mean(axis=0, dtype=np.float64)
    return UserBlockEmbedding(
        user_id=block.user_id, kind=block.kind, block_index=block.index, vector=mean
    )
