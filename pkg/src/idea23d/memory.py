"""Per-iteration memory of best prompt, best draft and feedback."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable

from .errors import MemoryOrderError, PreconditionError

DEFAULT_DIGEST_BUDGET = 2000


@dataclass(frozen=True)
class MemoryRecord:
    iteration: int
    best_prompt: str
    best_draft_id: str
    mesh_digest: str  # hex of the 32-byte canonical mesh hash
    feedback: str = ""

    def __post_init__(self):
        if len(bytes.fromhex(self.mesh_digest)) != 32:
            raise PreconditionError("mesh_digest must be a 32-byte hash")

    def block(self) -> str:
        return f"[iter {self.iteration}] prompt: {self.best_prompt}; feedback: {self.feedback}"


@dataclass(frozen=True)
class Memory:
    records: tuple[MemoryRecord, ...] = ()

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def append(self, record: MemoryRecord) -> "Memory":
        expected = len(self.records)
        if record.iteration != expected:
            kind = "duplicate" if record.iteration < expected else "gap"
            raise MemoryOrderError(f"{kind}: got iteration {record.iteration}, expected {expected}")
        return Memory(self.records + (record,))

    def to_list(self) -> list[dict]:
        return [asdict(r) for r in self.records]

    @classmethod
    def from_list(cls, items: Iterable[dict]) -> "Memory":
        mem = cls()
        for item in items:
            mem = mem.append(MemoryRecord(**item))
        return mem


def append(mem: Memory, record: MemoryRecord) -> Memory:
    return mem.append(record)


def digest(mem: Memory, budget_chars: int = DEFAULT_DIGEST_BUDGET) -> str:
    """Newest-first text summary of ``mem`` that fits ``budget_chars``.

    The newest block is always kept whole, even if it alone is over budget;
    older blocks are dropped oldest-first.
    """
    if budget_chars < 256:
        raise PreconditionError("budget_chars must be at least 256")
    blocks = [r.block() for r in reversed(mem.records)]
    if not blocks:
        return ""
    kept = [blocks[0]]
    used = len(blocks[0])
    for block in blocks[1:]:
        if used + 1 + len(block) > budget_chars:
            break
        kept.append(block)
        used += 1 + len(block)
    return "\n".join(kept)
