"""Durable session directory: append-only ``session.jsonl``, draft artifacts, memory.

Layout::

    session.jsonl          header event, then one JSON object per event
    drafts/<draft_id>/     gen.png, fg.png, mesh.glb, draft.json
    memory.json            list of MemoryRecord dicts
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .assets import ImageAsset
from .errors import LoadError
from .idea import DraftModel
from .memory import Memory, MemoryRecord
from .meshio import read_glb, write_glb
from .render import RenderConfig, cm2i

SCHEMA_VERSION = 1
VOLATILE_FIELDS = ("ts", "latency_s")


def _default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (set, tuple)):
        return list(obj)
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True, default=_default, ensure_ascii=False)


def strip_volatile(record: dict) -> dict:
    return {k: v for k, v in record.items() if k not in VOLATILE_FIELDS}


class SessionLog:
    """Append-only event log.  Calling the log appends one event, so it can serve as a gateway sink.

    With ``directory=None`` events are only kept in memory.
    """

    def __init__(self, directory=None, header: Optional[dict] = None):
        self.directory = Path(directory) if directory is not None else None
        self.events: list[dict] = []
        self._lock = threading.Lock()
        self._fh = None
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.directory / "session.jsonl", "w", encoding="utf-8")
        self.emit({"event": "header", "schema_version": SCHEMA_VERSION, **(header or {})})

    def emit(self, record: dict) -> None:
        record = dict(record)
        record.setdefault("ts", round(time.time(), 6))
        with self._lock:
            record["seq"] = len(self.events)
            self.events.append(record)
            if self._fh is not None:
                self._fh.write(dumps(record) + "\n")
                self._fh.flush()

    __call__ = emit

    def extend(self, records: Iterable[dict]) -> None:
        for r in records:
            self.emit(r)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # ------------------------------------------------------------ artifacts
    def save_draft(self, draft: DraftModel) -> Optional[Path]:
        if self.directory is None:
            return None
        d = self.directory / "drafts" / draft.draft_id
        d.mkdir(parents=True, exist_ok=True)
        draft.gen_image.save(d / "gen.png")
        draft.fg_image.save(d / "fg.png")
        write_glb(draft.mesh, d / "mesh.glb")
        meta = {"draft_id": draft.draft_id, "prompt": draft.prompt, "iteration": draft.iteration,
                "seed": draft.seed, "gen_id": draft.gen_image.id, "fg_id": draft.fg_image.id,
                "mesh_id": draft.mesh.id, "mesh_digest": draft.mesh.digest().hex()}
        (d / "draft.json").write_text(dumps(meta))
        return d

    def save_memory(self, mem: Memory) -> None:
        if self.directory is not None:
            (self.directory / "memory.json").write_text(json.dumps(mem.to_list(), indent=2))


# ------------------------------------------------------------------ loading

@dataclass
class LoadedSession:
    directory: Path
    header: dict
    events: list[dict]
    memory: Memory
    outcomes: list  # list[loop.IterationOutcome]
    drafts: dict[str, DraftModel] = field(default_factory=dict)
    incomplete: bool = False
    final: Optional[dict] = None
    error: Optional[dict] = None

    def backend_calls(self, role: Optional[str] = None) -> list[dict]:
        return [e for e in self.events if e.get("event") == "backend_call"
                and (role is None or e.get("role") == role)]


def read_events(path) -> tuple[list[dict], bool]:
    """Parse a JSONL log; a malformed last line is dropped and flagged instead of failing."""
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    events, incomplete = [], False
    for i, line in enumerate(lines):
        try:
            events.append(json.loads(line))
        except json.JSONDecodeError as exc:
            if i == len(lines) - 1:
                incomplete = True
            else:
                raise LoadError(f"corrupt event on line {i + 1}: {exc}") from exc
    return events, incomplete


def load_draft(directory, render_cfg: RenderConfig) -> DraftModel:
    d = Path(directory)
    meta = json.loads((d / "draft.json").read_text())
    mesh = read_glb(d / "mesh.glb", meta["mesh_id"])
    return DraftModel(meta["draft_id"], meta["prompt"],
                      ImageAsset.load(d / "gen.png", meta["gen_id"]),
                      ImageAsset.load(d / "fg.png", meta["fg_id"]),
                      mesh, cm2i(mesh, render_cfg), meta["iteration"], meta.get("seed"))


def load_session(directory, with_drafts: bool = True) -> LoadedSession:
    """Reconstruct memory, iteration outcomes and drafts (views re-rendered) from disk."""
    from .loop import IterationOutcome, decision_from_dict  # deferred: loop imports this module

    directory = Path(directory)
    log = directory / "session.jsonl"
    if not log.exists():
        raise LoadError(f"no session.jsonl in {directory}")
    events, incomplete = read_events(log)
    if not events or events[0].get("event") != "header":
        raise LoadError("session log lacks a header event")
    header = events[0]
    version = header.get("schema_version")
    if version != SCHEMA_VERSION:
        raise LoadError(f"unsupported schema version {version!r}; this build reads version {SCHEMA_VERSION}")
    render_cfg = RenderConfig.from_dict(header.get("config", {}).get("render", {}))

    drafts: dict[str, DraftModel] = {}
    if with_drafts and (directory / "drafts").is_dir():
        for d in sorted((directory / "drafts").iterdir()):
            if (d / "draft.json").exists():
                drafts[d.name] = load_draft(d, render_cfg)

    memory = Memory()
    outcomes = []
    final = error = None
    for e in events[1:]:
        kind = e.get("event")
        if kind == "memory":
            memory = memory.append(MemoryRecord(**e["record"]))
        elif kind == "iteration":
            outcomes.append(IterationOutcome(
                iteration=e["iteration"], prompts=list(e["prompts"]),
                drafts=[drafts[i] for i in e["draft_ids"]] if with_drafts else [],
                best_index=e["best_index"], decision=decision_from_dict(e["decision"]),
                discarded=[tuple(x) for x in e["discarded"]]))
        elif kind == "final":
            final = e
        elif kind == "error":
            error = e
    return LoadedSession(directory, header, events, memory, outcomes, drafts, incomplete, final, error)
