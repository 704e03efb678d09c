"""Agent prompt templates and parsers for the structured agent replies."""

from __future__ import annotations

import re
import string
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

from .errors import PreconditionError

SLOTS = {
    "gen": ("idea_text", "feedback", "memory_digest", "n"),
    "select": ("idea_text", "n"),
    "feedback": ("idea_text", "memory_digest"),
}


def template_slots(template: str) -> set[str]:
    return {name for _, name, _, _ in string.Formatter().parse(template) if name is not None}


@dataclass(frozen=True)
class PromptTemplates:
    gen: str
    select: str
    feedback: str

    def __post_init__(self):
        for role, declared in SLOTS.items():
            found = template_slots(getattr(self, role))
            missing = set(declared) - found
            unknown = found - set(declared)
            if missing or unknown:
                raise PreconditionError(
                    f"{role} template: missing slots {sorted(missing)}, unknown slots {sorted(unknown)}")

    @classmethod
    def default(cls) -> "PromptTemplates":
        root = resources.files("idea23d") / "templates"
        return cls(*((root / f"{role}.txt").read_text() for role in SLOTS))

    @classmethod
    def from_paths(cls, gen=None, select=None, feedback=None) -> "PromptTemplates":
        """Load templates from files; roles left as None use the packaged defaults."""
        base = cls.default()
        texts = {}
        for role, path in (("gen", gen), ("select", select), ("feedback", feedback)):
            texts[role] = Path(path).read_text() if path else getattr(base, role)
        return cls(**texts)

    def render(self, role: str, **values) -> str:
        return getattr(self, role).format(**{k: values[k] for k in SLOTS[role]})


# ------------------------------------------------------------------ parsers

_NUMBERED = re.compile(r"^\s*(\d+)\s*[.)]\s*(.*?)\s*$")
_BEST = re.compile(r"BEST:\s*(-?\d+)", re.IGNORECASE)
_VERDICT = re.compile(r"^\s*VERDICT:\s*(ACCEPT|REFINE)\b[\s.:-]*(.*)$", re.IGNORECASE)


def parse_numbered(text: str, n: int) -> Optional[list[str]]:
    """Prompts from lines ``1. ...`` to ``n. ...``; None unless all n are present and non-empty."""
    found: dict[int, str] = {}
    for line in text.splitlines():
        m = _NUMBERED.match(line)
        if m and 1 <= int(m.group(1)) <= n and int(m.group(1)) not in found and m.group(2):
            found[int(m.group(1))] = m.group(2)
    if len(found) != n:
        return None
    return [found[k] for k in range(1, n + 1)]


def parse_best(text: str, n: int) -> Optional[int]:
    m = _BEST.search(text)
    if not m:
        return None
    k = int(m.group(1))
    return k if 0 <= k < n else None


def parse_verdict(text: str) -> Optional[tuple[str, str]]:
    """("accept" | "refine", feedback) from a leading ``VERDICT:`` line, else None.

    A REFINE verdict without feedback text counts as unparseable.
    """
    lines = text.strip().splitlines()
    if not lines:
        return None
    m = _VERDICT.match(lines[0])
    if not m:
        return None
    verdict = m.group(1).lower()
    feedback = "\n".join([m.group(2)] + lines[1:]).strip()
    if verdict == "refine" and not feedback:
        return None
    return verdict, feedback


def asset_placeholders(text: str, positions: dict[str, list[int]]) -> str:
    """Replace ``<asset:ID>`` tokens with ``[image k]`` / ``[images a-b]`` (1-based positions)."""
    def sub(m):
        idx = positions.get(m.group(1))
        if not idx:
            return m.group(0)
        if len(idx) == 1:
            return f"[image {idx[0]}]"
        return f"[images {idx[0]}-{idx[-1]}]"
    return re.sub(r"<asset:([^>\s]+)>", sub, text)
