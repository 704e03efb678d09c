"""Manifest-driven evaluation: datasets, alignment metrics, per-mode runs and reports."""

from __future__ import annotations

import json
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .assets import MeshAsset
from .backends.gateway import Gateway, LmmRequest
from .errors import DatasetError, Idea23DError, MetricError, PreconditionError, ValidationError
from .idea import Idea, idea_from_manifest_dict, strip_asset_tokens, validate_idea
from .loop import AgentContext, DraftModel, LoopConfig, augment, idea_summary, run, t23d, draft_seed, t23d_event
from .prompts import PromptTemplates
from .render import METRIC_VIEWS, RenderConfig, render_views
from .session import SessionLog

MODES = ("idea23d", "caption_baseline", "text_only", "gt_prompt")
MODALITIES = ("text_only", "text_image", "text_mesh", "text_image_mesh")
SCORE_TEXT = "gt_caption"
CAPTION_PROMPT = (
    "Describe the object the user has in mind in one sentence suitable as a text-to-image prompt. "
    "Combine the attached images and the user's text; name every object part you see."
)


# ----------------------------------------------------------------- dataset

@dataclass(frozen=True)
class EvalCase:
    id: str
    idea: Idea
    gt_caption: str
    tags: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "tags", tuple(self.tags))
        if not self.gt_caption.strip():
            raise DatasetError(f"{self.id}: empty gt_caption")


@dataclass
class Dataset:
    cases: list[EvalCase]
    path: Optional[str] = None

    def __len__(self) -> int:
        return len(self.cases)

    def modality_histogram(self) -> dict[str, int]:
        counts = Counter(c.idea.modality for c in self.cases)
        return {m: counts.get(m, 0) for m in MODALITIES} | {m: n for m, n in counts.items() if m not in MODALITIES}

    def tag_histogram(self) -> dict[int, int]:
        counts = Counter(len(c.tags) for c in self.cases)
        return {k: counts.get(k, 0) for k in range(max(counts, default=0) + 1)}


def _asset_entries(entries) -> list[dict]:
    out = []
    for e in entries:
        if isinstance(e, str):
            e = {"id": Path(e).stem, "path": e}
        out.append(e)
    return out


def load_dataset(path) -> Dataset:
    """Read ``{"cases": [{id, text, images, meshes, gt_caption, tags}]}``; asset paths are manifest-relative."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset manifest {path} does not exist")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: not valid JSON ({exc})") from exc
    cases, seen = [], set()
    for raw in doc.get("cases", []):
        cid = raw.get("id")
        if not cid:
            raise DatasetError("case without id")
        if cid in seen:
            raise DatasetError(f"{cid}: duplicate case id")
        seen.add(cid)
        spec = {"text": raw.get("text", []), "images": _asset_entries(raw.get("images", [])),
                "meshes": _asset_entries(raw.get("meshes", []))}
        try:
            idea = idea_from_manifest_dict(spec, path.parent)
        except ValidationError as exc:
            raise DatasetError(f"{cid}: {exc}") from exc
        bad = validate_idea(idea)
        if bad:
            raise DatasetError(f"{cid}: " + "; ".join(bad))
        cases.append(EvalCase(cid, idea, raw.get("gt_caption", ""), tuple(raw.get("tags", []))))
    return Dataset(cases, str(path))


# ----------------------------------------------------------------- metrics

def _cos(a, b) -> float:
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0 or not (math.isfinite(na) and math.isfinite(nb)):
        raise MetricError("degenerate (zero-norm or non-finite) embedding")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def clip_multiview_score(gt_caption: str, mesh: MeshAsset, embedder, cfg: Optional[RenderConfig] = None) -> float:
    """Mean cosine between the caption embedding and the front/back/left/right renders."""
    e_t = embedder.embed_text(gt_caption)
    views = render_views(mesh, cfg or RenderConfig(), METRIC_VIEWS)
    return float(np.mean([_cos(e_t, embedder.embed_image(views[v])) for v in METRIC_VIEWS]))


def mesh_text_score(gt_caption: str, mesh: MeshAsset, embedder) -> float:
    """Cosine between caption and mesh embeddings (ULIP-style)."""
    return _cos(embedder.embed_text(gt_caption), embedder.embed_mesh(mesh))


# ------------------------------------------------------------------ report

@dataclass(frozen=True)
class EvalConfig:
    loop: LoopConfig = field(default_factory=LoopConfig)
    metric_render: RenderConfig = field(default_factory=RenderConfig)
    workers: int = 1

    def __post_init__(self):
        if self.workers < 1:
            raise PreconditionError("workers must be at least 1")

    def to_dict(self) -> dict:
        return {"loop": self.loop.to_dict(), "metric_render": self.metric_render.to_dict(), "workers": self.workers}


@dataclass
class EvalReport:
    mode: str
    rows: list[dict]
    config: dict
    dataset: dict

    @property
    def ok_rows(self) -> list[dict]:
        return [r for r in self.rows if r.get("error") is None]

    def aggregate(self) -> dict:
        ok = self.ok_rows
        agg: dict = {"n": len(self.rows), "scored": len(ok), "excluded": len(self.rows) - len(ok),
                     "clip": _mean([r["clip_score"] for r in ok]), "ulip": _mean([r["ulip_score"] for r in ok])}
        if self.mode == "idea23d":
            agg["avg_iter"] = _mean([r["iterations"] for r in ok])
            horizon = self.config["loop"]["max_iters"]
            curves = [_carry_forward(r["iteration_clip"], horizon) for r in ok]
            agg["iteration_clip"] = [_mean([c[t] for c in curves]) for t in range(horizon)] if curves else []
        return agg

    def to_dict(self) -> dict:
        return {"score_text": SCORE_TEXT, "mode": self.mode, "config": self.config, "dataset": self.dataset,
                "rows": self.rows, "aggregate": self.aggregate()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n")
        path.with_suffix(".txt").write_text(format_table([self]) + "\n")
        return path


def _mean(xs: Sequence[float]) -> Optional[float]:
    return float(np.mean(xs)) if len(xs) else None


def _carry_forward(values: Sequence[float], horizon: int) -> list[float]:
    """Pad a run that accepted early with its final score (the accepted model stays final)."""
    vals = list(values)[:horizon]
    return vals + [vals[-1]] * (horizon - len(vals))


def format_table(reports: Sequence[EvalReport]) -> str:
    """Aligned plain-text table: Method, Avg. Iter., CLIP, ULIP, scored/excluded counts."""
    header = ("Method", "Avg. Iter.", "CLIP", "ULIP", "Scored", "Excluded")
    lines = [header]
    fmt = lambda v, spec: "-" if v is None else format(v, spec)  # noqa: E731
    for rep in reports:
        a = rep.aggregate()
        lines.append((rep.mode, fmt(a.get("avg_iter"), ".2f"), fmt(a["clip"], ".4f"), fmt(a["ulip"], ".4f"),
                      str(a["scored"]), str(a["excluded"])))
    widths = [max(len(row[i]) for row in lines) for i in range(len(header))]
    rendered = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in lines]
    rendered.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(rendered)


# -------------------------------------------------------------------- runs

class EvalCaseFailed(Idea23DError):
    stage = "eval"


def _single_t23d(gw: Gateway, prompt: str, cfg: LoopConfig, slog: SessionLog) -> DraftModel:
    slog.emit({"event": "prompts", "iteration": 0, "prompts": [prompt]})
    result = t23d(gw, prompt, replace(cfg, num_img=1), draft_seed(cfg.seed, 0, 0), 0, 0)[0]
    slog.emit(t23d_event(0, 0, result))
    if not isinstance(result, DraftModel):
        raise EvalCaseFailed(f"{result.reason}: {result.detail}")
    slog.save_draft(result)
    return result


def _caption_prompt(gw: Gateway, idea: Idea, cfg: LoopConfig) -> str:
    x = augment(idea, cfg.render)
    ctx = AgentContext.build(x)
    caption = gw.lmm_complete(LmmRequest(CAPTION_PROMPT, ctx.parts, temperature=0.0, role="caption",
                                         meta={"idea_text": ctx.idea_text}))
    text = strip_asset_tokens(" ".join(idea.text_directives))
    return f"{text}. {caption.strip()}" if text else caption.strip()


def evaluate_case(case: EvalCase, mode: str, cfg: EvalConfig, gateway: Gateway,
                  templates: Optional[PromptTemplates] = None, session_dir=None) -> dict:
    """Run one case in ``mode`` and score its final model; failures become score-absent rows."""
    row: dict = {"case_id": case.id, "mode": mode, "modality": case.idea.modality, "tags": list(case.tags)}
    header = {"config": cfg.loop.to_dict(), "idea": idea_summary(case.idea), "mode": mode, "case_id": case.id}
    slog = SessionLog(session_dir, header)
    gw = gateway.with_sink(slog)
    try:
        if mode == "idea23d":
            result = run(case.idea, cfg.loop, templates or PromptTemplates.default(), gw, session=slog)
            mesh, row["iterations"] = result.final.mesh, result.iterations
            row["iteration_clip"] = [clip_multiview_score(case.gt_caption, o.best.mesh, gw, cfg.metric_render)
                                     for o in result.outcomes]
            row["final_prompt"] = result.final.prompt
        else:
            if mode == "gt_prompt":
                prompt = case.gt_caption
            elif mode == "text_only":
                prompt = strip_asset_tokens(" ".join(case.idea.text_directives))
                if not prompt:
                    raise EvalCaseFailed("case has no text directives")
            elif mode == "caption_baseline":
                prompt = _caption_prompt(gw, case.idea, cfg.loop)
            else:
                raise PreconditionError(f"unknown mode {mode!r}")
            draft = _single_t23d(gw, prompt, cfg.loop, slog)
            mesh = draft.mesh
            row["final_prompt"] = prompt
            slog.emit({"event": "final", "iterations": 1, "draft_id": draft.draft_id, "prompt": prompt,
                       "mesh_digest": mesh.digest().hex()})
        row["clip_score"] = clip_multiview_score(case.gt_caption, mesh, gw, cfg.metric_render)
        row["ulip_score"] = mesh_text_score(case.gt_caption, mesh, gw)
        row["error"] = None
    except Idea23DError as exc:
        row.update(clip_score=None, ulip_score=None, error=f"{type(exc).__name__}: {exc}")
        if mode != "idea23d":   # run() already logged its own error event
            slog.emit({"event": "error", "stage": exc.stage, "type": type(exc).__name__, "message": str(exc)})
    finally:
        slog.close()
    row["lmm_calls"] = sum(1 for e in slog.events if e.get("event") == "backend_call" and e.get("role") == "lmm")
    return row


def run_eval(dataset: Dataset, mode: str, cfg: EvalConfig, gateway: Gateway,
             templates: Optional[PromptTemplates] = None, session_root=None) -> EvalReport:
    """Evaluate every case (concurrently up to ``cfg.workers``) and assemble the report in case order."""
    if mode not in MODES:
        raise PreconditionError(f"mode must be one of {MODES}, got {mode!r}")
    root = Path(session_root) if session_root is not None else None

    def one(case: EvalCase) -> dict:
        return evaluate_case(case, mode, cfg, gateway, templates, root / case.id if root else None)

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        rows = list(pool.map(one, dataset.cases))
    meta = {"path": Path(dataset.path).name if dataset.path else None, "n_cases": len(dataset),
            "modality_histogram": dataset.modality_histogram(),
            "tag_histogram": {str(k): v for k, v in dataset.tag_histogram().items()}}
    return EvalReport(mode, rows, cfg.to_dict(), meta)
