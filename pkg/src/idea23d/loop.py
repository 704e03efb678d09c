"""The iterative self-refinement loop.

One iteration: generate N prompts, lift each through T2I, background removal
and I23D into a draft, pick the best draft from a rendered lineup, then either
accept it or turn the critique into the next round's prompts.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .backends.gateway import MAX_IMAGES_PER_REQUEST, Gateway, ImagePart, LmmRequest, TextPart
from .errors import AllDraftsFailed, Idea23DError, PreconditionError, PromptParseError, ValidationError
from .idea import AugmentedIdea, DraftModel, Idea, validate_idea
from .memory import DEFAULT_DIGEST_BUDGET, Memory, MemoryRecord, digest
from .meshio import write_glb, write_obj
from .prompts import PromptTemplates, asset_placeholders, parse_best, parse_numbered, parse_verdict
from .render import RenderConfig, ViewSet, cm2i, compose_draft_lineup, compose_view_grid
from .session import SessionLog

log = logging.getLogger(__name__)

MAX_LINEUP = 8
REASKS = 2
VARIATIONS = ("alternative composition", "alternative viewpoint", "alternative style",
              "alternative lighting", "alternative proportions", "alternative pose",
              "alternative detail", "alternative palette")


@dataclass(frozen=True)
class LoopConfig:
    num_draft: int = 3
    num_img: int = 1
    max_iters: int = 5
    render: RenderConfig = field(default_factory=RenderConfig)
    seed: int = 0
    gen_temperature: float = 0.7
    select_temperature: float = 0.0
    feedback_temperature: float = 0.0
    digest_budget: int = DEFAULT_DIGEST_BUDGET

    def __post_init__(self):
        if self.num_draft < 1 or self.num_img < 1 or self.max_iters < 1:
            raise PreconditionError("num_draft, num_img and max_iters must all be at least 1")
        if self.num_draft * self.num_img > MAX_LINEUP:
            raise PreconditionError(f"num_draft * num_img may not exceed {MAX_LINEUP} (lineup limit)")

    def to_dict(self) -> dict:
        return {"num_draft": self.num_draft, "num_img": self.num_img, "max_iters": self.max_iters,
                "render": self.render.to_dict(), "seed": self.seed,
                "gen_temperature": self.gen_temperature, "select_temperature": self.select_temperature,
                "feedback_temperature": self.feedback_temperature, "digest_budget": self.digest_budget}

    @classmethod
    def from_dict(cls, d: dict) -> "LoopConfig":
        d = dict(d)
        if "render" in d:
            d["render"] = RenderConfig.from_dict(d["render"])
        return cls(**d)


@dataclass(frozen=True)
class Accept:
    comment: str = ""
    kind = "accept"


@dataclass(frozen=True)
class Refine:
    feedback: str
    kind = "refine"

    def __post_init__(self):
        if not self.feedback.strip():
            raise PreconditionError("Refine requires non-empty feedback")


Decision = Union[Accept, Refine]


def decision_to_dict(d: Decision) -> dict:
    return {"kind": "accept", "comment": d.comment} if isinstance(d, Accept) else \
        {"kind": "refine", "feedback": d.feedback}


def decision_from_dict(d: dict) -> Decision:
    return Accept(d.get("comment", "")) if d["kind"] == "accept" else Refine(d["feedback"])


@dataclass(frozen=True)
class DraftFailure:
    prompt: str
    reason: str
    detail: str = ""


@dataclass
class IterationOutcome:
    iteration: int
    prompts: list[str]
    drafts: list[DraftModel]
    best_index: int
    decision: Decision
    discarded: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        if self.drafts and not 0 <= self.best_index < len(self.drafts):
            raise PreconditionError("best_index must refer to a surviving draft")

    @property
    def best(self) -> DraftModel:
        return self.drafts[self.best_index]


@dataclass
class RunResult:
    final: DraftModel
    outcomes: list[IterationOutcome]
    memory: Memory
    log: SessionLog

    @property
    def iterations(self) -> int:
        return len(self.outcomes)


# ------------------------------------------------------------------ augment

def augment(idea: Idea, cfg: Optional[RenderConfig] = None) -> AugmentedIdea:
    """Original images first, then the six rendered views of each mesh, with provenance."""
    bad = validate_idea(idea)
    if bad:
        raise ValidationError(bad)
    cfg = cfg or RenderConfig()
    images = list(idea.image_assets)
    provenance = {}
    for mesh in idea.mesh_assets:
        views = cm2i(mesh, cfg)
        for name, img in views.views.items():
            images.append(img)
            provenance[img.id] = (mesh.id, name)
    return AugmentedIdea(idea.text_directives, images, provenance)


def idea_images(x: AugmentedIdea, limit: int = MAX_IMAGES_PER_REQUEST - 1) -> list[tuple[str, object]]:
    """(asset id, image) pairs sent to the agents.

    When the augmented images would not fit into one request next to the
    lineup or draft grid, each mesh's six views collapse into its view grid.
    """
    if len(x.images) <= limit:
        return [(x.view_provenance.get(im.id, (im.id,))[0], im) for im in x.images]
    out: list[tuple[str, object]] = [(im.id, im) for im in x.original_images]
    for mesh_id in x.mesh_ids:
        views = {x.view_provenance[im.id][1]: im for im in x.views_of(mesh_id)}
        out.append((mesh_id, compose_view_grid(ViewSet(views))))
    if len(out) > limit:
        raise PreconditionError(f"idea has {len(out)} images; at most {limit} fit in one agent request")
    return out


@dataclass(frozen=True)
class AgentContext:
    """Text and image parts describing the idea, shared by all three agents."""

    idea_text: str
    parts: tuple

    @classmethod
    def build(cls, x: AugmentedIdea) -> "AgentContext":
        pairs = idea_images(x)
        positions: dict[str, list[int]] = {}
        for k, (asset_id, _) in enumerate(pairs, start=1):
            positions.setdefault(asset_id, []).append(k)
        text = "\n".join(asset_placeholders(t, positions) for t in x.text_directives)
        parts = (TextPart(text, "idea_text"),) + tuple(
            ImagePart(img, f"idea:{asset_id}") for asset_id, img in pairs)
        return cls(text, parts)


def draft_seed(seed: int, iteration: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, iteration, index]).generate_state(1)[0])


def _reask_note(what: str) -> TextPart:
    return TextPart(f"Your previous answer could not be used: {what}. Follow the answer format exactly.",
                    "reask")


# ---------------------------------------------------------- prompt agent

def generate_prompts(gw: Gateway, templates: PromptTemplates, ctx: AgentContext, feedback: Optional[str],
                     mem: Memory, n: int, cfg: LoopConfig) -> list[str]:
    """Exactly ``n`` distinct prompts from the generation agent."""
    if n < 1:
        raise PreconditionError("n must be at least 1")
    if (feedback is None) != (len(mem) == 0):
        raise PreconditionError("feedback must be given exactly when memory is non-empty (iteration > 0)")
    mem_text = digest(mem, cfg.digest_budget)
    system = templates.render("gen", idea_text=ctx.idea_text, feedback=feedback or "",
                              memory_digest=mem_text, n=n)
    meta = {"idea_text": ctx.idea_text, "feedback": feedback, "memory_digest": mem_text, "n": n}
    iteration = len(mem)

    def ask(extra: tuple) -> Optional[list[str]]:
        req = LmmRequest(system, ctx.parts + extra, temperature=cfg.gen_temperature, role="gen", meta=meta)
        return parse_numbered(gw.lmm_complete(req, iteration=iteration), n)

    extra: tuple = ()
    prompts = None
    for _ in range(1 + REASKS):
        prompts = ask(extra)
        if prompts is not None:
            break
        extra = (_reask_note(f"expected {n} numbered lines '1. ...' to '{n}. ...'"),)
    if prompts is None:
        raise PromptParseError(f"prompt agent gave no {n} numbered prompts after {REASKS} re-asks")

    if len({p.casefold() for p in prompts}) < n:
        again = ask((_reask_note("the prompts must all be different"),))
        if again is not None:
            prompts = again
    return _dedupe(prompts)


def _dedupe(prompts: Sequence[str]) -> list[str]:
    out: list[str] = []
    seen: set[str] = set()
    for p in prompts:
        candidate, k = p, 0
        while candidate.casefold() in seen:
            hint = VARIATIONS[k % len(VARIATIONS)]
            candidate = f"{p} ({hint})" if k < len(VARIATIONS) else f"{p} ({hint} {k // len(VARIATIONS) + 1})"
            k += 1
        seen.add(candidate.casefold())
        out.append(candidate)
    return out


# ------------------------------------------------------------------ T23D

def t23d(gw: Gateway, prompt: str, cfg: LoopConfig, seed: int, iteration: int = 0,
         first_index: int = 0) -> list[Union[DraftModel, DraftFailure]]:
    """T2I -> background removal -> I23D -> six views for each of ``cfg.num_img`` images.

    Never raises: a failing stage turns that draft into a :class:`DraftFailure`.
    Results have length ``cfg.num_img``; draft ids run from ``first_index``.
    """
    if not prompt.strip():
        raise PreconditionError("prompt must be non-empty")
    ctx = {"iteration": iteration}
    try:
        images = gw.t2i_generate(prompt, cfg.num_img, seed, **ctx)
    except Exception as exc:
        return [DraftFailure(prompt, type(exc).__name__, str(exc))] * cfg.num_img
    out: list[Union[DraftModel, DraftFailure]] = []
    for k, gen in enumerate(images):
        draft_id = f"it{iteration}-d{first_index + k}"
        try:
            gen = gen.with_id(f"{draft_id}:gen")
            fg = gw.remove_background(gen, draft_id=draft_id, **ctx).with_id(f"{draft_id}:fg")
            mesh = gw.i23d_generate(fg, seed, draft_id=draft_id, **ctx).with_id(draft_id)
            out.append(DraftModel(draft_id, prompt, gen, fg, mesh, cm2i(mesh, cfg.render), iteration, seed))
        except Exception as exc:
            out.append(DraftFailure(prompt, type(exc).__name__, str(exc)))
    return out


def t23d_event(iteration: int, index: int, result) -> dict:
    if isinstance(result, DraftFailure):
        return {"event": "t23d", "iteration": iteration, "index": index, "prompt": result.prompt,
                "ok": False, "reason": result.reason, "detail": result.detail}
    return {"event": "t23d", "iteration": iteration, "index": index, "prompt": result.prompt, "ok": True,
            "draft_id": result.draft_id, "seed": result.seed, "gen_digest": result.gen_image.digest(),
            "fg_digest": result.fg_image.digest(), "mesh_digest": result.mesh.digest().hex()}


def fan_out(gw: Gateway, prompts: Sequence[str], cfg: LoopConfig, iteration: int, sink) -> list:
    """Run every prompt's T23D pipeline concurrently; records reach ``sink`` in prompt order."""
    buffers: list[list[dict]] = [[] for _ in prompts]

    def task(i: int):
        local = gw.with_sink(buffers[i].append)
        results = t23d(local, prompts[i], cfg, draft_seed(cfg.seed, iteration, i), iteration, i * cfg.num_img)
        for k, r in enumerate(results):
            buffers[i].append(t23d_event(iteration, i * cfg.num_img + k, r))
        return results

    with ThreadPoolExecutor(max_workers=len(prompts)) as pool:
        per_prompt = list(pool.map(task, range(len(prompts))))
    for buf in buffers:
        for rec in buf:
            sink(rec)
    return [r for results in per_prompt for r in results]


# -------------------------------------------------------------- selection

def select_best(gw: Gateway, templates: PromptTemplates, drafts: Sequence[DraftModel], ctx: AgentContext,
                cfg: LoopConfig, sink=None, iteration: int = 0) -> int:
    """Index of the draft the selection agent prefers; a single draft short-circuits to 0."""
    if not drafts:
        raise PreconditionError("select_best needs at least one draft")
    emit = sink if sink is not None else (lambda r: None)
    if len(drafts) == 1:
        emit({"event": "selection", "iteration": iteration, "best_index": 0, "status": "single"})
        return 0
    n = len(drafts)
    system = templates.render("select", idea_text=ctx.idea_text, n=n)
    lineup = ImagePart(compose_draft_lineup(drafts), "lineup")
    extra: tuple = ()
    for attempt in range(1 + REASKS):
        req = LmmRequest(system, ctx.parts + (lineup,) + extra, temperature=cfg.select_temperature,
                         role="select", meta={"idea_text": ctx.idea_text, "n": n})
        k = parse_best(gw.lmm_complete(req, iteration=iteration), n)
        if k is not None:
            emit({"event": "selection", "iteration": iteration, "best_index": k, "status": "ok",
                  "attempts": attempt + 1})
            return k
        extra = (_reask_note(f"answer 'BEST: k' with k between 0 and {n - 1}"),)
    log.warning("selection agent gave no valid index; falling back to draft 0")
    emit({"event": "selection", "iteration": iteration, "best_index": 0, "status": "SelectionFallback",
          "attempts": 1 + REASKS})
    return 0


# --------------------------------------------------------------- feedback

def decide_and_feedback(gw: Gateway, templates: PromptTemplates, best: DraftModel, ctx: AgentContext,
                        mem: Memory, iteration: int, cfg: LoopConfig, sink=None) -> Decision:
    """Accept or Refine(feedback) for the iteration's best draft.

    The feedback agent is consulted every iteration so its critique is on
    record, but at the iteration cap its verdict is overridden by Accept.
    """
    emit = sink if sink is not None else (lambda r: None)
    at_cap = iteration + 1 >= cfg.max_iters
    mem_text = digest(mem, cfg.digest_budget)
    system = templates.render("feedback", idea_text=ctx.idea_text, memory_digest=mem_text)
    grid = ImagePart(compose_view_grid(best.views), "draft:best")
    meta = {"idea_text": ctx.idea_text, "memory_digest": mem_text}
    extra: tuple = ()
    text = ""
    for attempt in range(1 + (0 if at_cap else REASKS)):
        req = LmmRequest(system, ctx.parts + (grid,) + extra, temperature=cfg.feedback_temperature,
                         role="feedback", meta=meta)
        text = gw.lmm_complete(req, iteration=iteration)
        parsed = parse_verdict(text)
        if at_cap:
            decision: Decision = Accept(parsed[1] if parsed else text.strip())
            emit({"event": "decision", "iteration": iteration, "status": "cap", **decision_to_dict(decision)})
            return decision
        if parsed is not None:
            verdict, feedback = parsed
            decision = Accept(feedback) if verdict == "accept" else Refine(feedback)
            emit({"event": "decision", "iteration": iteration, "status": "ok", "attempts": attempt + 1,
                  **decision_to_dict(decision)})
            return decision
        extra = (_reask_note("start with 'VERDICT: ACCEPT' or 'VERDICT: REFINE' and give feedback"),)
    decision = Refine(text.strip())
    emit({"event": "decision", "iteration": iteration, "status": "unparsed", "attempts": 1 + REASKS,
          **decision_to_dict(decision)})
    return decision


# -------------------------------------------------------------------- run

def idea_summary(idea: Idea) -> dict:
    return {"text": list(idea.text_directives), "images": [i.id for i in idea.image_assets],
            "image_digests": [i.digest() for i in idea.image_assets],
            "meshes": [m.id for m in idea.mesh_assets],
            "mesh_digests": [m.digest().hex() for m in idea.mesh_assets], "modality": idea.modality}


def run(idea: Idea, cfg: LoopConfig, templates: PromptTemplates, gateway: Gateway,
        session_dir=None, session: Optional[SessionLog] = None) -> RunResult:
    """Run the loop until acceptance or ``cfg.max_iters``; every event lands in the session log."""
    slog = session or SessionLog(session_dir, {"config": cfg.to_dict(), "idea": idea_summary(idea)})
    gw = gateway.with_sink(slog)
    try:
        x = augment(idea, cfg.render)
        ctx = AgentContext.build(x)
        slog.emit({"event": "augment", "images": [im.id for im in x.images],
                   "provenance": {k: list(v) for k, v in x.view_provenance.items()},
                   "agent_images": len(ctx.parts) - 1})
        mem = Memory()
        outcomes: list[IterationOutcome] = []
        feedback: Optional[str] = None
        for it in range(cfg.max_iters):
            prompts = generate_prompts(gw, templates, ctx, feedback, mem, cfg.num_draft, cfg)
            slog.emit({"event": "prompts", "iteration": it, "prompts": prompts})
            results = fan_out(gw, prompts, cfg, it, slog)
            drafts = [r for r in results if isinstance(r, DraftModel)]
            discarded = [(r.prompt, r.reason) for r in results if isinstance(r, DraftFailure)]
            for d in drafts:
                slog.save_draft(d)
            if not drafts:
                raise AllDraftsFailed(f"iteration {it}: all {len(results)} drafts failed: "
                                      + "; ".join(sorted({r for _, r in discarded})))
            best = select_best(gw, templates, drafts, ctx, cfg, slog, it)
            decision = decide_and_feedback(gw, templates, drafts[best], ctx, mem, it, cfg, slog)
            record = MemoryRecord(it, drafts[best].prompt, drafts[best].draft_id,
                                  drafts[best].mesh.digest().hex(),
                                  decision.feedback if isinstance(decision, Refine) else "")
            mem = mem.append(record)
            slog.emit({"event": "memory", "iteration": it, "record": mem.to_list()[-1]})
            slog.save_memory(mem)
            outcome = IterationOutcome(it, prompts, drafts, best, decision, discarded)
            outcomes.append(outcome)
            slog.emit({"event": "iteration", "iteration": it, "prompts": prompts,
                       "draft_ids": [d.draft_id for d in drafts], "best_index": best,
                       "decision": decision_to_dict(decision), "discarded": [list(t) for t in discarded]})
            if isinstance(decision, Accept):
                break
            feedback = decision.feedback
        final = outcomes[-1].best
        _write_final(slog, final)
        slog.emit({"event": "final", "iterations": len(outcomes), "draft_id": final.draft_id,
                   "prompt": final.prompt, "mesh_digest": final.mesh.digest().hex()})
        return RunResult(final, outcomes, mem, slog)
    except Exception as exc:
        stage = exc.stage if isinstance(exc, Idea23DError) else "internal"
        slog.emit({"event": "error", "stage": stage, "type": type(exc).__name__, "message": str(exc)})
        raise
    finally:
        if session is None:
            slog.close()


def _write_final(slog: SessionLog, final: DraftModel) -> None:
    if slog.directory is None:
        return
    out = Path(slog.directory) / "final"
    (out / "views").mkdir(parents=True, exist_ok=True)
    write_glb(final.mesh, out / "model.glb")
    write_obj(final.mesh, out / "model.obj")
    for name, img in final.views.views.items():
        img.save(out / "views" / f"{name}.png")
    compose_view_grid(final.views).save(out / "grid.png")
