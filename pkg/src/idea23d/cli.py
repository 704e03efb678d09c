"""Command line entry point: ``idea23d {run,eval,render,inspect}``.

Exit codes: 0 success, 1 domain error (validation, parsing, backend
exhaustion, ...), 2 usage error (bad flags, missing files, bad config).
"""

from __future__ import annotations

import argparse
import logging
import secrets
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .config import DEFAULT_CONFIG, AppConfig, load_config
from .errors import ConfigError, Idea23DError
from .evaluation import MODES, format_table, load_dataset, run_eval
from .idea import load_idea_manifest
from .loop import run
from .meshio import load_mesh
from .render import RenderConfig, cm2i, compose_view_grid
from .session import load_session

log = logging.getLogger("idea23d")


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="idea23d", description="Turn a multimodal idea into a textured 3D model.")
    ap.add_argument("--config", type=Path, default=None,
                    help=f"TOML or JSON config file (default ./{DEFAULT_CONFIG} if present)")
    ap.add_argument("--seed", type=int, default=None, help="master seed; a random seed is chosen and printed if omitted")
    ap.add_argument("--log-level", default=None, choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                    help="logging verbosity (overrides the config file)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the refinement loop on one idea")
    p.add_argument("--idea", type=Path, required=True, help="idea manifest JSON")
    p.add_argument("--out", type=Path, required=True, help="session directory to create")

    p = sub.add_parser("eval", help="evaluate a dataset in one mode")
    p.add_argument("--dataset", type=Path, required=True, help="dataset manifest JSON")
    p.add_argument("--mode", choices=MODES, required=True, help="evaluation mode")
    p.add_argument("--report", type=Path, required=True, help="report JSON path (a .txt table is written next to it)")
    p.add_argument("--session-root", type=Path, default=None,
                   help="where per-case sessions go (default <logging.session_root>/<report stem>)")
    p.add_argument("--workers", type=int, default=None, help="concurrent cases (overrides the config file)")

    p = sub.add_parser("render", help="render a mesh into six views and a grid")
    p.add_argument("mesh", type=Path, help="OBJ or GLB file")
    p.add_argument("--out-dir", type=Path, required=True, help="directory for the seven PNGs")
    p.add_argument("--resolution", type=int, default=512, help="square view size in pixels")
    p.add_argument("--margin", type=float, default=0.05, help="margin fraction on each side")

    p = sub.add_parser("inspect", help="print the iteration table of a session")
    p.add_argument("session", type=Path, help="session directory")
    return ap


def _config(args) -> AppConfig:
    if args.config is not None:
        if not args.config.exists():
            raise UsageError(f"config file {args.config} does not exist")
        return load_config(args.config)
    default = Path(DEFAULT_CONFIG)
    return load_config(default) if default.exists() else AppConfig()


def _require(path: Path, what: str) -> None:
    if not path.exists():
        raise UsageError(f"{what} {path} does not exist")


def cmd_run(args, cfg: AppConfig) -> int:
    _require(args.idea, "idea manifest")
    idea = load_idea_manifest(args.idea)
    result = run(idea, cfg.loop, cfg.prompt_templates(), cfg.gateway(), args.out)
    print(f"iterations: {result.iterations}")
    print(f"final draft: {result.final.draft_id}  prompt: {result.final.prompt}")
    print(f"session: {args.out}")
    return 0


def cmd_eval(args, cfg: AppConfig) -> int:
    _require(args.dataset, "dataset manifest")
    dataset = load_dataset(args.dataset)
    eval_cfg = cfg.eval
    if args.workers is not None:
        eval_cfg = replace(eval_cfg, workers=args.workers)
    root = args.session_root or Path(cfg.session_root) / args.report.stem
    report = run_eval(dataset, args.mode, eval_cfg, cfg.gateway(), cfg.prompt_templates(), root)
    report.write(args.report)
    print(format_table([report]))
    print(f"report: {args.report}")
    return 0


def cmd_render(args, cfg: AppConfig) -> int:
    _require(args.mesh, "mesh file")
    mesh = load_mesh(args.mesh)
    views = cm2i(mesh, RenderConfig((args.resolution, args.resolution), args.margin))
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for name, img in views.views.items():
        img.save(args.out_dir / f"{name}.png")
    compose_view_grid(views).save(args.out_dir / "grid.png")
    print(f"wrote 7 images to {args.out_dir}")
    return 0


def _excerpt(text: str, width: int = 60) -> str:
    text = " ".join(text.split())
    return text if len(text) <= width else text[: width - 3] + "..."


def cmd_inspect(args, cfg: AppConfig) -> int:
    _require(args.session / "session.jsonl", "session log")
    s = load_session(args.session, with_drafts=False)
    print(f"session {args.session}  schema v{s.header['schema_version']}  events {len(s.events)}"
          + ("  [incomplete final event]" if s.incomplete else ""))
    print(f"{'iter':>4}  {'best':>4}  {'decision':<8}  prompts / feedback")
    for o in s.outcomes:
        d = o.decision
        print(f"{o.iteration:>4}  {o.best_index:>4}  {d.kind:<8}  " + " | ".join(_excerpt(p, 40) for p in o.prompts))
        if d.kind == "refine":
            print(f"{'':>22}feedback: {_excerpt(d.feedback)}")
        for prompt, reason in o.discarded:
            print(f"{'':>22}discarded ({reason}): {_excerpt(prompt, 40)}")
    if s.final:
        print(f"final: {s.final['draft_id']} after {s.final['iterations']} iteration(s)")
    if s.error:
        print(f"error [{s.error['stage']}]: {s.error['message']}")
    return 0


COMMANDS = {"run": cmd_run, "eval": cmd_eval, "render": cmd_render, "inspect": cmd_inspect}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _config(args)
        logging.basicConfig(level=args.log_level or cfg.log_level,
                            format="%(asctime)s %(levelname)s %(name)s: %(message)s")
        seed = args.seed
        if seed is None:
            seed = secrets.randbelow(2 ** 31)
            print(f"seed: {seed}", file=sys.stderr)
        log.info("seed %d", seed)
        return COMMANDS[args.command](args, cfg.with_seed(seed))
    except (UsageError, FileNotFoundError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except Idea23DError as exc:
        print(f"error [{exc.stage}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
