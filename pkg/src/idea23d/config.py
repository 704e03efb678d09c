"""Application config (TOML or JSON) and gateway construction.

Example ``idea23d.toml``::

    [loop]
    num_draft = 3
    max_iters = 5
    render = { resolution = [256, 256] }

    [backends.lmm]
    kind = "http"
    url = "http://localhost:8000"
    api_key_env = "LMM_API_KEY"
    model_name = "my-lmm"
    policy = { timeout_s = 60, max_retries = 3 }

Roles: lmm, t2i, i23d, embed, matting.  ``kind`` is "mock" (default) or
"http"; matting also accepts "builtin".  Omitted fields take defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Optional

import tomli

from .backends.gateway import BackendPolicy, BuiltinMatting, Gateway
from .backends.http import HttpEmbedder, HttpI23D, HttpLMM, HttpMatting, HttpT2I
from .backends.mock import PRIMITIVES, HueLMM, MockEmbedder, MockI23D, MockT2I, ScriptedLMM
from .errors import ConfigError, PreconditionError
from .evaluation import EvalConfig
from .loop import LoopConfig
from .prompts import PromptTemplates
from .render import RenderConfig

ROLES = ("lmm", "t2i", "i23d", "embed", "matting")
DEFAULT_CONFIG = "idea23d.toml"
_HTTP = {"lmm": HttpLMM, "t2i": HttpT2I, "i23d": HttpI23D, "embed": HttpEmbedder, "matting": HttpMatting}


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "mock"
    url: str = ""
    api_key_env: Optional[str] = None
    model_name: str = ""
    policy: BackendPolicy = field(default_factory=BackendPolicy)
    options: Mapping[str, Any] = field(default_factory=dict)

    def build(self, role: str):
        if self.kind == "http":
            if not self.url:
                raise ConfigError(f"backend {role}: http kind needs a url")
            return _HTTP[role](self.url, self.model_name, self.api_key_env, self.policy.timeout_s)
        if self.kind == "builtin" and role == "matting":
            return BuiltinMatting()
        if self.kind != "mock":
            raise ConfigError(f"backend {role}: unknown kind {self.kind!r}")
        opts = dict(self.options)
        if role == "lmm":
            scripts = opts.pop("scripts", None)
            base = HueLMM(**opts)
            return ScriptedLMM(scripts, base) if scripts else base
        if role == "t2i":
            return MockT2I(**opts)
        if role == "i23d":
            return MockI23D(tuple(opts.pop("primitives", PRIMITIVES)), **opts)
        if role == "embed":
            return MockEmbedder(**opts)
        return BuiltinMatting()


@dataclass(frozen=True)
class AppConfig:
    backends: Mapping[str, BackendConfig] = field(default_factory=lambda: {r: BackendConfig() for r in ROLES})
    loop: LoopConfig = field(default_factory=LoopConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    templates: Mapping[str, Optional[str]] = field(default_factory=dict)
    log_level: str = "INFO"
    session_root: str = "sessions"

    def gateway(self, sink=None) -> Gateway:
        built = {role: self.backends[role].build(role) for role in ROLES}
        policies = {role: self.backends[role].policy for role in ROLES}
        return Gateway(built["lmm"], built["t2i"], built["i23d"], built["embed"], built["matting"],
                       policies=policies, sink=sink)

    def prompt_templates(self) -> PromptTemplates:
        return PromptTemplates.from_paths(**self.templates)

    def with_seed(self, seed: int) -> "AppConfig":
        loop = replace(self.loop, seed=seed)
        return replace(self, loop=loop, eval=replace(self.eval, loop=loop))


def _known(cls, doc: Mapping, where: str) -> dict:
    names = {f.name for f in fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return dict(doc)


def _policy(doc: Mapping, where: str) -> BackendPolicy:
    try:
        return BackendPolicy(**_known(BackendPolicy, doc, where))
    except (TypeError, PreconditionError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(doc: Mapping, base_dir: Path = Path(".")) -> AppConfig:
    doc = dict(doc)
    unknown = set(doc) - {"backends", "loop", "eval", "templates", "logging"}
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    backends = {}
    raw_backends = doc.get("backends", {})
    stray = set(raw_backends) - set(ROLES)
    if stray:
        raise ConfigError(f"unknown backend roles {sorted(stray)}")
    for role in ROLES:
        b = dict(raw_backends.get(role, {}))
        b = _known(BackendConfig, b, f"backends.{role}")
        b["policy"] = _policy(b.get("policy", {}), f"backends.{role}.policy")
        backends[role] = BackendConfig(**b)
    try:
        loop_doc = _known(LoopConfig, doc.get("loop", {}), "loop")
        if "seed" in loop_doc:
            raise ConfigError("loop.seed is not configurable; pass --seed")
        loop = LoopConfig.from_dict(loop_doc)
        ev = dict(doc.get("eval", {}))
        unknown_ev = set(ev) - {"metric_render", "workers"}
        if unknown_ev:
            raise ConfigError(f"eval: unknown keys {sorted(unknown_ev)}")
        metric = RenderConfig.from_dict(ev["metric_render"]) if "metric_render" in ev else RenderConfig()
        eval_cfg = EvalConfig(loop, metric, int(ev.get("workers", 1)))
    except (TypeError, PreconditionError) as exc:
        raise ConfigError(str(exc)) from exc
    templates = {}
    for role, path in dict(doc.get("templates", {})).items():
        if role not in ("gen", "select", "feedback"):
            raise ConfigError(f"templates: unknown role {role!r}")
        p = (base_dir / path) if not Path(path).is_absolute() else Path(path)
        if not p.exists():
            raise ConfigError(f"templates.{role}: file {p} does not exist")
        templates[role] = str(p)
    logging_doc = dict(doc.get("logging", {}))
    return AppConfig(backends, loop, eval_cfg, templates, str(logging_doc.get("level", "INFO")).upper(),
                     str(logging_doc.get("session_root", "sessions")))


def load_config(path) -> AppConfig:
    """Parse a TOML (``.toml``) or JSON config file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file {path} does not exist")
    text = path.read_text()
    try:
        doc = json.loads(text) if path.suffix == ".json" else tomli.loads(text)
    except (ValueError, tomli.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(doc, path.parent)
