import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from idea23d.backends import Gateway, ListSink, ScriptedLMM, mock_backends  # noqa: E402
from idea23d.backends.gateway import BackendPolicy  # noqa: E402
from idea23d.backends.mock import MockT2I  # noqa: E402
from idea23d.idea import Idea  # noqa: E402
from idea23d.loop import LoopConfig  # noqa: E402
from idea23d.prompts import PromptTemplates  # noqa: E402
from idea23d.render import RenderConfig  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
MINI = ROOT / "data" / "mini" / "manifest.json"
FAST_RENDER = RenderConfig((64, 64))


def fast_cfg(**kw) -> LoopConfig:
    kw.setdefault("render", FAST_RENDER)
    return LoopConfig(**kw)


def gateway(lmm=None, sink=None, **kw) -> Gateway:
    fast = {role: BackendPolicy(backoff_s=0.001) for role in ("lmm", "t2i", "matting", "i23d", "embed")}
    return Gateway(**mock_backends(lmm, **kw), policies=fast, sink=sink)


def hue_image(words: str, seed: int = 0, id: str = "ref", size: int = 128):
    return MockT2I(size).render(words, seed).with_id(id)


@pytest.fixture
def templates():
    return PromptTemplates.default()


@pytest.fixture
def sink():
    return ListSink()


@pytest.fixture
def simple_idea():
    return Idea(("a rabbit wearing <asset:ref>",), (hue_image("hat doughnut"),))


@pytest.fixture
def scripted():
    def make(**scripts):
        return ScriptedLMM(scripts)
    return make


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
