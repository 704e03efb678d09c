"""Backend roles (LMM, T2I, matting, I23D, embedding) behind one gateway."""

from .gateway import (MAX_IMAGES_PER_REQUEST, BackendPolicy, Gateway, ImagePart, ListSink,
                      LmmRequest, TextPart, count_calls)
from .mock import HueLMM, MockEmbedder, MockI23D, MockT2I, ScriptedLMM, mock_backends

__all__ = [
    "MAX_IMAGES_PER_REQUEST", "BackendPolicy", "Gateway", "ImagePart", "ListSink", "LmmRequest",
    "TextPart", "count_calls", "HueLMM", "MockEmbedder", "MockI23D", "MockT2I", "ScriptedLMM",
    "mock_backends",
]
