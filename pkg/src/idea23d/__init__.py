"""Multimodal idea to textured 3D model via iterative LMM-driven prompt refinement."""

from .assets import ImageAsset, MeshAsset
from .idea import AugmentedIdea, DraftModel, Idea, validate_idea
from .loop import Accept, IterationOutcome, LoopConfig, Refine, augment, run
from .memory import Memory, MemoryRecord
from .prompts import PromptTemplates
from .render import RenderConfig, ViewSet, cm2i, compose_draft_lineup, compose_view_grid

__version__ = "0.1.0"

__all__ = [
    "ImageAsset", "MeshAsset", "AugmentedIdea", "DraftModel", "Idea", "validate_idea", "Accept",
    "IterationOutcome", "LoopConfig", "Refine", "augment", "run", "Memory", "MemoryRecord",
    "PromptTemplates", "RenderConfig", "ViewSet", "cm2i", "compose_draft_lineup", "compose_view_grid",
]
