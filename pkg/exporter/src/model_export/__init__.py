"""Model export tool: torchvision architectures to probing bundles."""

__version__ = "0.1.0"

from .convert import ConversionError, convert_model, post_activation
from .export import export, verify_roundtrip
from .recipes import RECIPES, ExportRecipe, get_recipe, resolve_probes

__all__ = [
    "ConversionError", "ExportRecipe", "RECIPES", "convert_model", "export",
    "get_recipe", "post_activation", "resolve_probes", "verify_roundtrip",
]
