from .cone import extract_cone_profile, otsu, otsu_binarize, outline, sector_cone
from .recipes import (DiagramRecipe, Ellipse, KidneyRecipeConfig, LesionRecipeConfig,
                      rasterize, read_recipes, sample_kidney_recipe, sample_lesion_recipe,
                      write_recipes)
from .vae import VaeConfig, VaeModel, sample_cone, train_cone_vae

__all__ = [
    "extract_cone_profile", "otsu", "otsu_binarize", "outline", "sector_cone",
    "DiagramRecipe", "Ellipse", "KidneyRecipeConfig", "LesionRecipeConfig",
    "rasterize", "read_recipes", "sample_kidney_recipe", "sample_lesion_recipe",
    "write_recipes", "VaeConfig", "VaeModel", "sample_cone", "train_cone_vae",
]
