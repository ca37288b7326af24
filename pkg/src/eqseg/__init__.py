"""Rotation-equivariant U-Net for deforestation-driver segmentation, built on numpy."""
from .group import FieldType, GeometricTensor, GroupSpec, make_group, regular_rep, trivial_rep
from .model import ConfigError, ModelConfig, UNetModel, build_model
from .tensor import GeometryError, Tensor

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "FieldType", "GeometricTensor", "GeometryError", "GroupSpec", "ModelConfig",
    "Tensor", "UNetModel", "build_model", "make_group", "regular_rep", "trivial_rep",
]
