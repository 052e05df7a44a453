"""Desk-scale capture-stage matting pipeline."""

from .raster import (AlphaMask, Image, ScribbleMap, Trimap, composite,
                     load_alpha, load_image, load_scribbles, load_trimap,
                     resample, save_png)

__all__ = [
    "AlphaMask", "Image", "ScribbleMap", "Trimap", "composite",
    "load_alpha", "load_image", "load_scribbles", "load_trimap",
    "resample", "save_png",
]
