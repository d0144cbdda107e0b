"""Depth-map formats, degradation and synthetic scenes."""

from .dataset import Sample, load_sample, load_split, sample_ids, synthesize
from .degrade import (
    DegradationSpec,
    QuantizedDepth,
    degrade,
    degrade_batch,
    dequantize_depth,
    downsample,
    quantize_depth,
)
from .depthmap import DepthMap
from .formats import (
    FormatError,
    read_meta,
    read_pfm,
    read_pgm,
    read_ppm,
    write_meta,
    write_pfm,
    write_pgm,
    write_ppm,
)
from .scenes import Box, Plane, SceneSpec, Sphere, generate_scene

__all__ = [
    "Box", "DegradationSpec", "DepthMap", "FormatError", "Plane", "QuantizedDepth", "Sample",
    "SceneSpec", "Sphere", "degrade", "degrade_batch", "dequantize_depth", "downsample",
    "generate_scene", "load_sample", "load_split", "quantize_depth", "read_meta", "read_pfm",
    "read_pgm", "read_ppm", "sample_ids", "synthesize", "write_meta", "write_pfm", "write_pgm",
    "write_ppm",
]
