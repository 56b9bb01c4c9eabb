"""Gaze maps, attention saliency maps, gaze-alignment losses and a toy
gaze-supervised attention model."""

from .attention import PatchGrid, aggregate_attention, to_image_map, to_patch_map
from .gaze import Fixation, GazeSample, Session, build_gaze_map, gaussian_blur
from .grids import bilinear_resize, dist_normalize, minmax_normalize
from .losses import LossConfig, LossResult, combined, finite_diff_check
from .metrics import MetricReport, cc, kl_div, sim

__version__ = "0.1.0"
