"""Range-view LiDAR moving object segmentation toolkit."""

from .dataset_io import ClassMap, KittiSequence, TaskLabels, read_poses, read_scan, remap_labels
from .projection import ProjConfig, RangeImage, RangeProjector, back_project, label_image, project
from .residual import (DEFAULT_DISTRIBUTION, ResidualStack, StrideDistribution,
                       build_training_input, compute_residual, residual_stack, sample_stride,
                       transform_scan)
from .blocks import FusionParams, mga_fuse, pixel_shuffle, sapl
from .siem import SgbParams, VoxelGrid, devoxelize, sgb_forward, siem_refine, voxelize
from .losses import LossReport, lovasz_softmax, total_loss, weighted_ce
from .metrics import ConfusionMatrix, evaluate_sequence, iou
from .synth import ResidualThresholdSegmenter, SceneConfig, baseline_segment, gen_sequence

__version__ = "0.1.0"
