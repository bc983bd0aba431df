"""Crystalline-domain detection in HRTEM micrographs.

A skeleton-graph pipeline turns a micrograph into per-crystal structural
features (d-spacing, orientation, shape); Gaussian-process Bayesian
optimization tunes the pipeline's 13 parameters against annotated ground
truth; a Wasserstein-distance criterion decides when enough data has been
collected.
"""
from .bayesopt import (GPModel, SearchSpace, expected_improvement,
                       fit_hyperparameters, gp_posterior, iou, kernel_se,
                       optimize, propose_next, tunable_search_space)
from .bones import EllipseDescriptor, filter_aspect, fit_ellipse
from .dspacing import (DSpacingResult, bandpass_peak, evaluate_dspacing,
                       largest_inscribed_square, power_spectrum)
from .graph import (BoneGraph, CorrelationRecord, CrystalRecord, CrystalRegion,
                    angdiff_180, build_adjacency, connected_components,
                    crystal_features, filter_clusters, pair_correlations,
                    region_of)
from .imaging import (BinaryMask, GrayImage, equalize_histogram, gaussian_blur,
                      load_grayscale, morph_close_open, otsu_threshold,
                      preprocess)
from .params import ParameterSet, default_parameters
from .pipeline import (ImageResult, RunConfig, load_annotations, parse_config,
                       process_batch, process_image, rasterize_annotations)
from .skeleton import (Backbone, Bone, Skeleton, break_branches, break_uniform,
                       filter_short_backbones, skeletonize)
from .sufficiency import (StoppingDecision, SufficiencyCurve,
                          full_vs_one_batch_less, increment_analysis,
                          paired_t_test, stopping_decision, wasserstein_1d)
from .synth import SyntheticImage, fringe_image, write_dataset

__version__ = "0.1.0"
