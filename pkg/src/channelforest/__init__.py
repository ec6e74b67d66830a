"""Boosted decision forests over image feature channels.

Sliding-window detection with shrinkage real-AdaBoost forests on channel
stacks (hand-crafted or precomputed network activations), multi-detector
score-averaging ensembles, pixel-label score fusion, and benchmark metrics
(log-average miss rate, interpolated AP).
"""

__version__ = "0.1.0"

from .boost import (BoostedForest, FeatureIndex, SampleSet, TrainConfig,
                    collect_samples, feature_usage_heatmap, find_best_split,
                    score_grid, score_window, train_forest)
from .channels import (ChannelStack, FilterBank, Image, PyramidConfig,
                       PyramidLevel, apply_filter_bank, build_pyramid,
                       compute_acf_channels, concat_stacks,
                       default_checkerboard_bank, load_filter_bank)
from .detect import (CalibrationResult, DetectConfig, calibrate_threshold,
                     detect, nms, propose)
from .ensemble import (EnsembleConfig, combine_scores, fuse_external_scores,
                       map_box_to_cells, rescore_proposals, znorm)
from .evaluation import (EvalCriteria, EvalCurve, average_precision,
                         evaluate_detections, filter_ground_truth, log_avg_mr,
                         match_detections, mr_curve)
from .segfuse import (ScoreMap, WeightMask, fuse_scores, learn_mask,
                      seg_score)
from .tensorio import (Detection, GroundTruthBox, TensorFormatError,
                       read_annotations, read_detections, read_forest,
                       read_tensor, write_annotations, write_detections,
                       write_forest, write_tensor)
