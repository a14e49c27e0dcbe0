"""Similarity and stability of analysis-pipeline outputs.

Per-group Pearson graphs over pipeline statistic maps, Louvain communities,
cross-group co-occurrence stability and FDR-based community features.
"""

__version__ = "0.1.0"

from .communities import (Partition, WeightedGraph, adjusted_rand_index, brute_force_best_partition,
                          from_similarity, louvain, modularity)
from .dataset import DatasetIndex, PipelineId, parse_pipeline_id, read_manifest
from .features import count_active, fdr_bh, mean_map, roi_mask, threshold_map, z_to_p
from .resample import (MaskedVector, TargetGrid, apply_mask, intersect_masks, resample_continuous,
                       resample_nearest)
from .simmatrix import SimilarityMatrix, group_similarity, mean_similarity, pearson
from .stability import (CoOccurrenceMatrix, StabilityReport, cooccurrence, cross_contrast, global_communities,
                        per_group_partitions, stability_flags)
from .volume import Volume, read_volume, write_volume
