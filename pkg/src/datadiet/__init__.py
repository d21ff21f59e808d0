"""Data-centric curation toolkit for PET/CT lesion-segmentation datasets."""
from .cohort import CohortManifest, SampleRecord, Tracer, cohort_stats, histogram, scan_dataset
from .diet import DietPlan, prune_percentile, rank_psma_by_loss, verify_diet_health_claim
from .distcompare import (
    DistributionSummary,
    QQSeries,
    compare_cohort_metric,
    log_percentile_qq,
    quantile,
)
from .labeling import ComponentLabeling, connected_components
from .metrics import (
    MetricReport,
    dice_ce_loss,
    dice_score,
    evaluate_sample,
    false_negative_volume,
    false_positive_volume,
)
from .nifti import load_nifti, write_nifti
from .preprocess import PreprocessConfig, normalize_intensity, resample
from .volume import Kind, VoxelGrid, binary_mask, reorient_to_las

__version__ = "0.1.0"
