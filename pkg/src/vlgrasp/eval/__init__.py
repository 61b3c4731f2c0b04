"""Metrics, dataset splits, the end-to-end runner and the filter ablation."""

from .ablation import AblationReport, SuiteConfig, run_ablation, suite_item
from .metrics import iou, mask_iou, miou, prec_at
from .pipeline import RunRecord, run_pipeline
from .splits import SplitSpec, make_splits, verify_splits

__all__ = ["AblationReport", "RunRecord", "SplitSpec", "SuiteConfig", "iou", "make_splits", "mask_iou",
           "miou", "prec_at", "run_ablation", "run_pipeline", "suite_item", "verify_splits"]
