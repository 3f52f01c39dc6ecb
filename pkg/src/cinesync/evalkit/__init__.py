"""Retrieval and reconstruction metrics, and the metric report."""
from .metrics import (PSNR_CAP, frechet_distance, nway_topk, nway_topk_per_query, psnr, ssim,
                      temporal_consistency, video_ssim)
from .report import (LEGAL, PER_CLIP, TABLE2_COLUMNS, TABLE3_COLUMNS, MetricReport, ReportError, evaluate_clips,
                     table_csv, video_descriptor)
