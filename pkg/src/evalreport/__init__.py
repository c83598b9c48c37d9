from .metrics import ConfusionMatrix, accuracy, confusion, mean_confidence
from .report import compare_runs, dump_transforms, emit_report, render_table, summarize

__all__ = [
    'ConfusionMatrix',
    'accuracy',
    'confusion',
    'mean_confidence',
    'compare_runs',
    'dump_transforms',
    'emit_report',
    'render_table',
    'summarize',
]
