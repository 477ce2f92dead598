"""
Evaluation module for pathmaps.

This module provides the NMSE metric, evaluation reports, structural
ablations, the generalization protocols and plot emission.
"""

from .exceptions import (
    EvaluationError,
    DegenerateDenominatorError,
    EmptySplitError,
    TaskMismatchError,
    ContradictoryFlagsError
)
from .metrics import DENOMINATOR_PREDICTION, DENOMINATOR_TARGET, nmse
from .report import REPORT_COLUMNS, AVERAGING, EvalRow, EvalReport, read_report, run_eval
from .ablation import BASE_VARIANT, AblationFlags, ablated_model, ablate, ablation_table
from .protocols import (
    HOLDOUT_AXES,
    PRETRAINED,
    SCRATCH,
    FewShotPoint,
    ScalingPoint,
    AddParamResult,
    in_distribution_split,
    holdout_split,
    zero_shot,
    few_shot_sweep,
    median_curve,
    full_retrain,
    topn_report,
    topn_summary,
    add_param,
    scaling_sweep
)
from .plots import emit_plots, plot_report, plot_few_shot, plot_topn, plot_curves

__all__ = [
    'EvaluationError',
    'DegenerateDenominatorError',
    'EmptySplitError',
    'TaskMismatchError',
    'ContradictoryFlagsError',
    'DENOMINATOR_PREDICTION',
    'DENOMINATOR_TARGET',
    'nmse',
    'REPORT_COLUMNS',
    'AVERAGING',
    'EvalRow',
    'EvalReport',
    'read_report',
    'run_eval',
    'BASE_VARIANT',
    'AblationFlags',
    'ablated_model',
    'ablate',
    'ablation_table',
    'HOLDOUT_AXES',
    'PRETRAINED',
    'SCRATCH',
    'FewShotPoint',
    'ScalingPoint',
    'AddParamResult',
    'in_distribution_split',
    'holdout_split',
    'zero_shot',
    'few_shot_sweep',
    'median_curve',
    'full_retrain',
    'topn_report',
    'topn_summary',
    'add_param',
    'scaling_sweep',
    'emit_plots',
    'plot_report',
    'plot_few_shot',
    'plot_topn',
    'plot_curves'
]
