"""Feature-distributed SVRG for sparse linear classification, with serial
and instance-distributed baselines and exact communication accounting."""

from .model import LossKind, RegKind, Regularizer, full_gradient, full_objective
from .data import (
    LabeledDataset,
    parse_libsvm,
    partition_by_feature,
    partition_by_instance,
)
from .runtime import IndexStream, RunConfig, TraceRecord
from .serial import svrg_run, solve_reference
from .fd import fd_svrg_run
from .ps import AsyncSchedule, asysvrg_run, synsvrg_run
from .dsvrg import dsvrg_style_run
from .synthetic import make_synthetic

__all__ = [
    "AsyncSchedule",
    "IndexStream",
    "LabeledDataset",
    "LossKind",
    "RegKind",
    "Regularizer",
    "RunConfig",
    "TraceRecord",
    "asysvrg_run",
    "dsvrg_style_run",
    "fd_svrg_run",
    "full_gradient",
    "full_objective",
    "make_synthetic",
    "parse_libsvm",
    "partition_by_feature",
    "partition_by_instance",
    "solve_reference",
    "svrg_run",
    "synsvrg_run",
]
