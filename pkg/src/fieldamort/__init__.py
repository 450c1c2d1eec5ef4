"""Amortized magnetostatic field inference."""

from .oracle import Source, Source1D, SourceCollection, Box, label_points, relative_errors  # noqa: F401
from .models import AmortizedModel, ModelKind, OracleReplay, build_model, infer_collection, load_model, save_model  # noqa: F401
from .data import DataGenConfig, Dataset, generate  # noqa: F401
from .training import TrainConfig, train, evaluate  # noqa: F401
