"""Interpretability benchmark for multivariate time series classifiers."""

from itb._core import (
    FORMAT_VERSION,
    BuiltinModel,
    ConfigError,
    Dataset,
    DegenerateReference,
    Error,
    ExternalScorerFailure,
    FormatVersionMismatch,
    IoFailure,
    NoPositiveRelevance,
    PythonScorer,
    RelevanceContainer,
    Scorer,
    ShapeMismatch,
    __version__,
    attribute,
    check_compatible,
    directory_checksum,
    generate_dataset,
    hmi,
    occlude,
    positive_set,
    read_dataset,
    read_relevance,
    run_cli,
    s_e,
    tic,
    write_dataset,
    write_relevance,
)
from itb.protocol import serve_stdio, serve_tcp

__all__ = [name for name in dir() if not name.startswith("_")]
