"""Multi-scale multi-column skip-connected CNN, python face.

The compiled module carries everything; this package just re-exports it.
"""

from ._core import (
    BlankImageError,
    Network,
    SvmModel,
    __version__,
    augment,
    evaluate,
    load_svm,
    preprocess,
    read_descriptors,
    run_experiment,
    svm_fit,
    train,
    tune_svm,
    write_descriptors,
)

__all__ = [
    "BlankImageError",
    "Network",
    "SvmModel",
    "__version__",
    "augment",
    "evaluate",
    "load_svm",
    "preprocess",
    "read_descriptors",
    "run_experiment",
    "svm_fit",
    "train",
    "tune_svm",
    "write_descriptors",
]
