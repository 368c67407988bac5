from __future__ import annotations

from importlib import import_module

from .core import *
from .dataset import Dataset, load_dataset
from .evaluation import evaluate, recommend
from .model import TemporalGraphTransformer
from .training import train

__all__ = [
    "Dataset",
    "evaluate",
    "load_dataset",
    "recommend",
    "TemporalGraphTransformer",
    "train",
]


"""Fetch the names defined in the __all__ of each sub-module.

Import to the tgt_recsys name space.
Make sure each added submodule has the respective definition:

    - `__all__ = ["name0", "name1", ...]`

Furthermore, add the submodule to the list below to automatically build
the __all__ of the tgt_recsys namespace. Make sure to keep alphabetical ordering.
"""

submodules = [
    ".checkpoint",
    ".config",
    ".core",
    ".data",
    ".propagation",
    ".synthetic",
    ".temporal",
    ".transformer",
]

for submodule in submodules:
    __all_submodule__ = getattr(import_module(submodule, package="tgt_recsys"), "__all__")
    for name in __all_submodule__:
        globals()[name] = getattr(import_module(submodule, package="tgt_recsys"), name)
    __all__ += __all_submodule__
