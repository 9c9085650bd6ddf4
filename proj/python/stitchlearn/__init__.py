# Copyright 2026 The StitchLearn Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Python access to the stitchlearn core.

Config keys are the flat dotted names of the INI files, e.g.
{"data.num_classes": "6", "train.epochs": "2"}. Values may be given as
numbers; they are converted to strings before parsing.
"""

from . import _core
from ._core import (
    ConfigError,
    DivergedError,
    average_precision,
    bce,
    config_help,
    focal,
    label_union,
    pseudo_label,
    read_config,
    transition_matrix,
)

__all__ = [
    "ConfigError",
    "DivergedError",
    "average_precision",
    "bce",
    "config_help",
    "dataset_summary",
    "focal",
    "label_union",
    "pseudo_label",
    "read_config",
    "run_ablation",
    "run_experiment",
    "transition_matrix",
]


def _keys(keys):
    out = {}
    for k, v in (keys or {}).items():
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, (list, tuple)):
            v = ",".join(str(x) for x in v)
        out[str(k)] = str(v)
    return out


def dataset_summary(keys=None, gamma=0.5, seed=0):
    return _core.dataset_summary(_keys(keys), gamma, seed)


def run_experiment(keys):
    return _core.run_experiment(_keys(keys))


def run_ablation(kind, keys):
    return _core.run_ablation(kind, _keys(keys))
