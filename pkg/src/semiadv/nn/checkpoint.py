"""Model checkpoints as ``.npz`` archives.

Each parameter is stored under its layer-qualified name (``"2.dense.weight"``)
with its shape and raw float64 values, so a save/load cycle is bit-exact. The
architecture travels alongside as JSON under the reserved ``__config__`` key.
"""

import json

import numpy as np

from semiadv.errors import ContractError
from semiadv.nn.layers import Model

_CONFIG_KEY = "__config__"


def save(model, path):
    arrays = dict(model.state_dict())
    arrays[_CONFIG_KEY] = np.array(json.dumps(model.config()))
    with open(path, "wb") as f:
        np.savez(f, **arrays)
    return path


def load(path):
    with np.load(path, allow_pickle=False) as archive:
        if _CONFIG_KEY not in archive.files:
            raise ContractError(f"{path}: not a model checkpoint (missing {_CONFIG_KEY})")
        config = json.loads(str(archive[_CONFIG_KEY]))
        state = {k: archive[k] for k in archive.files if k != _CONFIG_KEY}
    model = Model.from_config(config)
    model.load_state_dict(state)
    return model
