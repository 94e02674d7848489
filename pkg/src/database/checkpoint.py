"""Model checkpoint files (.npz archive with a format-version header)"""
import json
import logging
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from ..constants import CHECKPOINT_FORMAT_VERSION
from ..core.network import BnLayerStats, BnStats, MlpSpec, Network, ParamVector
from ..exceptions import InputError

logger = logging.getLogger(__name__)


def save_checkpoint(path: Union[str, Path], network: Network, metadata: Optional[dict] = None) -> Path:
    """Write spec, parameters, BN statistics and metadata

    Args:
        path: Target file; ``.npz`` is appended when missing
        network: Model to store
        metadata: JSON-serializable block (decay, period, bn_policy, run id, ...)

    Returns:
        Path actually written
    """
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_suffix(".npz")
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {
        "format_version": np.array(CHECKPOINT_FORMAT_VERSION),
        "layer_widths": np.array(network.spec.layer_widths, dtype=np.int64),
        "use_batchnorm": np.array(network.spec.use_batchnorm, dtype=bool),
        "params": network.params.values,
        "bn_momentum": np.array(network.bn.momentum),
        "bn_epsilon": np.array(network.bn.epsilon),
        "metadata": np.array(json.dumps(metadata or {}, sort_keys=True)),
    }
    for i, layer in enumerate(network.bn.layers):
        arrays[f"bn_mean_{i}"] = layer.running_mean
        arrays[f"bn_var_{i}"] = layer.running_var
    with open(path, "wb") as f:
        np.savez(f, **arrays)
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[Network, dict]:
    """Read a checkpoint written by save_checkpoint"""
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as archive:
            version = int(archive["format_version"])
            if version != CHECKPOINT_FORMAT_VERSION:
                raise InputError(f"{path}: unsupported checkpoint format {version}")
            widths = tuple(int(w) for w in archive["layer_widths"])
            spec = MlpSpec(widths, tuple(bool(b) for b in archive["use_batchnorm"]), widths[-1])
            params = ParamVector(archive["params"].copy(), spec.layout())
            layers = [
                BnLayerStats(archive[f"bn_mean_{i}"].copy(), archive[f"bn_var_{i}"].copy())
                for i in range(len(spec.bn_widths))
            ]
            bn = BnStats(layers, float(archive["bn_momentum"]), float(archive["bn_epsilon"]))
            metadata = json.loads(str(archive["metadata"]))
    except (OSError, KeyError, ValueError) as e:
        if isinstance(e, InputError):
            raise
        logger.error(f"Failed to read checkpoint {path}: {e}")
        raise InputError(f"{path}: unreadable checkpoint ({e})") from e
    return Network(spec, params, bn), metadata
