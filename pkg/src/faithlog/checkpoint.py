"""Named-array checkpoints (``.npz`` layout, byte-reproducible).

The archive holds one ``.npy`` member per parameter plus ``__meta__``, a JSON
header with the model dimensions, seed and run id. Member timestamps are fixed
so identical parameters always give identical files; ``numpy.load`` reads the
result directly.
"""

from __future__ import annotations

import json
import zipfile
from io import BytesIO

import numpy as np
import torch

from faithlog.errors import CheckpointError
from faithlog.model import DTYPE, FaithLogModel, ModelConfig

META = "__meta__"
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _member(zf, name, array):
    buf = BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(array), allow_pickle=False)
    info = zipfile.ZipInfo(name + ".npy", date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, buf.getvalue())


def write_archive(path, arrays: dict, meta: dict) -> None:
    with zipfile.ZipFile(path, "w") as zf:
        _member(zf, META, np.array([json.dumps(meta, sort_keys=True)]))
        for name in sorted(arrays):
            _member(zf, name, arrays[name])


def read_archive(path) -> tuple:
    try:
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data[META][0]))
            arrays = {k: data[k] for k in data.files if k != META}
    except (OSError, ValueError, KeyError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return meta, arrays


def model_meta(config: ModelConfig, run_id: str = "") -> dict:
    return {
        "kind": "faithlog",
        "d_model": config.d_model,
        "n_heads": config.n_heads,
        "n_layers": config.n_layers,
        "hidden": config.hidden,
        "negative_pathway": config.negative_pathway,
        "seed": config.seed,
        "temperature": config.temperature,
        "run_id": run_id,
    }


def save_checkpoint(model: FaithLogModel, path, run_id: str = "", extra: dict = None) -> None:
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    meta = model_meta(model.config, run_id)
    if extra:
        meta.update(extra)
    write_archive(path, arrays, meta)


def save_oracle_checkpoint(path, run_id: str = "") -> None:
    """A parameter-free stub that evaluates with the ground-truth oracle."""
    write_archive(path, {}, {"kind": "oracle", "run_id": run_id})


def load_checkpoint(path, expected: ModelConfig = None):
    """Return ``(model_or_oracle, meta)``.

    When ``expected`` is given, its dimensions must match the header; array
    shapes are always checked against the header's architecture.
    """
    meta, arrays = read_archive(path)
    if meta.get("kind") == "oracle":
        from faithlog.evaluation import OracleDetector

        return OracleDetector(), meta
    try:
        config = ModelConfig(
            d_model=meta["d_model"], n_heads=meta["n_heads"], n_layers=meta["n_layers"],
            hidden=meta["hidden"], negative_pathway=meta["negative_pathway"], seed=meta["seed"],
            temperature=meta.get("temperature", 1.0),
        )
    except KeyError as exc:
        raise CheckpointError(f"checkpoint header lacks {exc.args[0]!r}") from None
    if expected is not None:
        for field in ("d_model", "n_heads", "n_layers", "negative_pathway"):
            if getattr(expected, field) != getattr(config, field):
                raise CheckpointError(
                    f"{field}: checkpoint has {getattr(config, field)}, config has {getattr(expected, field)}"
                )
    model = FaithLogModel(config)
    state = model.state_dict()
    if set(state) != set(arrays):
        missing = sorted(set(state) - set(arrays))
        unexpected = sorted(set(arrays) - set(state))
        raise CheckpointError(f"parameter names differ (missing {missing}, unexpected {unexpected})")
    for name, tensor in state.items():
        if tuple(arrays[name].shape) != tuple(tensor.shape):
            raise CheckpointError(f"{name}: shape {arrays[name].shape} != expected {tuple(tensor.shape)}")
    model.load_state_dict({k: torch.as_tensor(v, dtype=DTYPE) for k, v in arrays.items()})
    model.eval()
    return model, meta
