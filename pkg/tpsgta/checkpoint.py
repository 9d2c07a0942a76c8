"""
Checkpoint archives: a zip of little-endian float64 .npy members, one per
parameter and buffer, plus metadata.json holding the layer plan and seed.
Member timestamps are fixed so identical models give identical bytes.
"""
import io
import json
import logging
import zipfile
import zlib
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from .errors import CheckpointError, CompositionError
from .models import Model, ModelSpec

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
_MEMBER_TIME = (1980, 1, 1, 0, 0, 0)
_METADATA = "metadata.json"


def _member(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=_MEMBER_TIME)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    return info


def _encode(array: np.ndarray) -> bytes:
    buffer = io.BytesIO()
    np.save(buffer, np.ascontiguousarray(array, dtype="<f8"), allow_pickle=False)
    return buffer.getvalue()


def save_checkpoint(model: Model, path) -> Path:
    """
    Writes a model to a checkpoint archive.

    Parameters:
    model: (Model) built from a ModelSpec
    path: (str or Path) destination file; parent directories are created

    Returns:
    Path of the written archive
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    params = list(model.named_parameters())
    buffers = list(model.named_buffers())
    metadata = {
        "format": FORMAT_VERSION,
        "spec": model.spec.model_dump(mode="json"),
        "parameters": [name for name, _ in params],
        "buffers": [name for name, _ in buffers],
    }
    with zipfile.ZipFile(path, "w") as archive:
        archive.writestr(_member(_METADATA), json.dumps(metadata, indent=2, sort_keys=True))
        for name, param in params:
            archive.writestr(_member(f"parameters/{name}.npy"), _encode(param.data))
        for name, array in buffers:
            archive.writestr(_member(f"buffers/{name}.npy"), _encode(array))
    logger.info("Wrote checkpoint %s (%d parameter arrays)", path, len(params))
    return path


def _decode(archive: zipfile.ZipFile, member: str, shape) -> np.ndarray:
    try:
        raw = archive.read(member)
    except KeyError:
        raise CheckpointError(f"checkpoint is missing member {member}")
    try:
        array = np.load(io.BytesIO(raw), allow_pickle=False)
    except ValueError as e:
        raise CheckpointError(f"checkpoint member {member} is not a valid array: {e}")
    if array.shape != tuple(shape):
        raise CheckpointError(f"checkpoint member {member} has shape {array.shape}, expected {tuple(shape)}")
    return array.astype(np.float64)


def load_checkpoint(path) -> Model:
    """
    Rebuilds a model from a checkpoint archive.

    Raises:
    CheckpointError if the file is missing, not a valid archive, fails its
        checksums or does not match the stored layer plan
    """
    path = Path(path)
    try:
        with zipfile.ZipFile(path) as archive:
            metadata = json.loads(archive.read(_METADATA))
            if metadata.get("format") != FORMAT_VERSION:
                raise CheckpointError(f"unsupported checkpoint format {metadata.get('format')!r}")
            model = Model(ModelSpec.model_validate(metadata["spec"]))
            for name, param in model.named_parameters():
                param.data = _decode(archive, f"parameters/{name}.npy", param.shape)
            for name, array in model.named_buffers():
                array[...] = _decode(archive, f"buffers/{name}.npy", array.shape)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint {path} does not exist")
    except (
        zipfile.BadZipFile,
        zlib.error,
        EOFError,
        KeyError,
        json.JSONDecodeError,
        ValidationError,
        CompositionError,
        OSError,
    ) as e:
        raise CheckpointError(f"checkpoint {path} is unreadable: {e}")
    return model
