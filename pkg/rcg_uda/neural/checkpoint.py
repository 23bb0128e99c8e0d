"""Checkpoint container: named float64 blocks in an ``.npz``-compatible zip.

Besides the parameter blocks the archive holds ``__format_version__`` (a
1-element int array) and ``__meta__`` (a 1-element string array holding JSON). Entry timestamps are
fixed, so saving the same blocks twice yields identical bytes and
``numpy.load`` can read the file directly.
"""

import io
import json
import logging
import zipfile
from collections.abc import Mapping
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import NDArray

from rcg_uda.config import FORMAT_VERSION
from rcg_uda.exception import CheckpointError

logger = logging.getLogger(__name__)

VERSION_KEY = "__format_version__"
META_KEY = "__meta__"
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _entry(archive: zipfile.ZipFile, name: str, array: NDArray[Any]) -> None:
    buffer = io.BytesIO()
    np.lib.format.write_array(buffer, np.asarray(array, order="C"), allow_pickle=False)
    info = zipfile.ZipInfo(f"{name}.npy", date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    archive.writestr(info, buffer.getvalue())


def save_checkpoint(
    path: str | Path,
    blocks: Mapping[str, NDArray[np.float64]],
    meta: Mapping[str, Any] | None = None,
) -> None:
    path = Path(path)
    reserved = {VERSION_KEY, META_KEY} & set(blocks)
    if reserved:
        raise CheckpointError(str(path), f"reserved block names {sorted(reserved)}")
    try:
        with zipfile.ZipFile(path, "w") as archive:
            _entry(archive, VERSION_KEY, np.array([FORMAT_VERSION], dtype=np.int64))
            _entry(archive, META_KEY, np.array([json.dumps(dict(meta or {}), sort_keys=True)]))
            for name in sorted(blocks):
                _entry(archive, name, np.asarray(blocks[name], dtype=np.float64))
    except OSError as e:
        raise CheckpointError(str(path), f"cannot write checkpoint: {e}") from e
    logger.info("Saved checkpoint %s (%d blocks)", path, len(blocks))


def load_checkpoint(
    path: str | Path,
) -> tuple[dict[str, NDArray[np.float64]], dict[str, Any]]:
    """Return ``(blocks, meta)``.

    Raises:
        CheckpointError: Unreadable file, missing header or unsupported version.
    """
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as archive:
            contents = {name: archive[name] for name in archive.files}
    except (OSError, ValueError, zipfile.BadZipFile) as e:
        raise CheckpointError(str(path), f"cannot read checkpoint: {e}") from e
    if VERSION_KEY not in contents or META_KEY not in contents:
        raise CheckpointError(str(path), "missing checkpoint header")
    version = int(contents.pop(VERSION_KEY)[0])
    if version != FORMAT_VERSION:
        raise CheckpointError(
            str(path), f"unsupported format version {version}, expected {FORMAT_VERSION}"
        )
    try:
        meta = json.loads(str(contents.pop(META_KEY).reshape(-1)[0]))
    except (IndexError, json.JSONDecodeError) as e:
        raise CheckpointError(str(path), f"malformed checkpoint metadata: {e}") from e
    return contents, meta
