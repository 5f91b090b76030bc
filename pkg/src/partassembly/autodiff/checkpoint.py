"""Parameter checkpoints: named float64 arrays in one flat binary container.

Layout: a UTF-8 text manifest terminated by an ``END`` line, followed by the
raw little-endian float64 payload. Manifest lines:

    PARTASM-CKPT 1
    <name> <dim0>x<dim1>... <byte offset into payload>
    ...
    END

Array names must not contain whitespace; ``/`` is the conventional scope
separator.
"""

import numpy as np

MAGIC = "PARTASM-CKPT"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def _shape_str(shape):
    return "x".join(str(d) for d in shape) if shape else "scalar"


def _parse_shape(text):
    if text == "scalar":
        return ()
    return tuple(int(d) for d in text.split("x"))


def save_arrays(path, arrays):
    """Write an ordered mapping name -> ndarray to ``path``."""
    lines = [f"{MAGIC} {VERSION}"]
    payload = bytearray()
    for name, arr in arrays.items():
        if any(ch.isspace() for ch in name):
            raise CheckpointError(f"array name {name!r} contains whitespace")
        a = np.asarray(arr, dtype=np.float64)
        lines.append(f"{name} {_shape_str(a.shape)} {len(payload)}")
        payload.extend(a.tobytes(order="C"))
    lines.append("END\n")
    with open(path, "wb") as fh:
        fh.write("\n".join(lines).encode("utf-8"))
        fh.write(bytes(payload))


def load_arrays(path):
    """Read a checkpoint back into an ordered dict of float64 arrays."""
    with open(path, "rb") as fh:
        blob = fh.read()
    marker = b"\nEND\n"
    cut = blob.find(marker)
    if cut < 0:
        raise CheckpointError(f"{path}: no END marker found")
    header = blob[:cut].decode("utf-8").splitlines()
    payload = blob[cut + len(marker):]
    if not header or not header[0].startswith(MAGIC):
        raise CheckpointError(f"{path}: bad magic")
    version = int(header[0].split()[1])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    out = {}
    for line in header[1:]:
        name, shape_text, offset_text = line.split()
        shape = _parse_shape(shape_text)
        offset = int(offset_text)
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        out[name] = arr.reshape(shape).copy()
    return out
