"""Binary tensor interchange.

One ASCII header line ``ptura-tensor <d1> <d2> ... <dN>`` followed by the
entries as little-endian complex64, first index varying fastest.
"""
import os

import numpy as np

MAGIC = "ptura-tensor"


def write_tensor(path, Y):
    Y = np.asarray(Y)
    header = " ".join([MAGIC] + [str(d) for d in Y.shape]) + "\n"
    data = np.asarray(Y, dtype="<c8").ravel(order="F").tobytes()
    tmp = f"{path}.{os.getpid()}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(data)
    os.replace(tmp, path)


def read_tensor(path):
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii", errors="replace").split()
        if not header or header[0] != MAGIC:
            raise ValueError(f"{path}: not a tensor file")
        try:
            shape = tuple(int(d) for d in header[1:])
        except ValueError as exc:
            raise ValueError(f"{path}: bad shape header") from exc
        data = np.frombuffer(fh.read(), dtype="<c8")
    if data.size != int(np.prod(shape)):
        raise ValueError(f"{path}: expected {int(np.prod(shape))} entries, found {data.size}")
    return data.reshape(shape, order="F").astype(np.complex128)
