"""Binary graph dumps.

Layout (little-endian, in file order):

- magic ``b"DWGRAPH1"``
- int64 header: dim, level, n_vertices, n_regular, n_half_edges,
  star_id (-1 when absent), region_blob_bytes
- float64: window_radius
- region blob: UTF-8 JSON of the region config (``region_blob_bytes``
  bytes; absent region stores zero bytes)
- coords: int32, shape (n_regular, dim), C order
- indptr: int64, length n_vertices + 1
- indices: int32, length n_half_edges

Embedding the region config keeps a dump self-contained: the loader
rebuilds the geometry, so derived quantities (vertex measure, distance
to the region, quotient metric) are available exactly as for a freshly
built graph.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .geometry import region_from_config
from .lattice import DarnedLattice

MAGIC = b"DWGRAPH1"


class GraphFormatError(ValueError):
    """The file is not a recognizable graph dump."""


def save_graph(g: DarnedLattice, path) -> None:
    header = np.array(
        [
            g.dim,
            g.level,
            g.n_vertices,
            g.n_regular,
            len(g.indices),
            g.star_id if g.has_star else -1,
            0,  # patched below once the blob length is known
        ],
        dtype="<i8",
    )
    blob = b""
    if g.region is not None:
        blob = json.dumps(g.region.to_config(), sort_keys=True).encode()
    header[6] = len(blob)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(header.tobytes())
        fh.write(np.array(g.window_radius, dtype="<f8").tobytes())
        fh.write(blob)
        fh.write(np.ascontiguousarray(g.coords, dtype="<i4").tobytes())
        fh.write(np.ascontiguousarray(g.indptr, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(g.indices, dtype="<i4").tobytes())


def load_graph(path) -> DarnedLattice:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 7 * 8 + 8 or raw[: len(MAGIC)] != MAGIC:
        raise GraphFormatError(f"{path}: not a graph dump")
    off = len(MAGIC)
    header = np.frombuffer(raw, dtype="<i8", count=7, offset=off)
    off += 7 * 8
    dim, level, n_vertices, n_regular, n_half, star_id, blob_len = (int(x) for x in header)
    if min(dim, level, n_vertices, n_regular, n_half, blob_len) < 0:
        raise GraphFormatError(f"{path}: negative header field")
    expected = off + 8 + blob_len + 4 * n_regular * dim + 8 * (n_vertices + 1) + 4 * n_half
    if len(raw) != expected:
        raise GraphFormatError(
            f"{path}: payload is {len(raw)} bytes, header implies {expected}"
        )
    window = float(np.frombuffer(raw, dtype="<f8", count=1, offset=off)[0])
    off += 8
    blob = raw[off : off + blob_len]
    off += blob_len
    region = region_from_config(json.loads(blob.decode())) if blob_len else None
    coords = np.frombuffer(raw, dtype="<i4", count=n_regular * dim, offset=off)
    off += coords.nbytes
    indptr = np.frombuffer(raw, dtype="<i8", count=n_vertices + 1, offset=off)
    off += indptr.nbytes
    indices = np.frombuffer(raw, dtype="<i4", count=n_half, offset=off)
    if indptr[0] != 0 or indptr[-1] != n_half:
        raise GraphFormatError(f"{path}: inconsistent adjacency index")
    return DarnedLattice(
        dim=dim,
        level=level,
        window_radius=window,
        region=region,
        coords=coords.reshape(n_regular, dim).copy(),
        indptr=indptr.astype(np.int64),
        indices=indices.astype(np.int32),
        star_id=None if star_id < 0 else star_id,
    )
