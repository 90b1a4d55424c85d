"""Sparse SDPA text format for cross-checking instances with external solvers.

The LMI form used by the format is ``sum_i y_i F_i - F_0 >= 0`` per block,
which matches a compiled instance directly (our affine maps are
``F0 + G v``).  Equality rows have no native encoding, so they are written
as one diagonal block of paired one-sided inequalities, the standard
workaround.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .soscompile import PSDBlock, SDPInstance


def write_sdpa(inst: SDPInstance, path) -> Path:
    """Write an instance as a sparse SDPA (.dat-s) file."""
    path = Path(path)
    lines = []
    lines.append(f"* polystab SDP export: nv={inst.nv} blocks={len(inst.blocks)} "
                 f"eq={inst.n_eq}")
    lines.append(f"{inst.nv}")
    nblocks = len(inst.blocks) + (1 if inst.n_eq else 0)
    lines.append(f"{nblocks}")
    sizes = [str(b.size) for b in inst.blocks]
    if inst.n_eq:
        sizes.append(str(-2 * inst.n_eq))  # negative: diagonal block
    lines.append(" ".join(sizes))
    lines.append(" ".join(repr(float(ci)) for ci in inst.c))

    entries: list[str] = []

    def emit(matno: int, blkno: int, i: int, j: int, val: float):
        if val != 0.0 and i <= j:
            entries.append(f"{matno} {blkno} {i + 1} {j + 1} {val!r}")

    for bi, blk in enumerate(inst.blocks, start=1):
        r = blk.size
        for i in range(r):
            for j in range(i, r):
                emit(0, bi, i, j, -blk.F0[i, j])  # SDPA subtracts F0
        Gcoo = blk.G.tocoo()
        for pos, col, val in zip(Gcoo.row, Gcoo.col, Gcoo.data):
            i, j = divmod(int(pos), r)
            emit(int(col) + 1, bi, i, j, float(val))

    if inst.n_eq:
        blkno = len(inst.blocks) + 1
        Acoo = inst.A.tocoo()
        ne = inst.n_eq
        for row, col, val in zip(Acoo.row, Acoo.col, Acoo.data):
            emit(int(col) + 1, blkno, int(row), int(row), float(val))
            emit(int(col) + 1, blkno, ne + int(row), ne + int(row), -float(val))
        for row, bv in enumerate(inst.b):
            emit(0, blkno, row, row, float(bv))
            emit(0, blkno, ne + row, ne + row, -float(bv))

    lines.extend(entries)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_sdpa(path) -> SDPInstance:
    """Parse a sparse SDPA file back into an instance.

    Diagonal (negative-size) blocks come back as PSD blocks with diagonal
    structure; equality pairs are not reassembled.
    """
    path = Path(path)
    tokens: list[str] = []
    header: list[str] = []
    body: list[str] = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith(("*", '"')):
            continue
        (header if len(header) < 4 else body).append(line)
    if len(header) < 4:
        raise ValueError(f"{path}: truncated SDPA header")

    nv = int(header[0].split()[0])
    nblocks = int(header[1].split()[0])
    sizes = [int(tok) for tok in header[2].replace(",", " ").split()]
    if len(sizes) != nblocks:
        raise ValueError(f"{path}: block count mismatch")
    c = np.array([float(tok) for tok in header[3].replace(",", " ").split()])
    if c.size != nv:
        raise ValueError(f"{path}: objective length mismatch")

    dims = [abs(s) for s in sizes]
    F0s = [np.zeros((d, d)) for d in dims]
    coords: list[dict[str, list]] = [{"r": [], "c": [], "v": []} for _ in dims]

    for line in body:
        toks = line.replace(",", " ").split()
        matno, blkno, i, j = (int(toks[0]), int(toks[1]), int(toks[2]) - 1,
                              int(toks[3]) - 1)
        val = float(toks[4])
        d = dims[blkno - 1]
        if matno == 0:
            F0s[blkno - 1][i, j] = -val
            F0s[blkno - 1][j, i] = -val
        else:
            cc = coords[blkno - 1]
            cc["r"].append(i * d + j)
            cc["c"].append(matno - 1)
            cc["v"].append(val)
            if i != j:
                cc["r"].append(j * d + i)
                cc["c"].append(matno - 1)
                cc["v"].append(val)

    blocks = []
    for k, d in enumerate(dims):
        G = sp.coo_matrix((coords[k]["v"], (coords[k]["r"], coords[k]["c"])),
                          shape=(d * d, nv)).tocsr()
        blocks.append(PSDBlock(name=f"sdpa:{k}", size=d, G=G, F0=F0s[k]))

    return SDPInstance(nv=nv, blocks=tuple(blocks),
                       A=sp.csr_matrix((0, nv)), b=np.zeros(0), c=c,
                       layout=(("v", slice(0, nv)),), eq_labels=(),
                       meta={"source": str(path)})
