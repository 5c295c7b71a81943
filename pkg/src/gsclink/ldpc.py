"""Sparse binary LDPC codes: construction, encoding, belief propagation, BLER.

The parity-check matrix is kept as adjacency lists in both directions plus a
bit-packed (uint64) row form for GF(2) elimination.  Decoding is the
sum-product algorithm in the log domain (tanh rule) with messages clipped at
|LLR| <= 30; decoding of a whole Monte Carlo batch is vectorised across
blocks.  Block error rates are estimated through the full
encode -> QPSK -> AWGN -> decode chain and tabulated with Wilson intervals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .modem import awgn_llr, qpsk_map
from .rng import stream

__all__ = [
    "ParityCheckMatrix",
    "BlerPoint",
    "BlerCurve",
    "AlistError",
    "MalformedAlistError",
    "AlistDegreeError",
    "AlistIndexError",
    "generate_regular_code",
    "load_alist",
    "encode",
    "bp_decode",
    "bp_decode_batch",
    "syndrome",
    "estimate_bler",
    "bler_lookup",
    "wilson_interval",
    "save_curve",
    "load_curve",
]

_LLR_CLIP = 30.0
_TANH_FLOOR = 1e-30


# ---------------------------------------------------------------------------
# packed GF(2) linear algebra
# ---------------------------------------------------------------------------

def _pack_bits(bits: np.ndarray) -> np.ndarray:
    """Pack rows of 0/1 along the last axis into little-endian uint64 words."""
    bits = np.ascontiguousarray(bits, dtype=np.uint8)
    n = bits.shape[-1]
    pad = (-n) % 64
    if pad:
        bits = np.concatenate([bits, np.zeros(bits.shape[:-1] + (pad,), dtype=np.uint8)], axis=-1)
    packed_bytes = np.packbits(bits, axis=-1, bitorder="little")
    return packed_bytes.view("<u8")


def _unpack_bits(words: np.ndarray, n: int) -> np.ndarray:
    """Inverse of _pack_bits, truncated to n bits."""
    as_bytes = np.ascontiguousarray(words).view(np.uint8)
    bits = np.unpackbits(as_bytes, axis=-1, bitorder="little")
    return bits[..., :n]


def _gf2_rref(packed: np.ndarray, n_cols: int) -> tuple[np.ndarray, list[int]]:
    """In-place reduced row echelon form over GF(2); returns (matrix, pivot columns)."""
    m = packed.shape[0]
    pivots: list[int] = []
    r = 0
    for col in range(n_cols):
        if r >= m:
            break
        w, b = divmod(col, 64)
        colbits = (packed[r:, w] >> np.uint64(b)) & np.uint64(1)
        nz = np.nonzero(colbits)[0]
        if nz.size == 0:
            continue
        p = r + nz[0]
        if p != r:
            packed[[r, p]] = packed[[p, r]]
        hit = np.nonzero((packed[:, w] >> np.uint64(b)) & np.uint64(1))[0]
        hit = hit[hit != r]
        if hit.size:
            packed[hit] ^= packed[r]
        pivots.append(col)
        r += 1
    return packed, pivots


# ---------------------------------------------------------------------------
# alist ingestion errors
# ---------------------------------------------------------------------------

class AlistError(ValueError):
    """Base class for alist parsing failures."""


class MalformedAlistError(AlistError):
    """Structurally broken file: wrong token counts, truncation, bad literals."""


class AlistDegreeError(AlistError):
    """Node degree disagrees with the declared degree lists."""


class AlistIndexError(AlistError):
    """Adjacency entry outside the declared matrix dimensions."""


# ---------------------------------------------------------------------------
# parity-check matrix
# ---------------------------------------------------------------------------

@dataclass
class ParityCheckMatrix:
    """Sparse binary parity-check matrix with adjacency in both directions."""

    n: int                      # block length in bits (columns)
    m_checks: int               # number of checks (rows)
    check_neighbors: list       # m arrays of variable indices
    var_neighbors: list         # n arrays of check indices
    code_id: str = "anonymous"
    _rank: int | None = field(default=None, repr=False)
    _encoder: "Encoder | None" = field(default=None, repr=False)
    _bp: "_BpStructure | None" = field(default=None, repr=False)

    def __post_init__(self):
        if any(len(v) < 1 for v in self.var_neighbors):
            bad = next(i for i, v in enumerate(self.var_neighbors) if len(v) < 1)
            raise ValueError(f"column {bad} has degree 0")

    @classmethod
    def from_dense(cls, h: np.ndarray, code_id: str = "anonymous") -> "ParityCheckMatrix":
        h = np.asarray(h)
        m, n = h.shape
        check_nb = [np.nonzero(h[i])[0].astype(np.int64) for i in range(m)]
        var_nb = [np.nonzero(h[:, j])[0].astype(np.int64) for j in range(n)]
        return cls(n=n, m_checks=m, check_neighbors=check_nb, var_neighbors=var_nb, code_id=code_id)

    def to_dense(self) -> np.ndarray:
        h = np.zeros((self.m_checks, self.n), dtype=np.uint8)
        for i, nb in enumerate(self.check_neighbors):
            h[i, nb] = 1
        return h

    def packed_rows(self) -> np.ndarray:
        words = (self.n + 63) // 64
        packed = np.zeros((self.m_checks, words), dtype=np.uint64)
        for i, nb in enumerate(self.check_neighbors):
            w, b = np.divmod(np.asarray(nb), 64)
            np.bitwise_or.at(packed[i], w, np.uint64(1) << b.astype(np.uint64))
        return packed

    @property
    def rank(self) -> int:
        if self._rank is None:
            _, pivots = _gf2_rref(self.packed_rows(), self.n)
            self._rank = len(pivots)
        return self._rank

    @property
    def k_info(self) -> int:
        """Information bits per block (columns minus GF(2) rank)."""
        return self.n - self.rank

    @property
    def rate(self) -> float:
        return self.k_info / self.n

    def encoder(self) -> "Encoder":
        if self._encoder is None:
            self._encoder = Encoder(self)
        return self._encoder

    def bp_structure(self) -> "_BpStructure":
        if self._bp is None:
            self._bp = _BpStructure(self)
        return self._bp


def syndrome(h: ParityCheckMatrix, bits: np.ndarray) -> np.ndarray:
    """Parity of each check for the given bit vector(s); shape (..., m_checks)."""
    bits = np.asarray(bits, dtype=np.uint8)
    bp = h.bp_structure()
    edge_bits = bits[..., bp.var_of_edge]
    if bp.uniform:
        flat = edge_bits.reshape(*bits.shape[:-1], bp.m, bp.wr)
        return (flat.sum(axis=-1) & 1).astype(np.uint8)
    return np.bitwise_xor.reduceat(edge_bits, bp.check_starts, axis=-1)


# ---------------------------------------------------------------------------
# code construction
# ---------------------------------------------------------------------------

def _count_4cycles(var_neighbors: list, m_checks: int) -> int:
    keys = []
    for checks in var_neighbors:
        c = np.sort(np.asarray(checks))
        for a in range(len(c)):
            for b in range(a + 1, len(c)):
                keys.append(int(c[a]) * m_checks + int(c[b]))
    if not keys:
        return 0
    _, counts = np.unique(np.asarray(keys, dtype=np.int64), return_counts=True)
    return int((counts * (counts - 1) // 2).sum())


def _socket_graph(n: int, wc: int, wr: int, rng: np.random.Generator):
    """One configuration-model draw with duplicate-edge repair; None if stuck."""
    m = n * wc // wr
    var_sockets = np.repeat(np.arange(n), wc)
    check_sockets = np.repeat(np.arange(m), wr)
    perm = rng.permutation(var_sockets.size)
    var_of = var_sockets[perm]
    for _ in range(200):
        key = check_sockets.astype(np.int64) * n + var_of
        order = np.argsort(key, kind="stable")
        dup = order[1:][np.diff(key[order]) == 0]
        if dup.size == 0:
            edges = np.column_stack([check_sockets, var_of])
            return edges
        # swap each duplicate edge's variable with a random other edge
        others = rng.integers(0, var_of.size, size=dup.size)
        var_of[dup], var_of[others] = var_of[others].copy(), var_of[dup].copy()
    return None


def generate_regular_code(n: int, wc: int, wr: int, rng_seed: int,
                          retries: int = 20) -> ParityCheckMatrix:
    """Pseudo-random (wc, wr)-regular code with 4-cycle count reduced by retries.

    Built by socket matching between variable and check stubs; among `retries`
    seeded attempts the graph with the fewest length-4 cycles is kept.
    Deterministic given rng_seed.
    """
    if wc < 2:
        raise ValueError(f"column weight must be >= 2, got {wc}")
    if (n * wc) % wr != 0:
        raise ValueError(f"n*wc = {n * wc} not divisible by row weight {wr}")
    m = n * wc // wr
    if m < 1 or wr < 1:
        raise ValueError("degree profile gives no checks")

    best = None
    best_cycles = None
    for attempt in range(retries):
        rng = stream(rng_seed, "ldpc.generate", n, wc, wr, attempt)
        edges = _socket_graph(n, wc, wr, rng)
        if edges is None:
            continue
        var_nb = [[] for _ in range(n)]
        for c, v in edges:
            var_nb[v].append(c)
        cycles = _count_4cycles(var_nb, m)
        if best_cycles is None or cycles < best_cycles:
            best_cycles = cycles
            best = edges
        if cycles == 0:
            break
    if best is None:
        raise ValueError(f"could not build a simple ({wc},{wr}) graph for n={n}")

    check_nb = [[] for _ in range(m)]
    var_nb = [[] for _ in range(n)]
    for c, v in best:
        check_nb[c].append(v)
        var_nb[v].append(c)
    return ParityCheckMatrix(
        n=n, m_checks=m,
        check_neighbors=[np.sort(np.asarray(x, dtype=np.int64)) for x in check_nb],
        var_neighbors=[np.sort(np.asarray(x, dtype=np.int64)) for x in var_nb],
        code_id=f"reg-n{n}-wc{wc}-wr{wr}-s{rng_seed}",
    )


def load_alist(path) -> ParityCheckMatrix:
    """Read a parity-check matrix in the plain-text alist interchange format.

    Layout: first line `n_cols n_rows`, second line the maximum degrees, then
    the per-column and per-row degree lists, then one adjacency line per
    column (1-based check indices) and one per row (1-based column indices).
    Zero entries are padding and ignored.
    """
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.readlines()
    lines = [(i + 1, ln.split()) for i, ln in enumerate(raw) if ln.strip()]

    def ints(idx, expect=None, what=""):
        if idx >= len(lines):
            raise MalformedAlistError(f"{path}: truncated file, expected {what} on line {idx + 1}")
        lineno, toks = lines[idx]
        try:
            vals = [int(t) for t in toks]
        except ValueError:
            raise MalformedAlistError(f"{path}: non-integer token on line {lineno}") from None
        if expect is not None and len(vals) != expect:
            raise MalformedAlistError(
                f"{path}: line {lineno} has {len(vals)} entries, expected {expect} ({what})")
        return vals

    n, m = ints(0, 2, "matrix dimensions")
    if n < 1 or m < 1:
        raise MalformedAlistError(f"{path}: nonpositive dimensions {n} x {m}")
    max_cd, max_rd = ints(1, 2, "maximum degrees")
    col_deg = ints(2, n, "column degrees")
    row_deg = ints(3, m, "row degrees")
    if max(col_deg) > max_cd or max(row_deg) > max_rd:
        raise AlistDegreeError(f"{path}: degree list exceeds declared maxima")

    var_nb = []
    for j in range(n):
        entries = [e for e in ints(4 + j, what=f"column {j} adjacency") if e != 0]
        if len(entries) != col_deg[j]:
            raise AlistDegreeError(
                f"{path}: column {j} lists {len(entries)} checks, header says {col_deg[j]}")
        for e in entries:
            if not 1 <= e <= m:
                raise AlistIndexError(f"{path}: column {j} references check {e}, valid range 1..{m}")
        var_nb.append(np.sort(np.asarray(entries, dtype=np.int64) - 1))
    check_nb = [[] for _ in range(m)]
    for j, nb in enumerate(var_nb):
        for c in nb:
            check_nb[c].append(j)
    for i in range(m):
        entries = [e for e in ints(4 + n + i, what=f"row {i} adjacency") if e != 0]
        if len(entries) != row_deg[i]:
            raise AlistDegreeError(
                f"{path}: row {i} lists {len(entries)} columns, header says {row_deg[i]}")
        for e in entries:
            if not 1 <= e <= n:
                raise AlistIndexError(f"{path}: row {i} references column {e}, valid range 1..{n}")
        if sorted(e - 1 for e in entries) != sorted(check_nb[i]):
            raise MalformedAlistError(
                f"{path}: row {i} adjacency disagrees with the column section")

    import os
    return ParityCheckMatrix(
        n=n, m_checks=m,
        check_neighbors=[np.asarray(sorted(x), dtype=np.int64) for x in check_nb],
        var_neighbors=var_nb,
        code_id=f"alist-{os.path.basename(str(path))}",
    )


# ---------------------------------------------------------------------------
# encoding
# ---------------------------------------------------------------------------

class Encoder:
    """Systematic encoder derived from the reduced row echelon form of H.

    Information bits are placed verbatim on the non-pivot columns
    (`info_positions`); each pivot column is the GF(2) sum of the free
    columns in its reduced row.  Rank-deficient matrices simply yield more
    information positions; the shrunken check count is reported via
    ParityCheckMatrix.rank.
    """

    def __init__(self, h: ParityCheckMatrix):
        self.h = h
        rref, pivots = _gf2_rref(h.packed_rows(), h.n)
        self.pivot_positions = np.asarray(pivots, dtype=np.int64)
        mask = np.ones(h.n, dtype=bool)
        mask[self.pivot_positions] = False
        self.info_positions = np.nonzero(mask)[0]
        k = self.info_positions.size
        rank = len(pivots)
        # parity generator: rows of the RREF restricted to the free columns
        dense = np.zeros((rank, k), dtype=np.uint8)
        for jj, col in enumerate(self.info_positions):
            w, b = divmod(int(col), 64)
            dense[:, jj] = (rref[:rank, w] >> np.uint64(b)) & np.uint64(1)
        self.parity_gen = _pack_bits(dense)

    @property
    def k(self) -> int:
        return self.info_positions.size

    def encode(self, info_bits: np.ndarray) -> np.ndarray:
        """Encode (..., k) information bits into (..., n) codewords."""
        info = np.asarray(info_bits, dtype=np.uint8)
        if info.shape[-1] != self.k:
            raise ValueError(f"expected {self.k} information bits, got {info.shape[-1]}")
        single = info.ndim == 1
        info = np.atleast_2d(info)
        packed = _pack_bits(info)
        parity = np.empty((info.shape[0], self.parity_gen.shape[0]), dtype=np.uint8)
        chunk = max(1, 2**22 // max(1, self.parity_gen.size))
        for lo in range(0, info.shape[0], chunk):
            hi = min(lo + chunk, info.shape[0])
            acc = np.bitwise_count(self.parity_gen[None, :, :] & packed[lo:hi, None, :])
            parity[lo:hi] = (acc.sum(axis=2) & 1).astype(np.uint8)
        out = np.zeros((info.shape[0], self.h.n), dtype=np.uint8)
        out[:, self.info_positions] = info
        out[:, self.pivot_positions] = parity
        return out[0] if single else out

    def extract_info(self, codeword: np.ndarray) -> np.ndarray:
        return np.asarray(codeword, dtype=np.uint8)[..., self.info_positions]


def encode(h: ParityCheckMatrix, info_bits: np.ndarray) -> np.ndarray:
    """Encode information bits into a codeword with zero syndrome."""
    return h.encoder().encode(info_bits)


# ---------------------------------------------------------------------------
# belief propagation
# ---------------------------------------------------------------------------

class _BpStructure:
    """Edge arrays for vectorised message passing (edges ordered by check).

    Regular codes (constant check and variable degrees) take a reshape-based
    fast path for the segment sums; irregular codes fall back to reduceat.
    """

    def __init__(self, h: ParityCheckMatrix):
        var_of_edge = np.concatenate([np.asarray(nb) for nb in h.check_neighbors])
        deg = np.array([len(nb) for nb in h.check_neighbors])
        self.var_of_edge = var_of_edge.astype(np.int64)
        self.check_of_edge = np.repeat(np.arange(h.m_checks), deg)
        self.check_starts = np.concatenate([[0], np.cumsum(deg)[:-1]]).astype(np.int64)
        order = np.argsort(self.var_of_edge, kind="stable")
        self.var_order = order
        vdeg = np.array([len(nb) for nb in h.var_neighbors])
        self.var_starts = np.concatenate([[0], np.cumsum(vdeg)[:-1]]).astype(np.int64)
        self.n = h.n
        self.m = h.m_checks
        self.uniform = bool(np.all(deg == deg[0]) and np.all(vdeg == vdeg[0]))
        self.wr = int(deg[0]) if self.uniform else 0
        self.wc = int(vdeg[0]) if self.uniform else 0

    def sum_per_check(self, edge_vals: np.ndarray) -> np.ndarray:
        if self.uniform:
            return edge_vals.reshape(edge_vals.shape[0], self.m, self.wr).sum(axis=2)
        return np.add.reduceat(edge_vals, self.check_starts, axis=1)

    def sum_per_var(self, edge_vals: np.ndarray) -> np.ndarray:
        gathered = edge_vals[:, self.var_order]
        if self.uniform:
            return gathered.reshape(edge_vals.shape[0], self.n, self.wc).sum(axis=2)
        return np.add.reduceat(gathered, self.var_starts, axis=1)

    def broadcast_check(self, per_check: np.ndarray) -> np.ndarray:
        if self.uniform:
            return np.repeat(per_check, self.wr, axis=1)
        return per_check[:, self.check_of_edge]


class _BpWorkspace:
    """Preallocated float32 message buffers; fresh multi-MB temporaries in the
    inner loop would cross the allocator's mmap threshold and page-fault every
    iteration, dominating the decode time."""

    def __init__(self, k: int, bp: "_BpStructure"):
        e = bp.var_of_edge.size
        self.c2v = np.zeros((k, e), dtype=np.float32)
        self.llr_edge = np.empty((k, e), dtype=np.float32)
        self.v2c = np.empty((k, e), dtype=np.float32)
        self.g = np.empty((k, e), dtype=np.float32)   # gathers, tanh magnitudes
        self.exc = np.empty((k, e), dtype=np.float32)
        self.sgn = np.empty((k, e), dtype=np.float32)
        self.negi = np.empty((k, e), dtype=np.int32)
        self.negb = np.empty((k, e), dtype=bool)
        self.tot_v = np.empty((k, bp.n), dtype=np.float32)
        self.post = np.empty((k, bp.n), dtype=np.float64)
        self.magc = np.empty((k, bp.m), dtype=np.float32)
        self.negc = np.empty((k, bp.m), dtype=np.int32)
        self.parc = np.empty((k, bp.m), dtype=np.int32)

    def _var_sums(self, bp, k, src, dst):
        gv = self.g[:k]
        np.take(src, bp.var_order, axis=1, out=gv)
        if bp.uniform:
            gv.reshape(k, bp.n, bp.wc).sum(axis=2, out=dst)
        else:
            dst[:] = np.add.reduceat(gv, bp.var_starts, axis=1)


def bp_decode_batch(h: ParityCheckMatrix, llrs: np.ndarray, max_iters: int = 50):
    """Sum-product decode a batch of LLR vectors.

    Parameters
    ----------
    llrs : (batch, n) array, positive LLR favouring bit 0.
    max_iters : message-passing iteration cap; syndrome-zero exits early.

    Returns
    -------
    bits : (batch, n) uint8 hard decisions
    converged : (batch,) bool, True when the syndrome reached zero
    iters : (batch,) int, iterations used (0 when the channel hard decision
        already satisfies all checks)
    """
    llrs = np.atleast_2d(np.asarray(llrs, dtype=np.float64))
    nb, n = llrs.shape
    if n != h.n:
        raise ValueError(f"LLR length {n} does not match block length {h.n}")
    bp = h.bp_structure()

    bits_out = (llrs < 0).astype(np.uint8)
    converged = ~np.any(syndrome(h, bits_out), axis=-1)
    iters_out = np.zeros(nb, dtype=np.int64)

    active = np.nonzero(~converged)[0]
    if active.size == 0 or max_iters == 0:
        return bits_out, converged, iters_out

    k = active.size
    ws = _BpWorkspace(k, bp)
    llr_a = llrs[active].copy()
    np.take(llr_a.astype(np.float32), bp.var_of_edge, axis=1, out=ws.llr_edge[:k])
    fresh = True  # messages all zero, so the per-variable totals are too

    for it in range(1, max_iters + 1):
        c2v, v2c, g, exc, sgn = ws.c2v[:k], ws.v2c[:k], ws.g[:k], ws.exc[:k], ws.sgn[:k]
        negi, negb, tot_v, post = ws.negi[:k], ws.negb[:k], ws.tot_v[:k], ws.post[:k]
        magc, negc, parc = ws.magc[:k], ws.negc[:k], ws.parc[:k]

        # variable update: total per variable minus the incoming edge
        # (tot_v still holds the totals computed for the previous posterior)
        if fresh:
            v2c[:] = ws.llr_edge[:k]
            fresh = False
        else:
            np.take(tot_v, bp.var_of_edge, axis=1, out=v2c)
            v2c += ws.llr_edge[:k]
            v2c -= c2v
        # check update via log-magnitude sums and sign parity
        np.clip(v2c, -_LLR_CLIP, _LLR_CLIP, out=v2c)
        v2c *= 0.5
        np.tanh(v2c, out=g)
        np.signbit(g, out=negb)
        np.abs(g, out=g)
        np.maximum(g, _TANH_FLOOR, out=g)
        np.log(g, out=g)
        if bp.uniform:
            g.reshape(k, bp.m, bp.wr).sum(axis=2, out=magc)
            negb.reshape(k, bp.m, bp.wr).sum(axis=2, dtype=np.int32, out=negc)
        else:
            magc[:] = np.add.reduceat(g, bp.check_starts, axis=1)
            negc[:] = np.add.reduceat(negb.astype(np.int32), bp.check_starts, axis=1)
        np.take(magc, bp.check_of_edge, axis=1, out=exc)
        exc -= g
        np.take(negc, bp.check_of_edge, axis=1, out=negi)
        negi -= negb
        np.bitwise_and(negi, 1, out=negi)
        np.multiply(negi, np.float32(-2.0), out=sgn)
        sgn += 1.0
        np.exp(exc, out=exc)
        np.minimum(exc, np.float32(1.0 - 1e-7), out=exc)
        np.arctanh(exc, out=c2v)
        c2v *= 2.0
        c2v *= sgn

        ws._var_sums(bp, k, c2v, tot_v)
        np.add(llr_a, tot_v, out=post)
        hard_b = post < 0
        hard = hard_b.view(np.uint8)
        # syndrome via the edge gather
        np.take(hard_b, bp.var_of_edge, axis=1, out=negb)
        if bp.uniform:
            negb.reshape(k, bp.m, bp.wr).sum(axis=2, dtype=np.int32, out=parc)
        else:
            parc[:] = np.add.reduceat(negb.astype(np.int32), bp.check_starts, axis=1)
        np.bitwise_and(parc, 1, out=parc)
        ok = ~parc.any(axis=1)

        done = active[ok]
        bits_out[done] = hard[ok]
        converged[done] = True
        iters_out[done] = it
        keep = ~ok
        active = active[keep]
        if active.size == 0:
            break
        if it == max_iters:
            bits_out[active] = hard[keep]
            iters_out[active] = max_iters
            break
        if ok.any():
            keep_idx = np.nonzero(keep)[0]
            kn = keep_idx.size
            np.take(ws.c2v[:k], keep_idx, axis=0, out=ws.g[:kn])
            ws.c2v[:kn] = ws.g[:kn]
            np.take(ws.llr_edge[:k], keep_idx, axis=0, out=ws.g[:kn])
            ws.llr_edge[:kn] = ws.g[:kn]
            ws.tot_v[:kn] = ws.tot_v[:k][keep_idx]
            llr_a = llr_a[keep_idx]
            k = kn
    return bits_out, converged, iters_out


def bp_decode(h: ParityCheckMatrix, llrs: np.ndarray, max_iters: int = 50):
    """Decode one block; returns (bits, converged flag, iterations used)."""
    bits, conv, iters = bp_decode_batch(h, np.asarray(llrs)[None, :], max_iters)
    return bits[0], bool(conv[0]), int(iters[0])


# ---------------------------------------------------------------------------
# block error rate
# ---------------------------------------------------------------------------

def wilson_interval(k: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """Wilson 95% score interval for k successes out of n.

    The endpoints at k = 0 and k = n are algebraically 0 and 1; they are
    snapped to avoid round-off residue.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    p = k / n
    denom = 1.0 + z**2 / n
    centre = (p + z**2 / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z**2 / (4 * n**2)) / denom
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return lo, hi


@dataclass(frozen=True)
class BlerPoint:
    gamma_db: float
    bler: float
    trials: int
    ci_low: float
    ci_high: float


@dataclass
class BlerCurve:
    """Monte Carlo table of block error rate versus SNR for one code."""

    code_id: str
    points: list

    def __post_init__(self):
        g = [p.gamma_db for p in self.points]
        if any(b <= a for a, b in zip(g, g[1:])):
            raise ValueError("gamma grid must be strictly increasing")
        if any(not 0.0 <= p.bler <= 1.0 for p in self.points):
            raise ValueError("bler values must lie in [0, 1]")
        if any(p.trials < 1 for p in self.points):
            raise ValueError("each point needs at least one trial")

    @property
    def gammas_db(self) -> np.ndarray:
        return np.array([p.gamma_db for p in self.points])

    @property
    def blers(self) -> np.ndarray:
        return np.array([p.bler for p in self.points])


def estimate_bler(h: ParityCheckMatrix, gamma_db: float, n_trials: int, rng_seed: int,
                  max_iters: int = 50, batch: int = 256) -> BlerPoint:
    """Monte Carlo BLER at one SNR through encode -> QPSK -> AWGN -> decode.

    A trial counts as a block error when the decoder fails to converge or
    converges to a codeword different from the transmitted one.  Per-trial
    randomness comes from counter-derived streams, so the estimate is
    bit-exact for a fixed (seed, trial count) and adding trials never
    perturbs earlier ones.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    enc = h.encoder()
    snr = 10.0 ** (gamma_db / 10.0)
    mdb = int(round(gamma_db * 1000))
    errors = 0
    for lo in range(0, n_trials, batch):
        hi = min(lo + batch, n_trials)
        rngs = [stream(rng_seed, "ldpc.bler", mdb, t) for t in range(lo, hi)]
        info = np.stack([r.integers(0, 2, size=enc.k).astype(np.uint8) for r in rngs])
        sent = enc.encode(info)
        llrs = np.stack([
            awgn_llr(qpsk_map(sent[i]), snr, rngs[i]) for i in range(hi - lo)
        ])
        bits, conv, _ = bp_decode_batch(h, llrs, max_iters=max_iters)
        bad = ~conv | np.any(bits != sent, axis=1)
        errors += int(bad.sum())
    lo_ci, hi_ci = wilson_interval(errors, n_trials)
    return BlerPoint(gamma_db=float(gamma_db), bler=errors / n_trials,
                     trials=n_trials, ci_low=lo_ci, ci_high=hi_ci)


def _logit(p: float) -> float:
    p = min(max(p, 1e-12), 1.0 - 1e-12)
    return math.log(p / (1.0 - p))


def bler_lookup(curve: BlerCurve, gamma_db: float) -> float:
    """Interpolate the curve at gamma_db, linear in log-odds, clamped outside.

    Queries at tabulated SNRs return the tabulated value exactly.
    """
    if not curve.points:
        raise ValueError("cannot interpolate an empty curve")
    g = curve.gammas_db
    b = curve.blers
    if gamma_db <= g[0]:
        return float(b[0])
    if gamma_db >= g[-1]:
        return float(b[-1])
    i = int(np.searchsorted(g, gamma_db))
    if g[i] == gamma_db:
        return float(b[i])
    w = (gamma_db - g[i - 1]) / (g[i] - g[i - 1])
    lo = _logit(float(b[i - 1]))
    hi = _logit(float(b[i]))
    val = lo + w * (hi - lo)
    return 1.0 / (1.0 + math.exp(-val))


def save_curve(path, curve: BlerCurve) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# code_id={curve.code_id}\n")
        fh.write("gamma_db,bler,trials,ci_low,ci_high\n")
        for p in curve.points:
            fh.write(f"{p.gamma_db!r},{p.bler!r},{p.trials},{p.ci_low!r},{p.ci_high!r}\n")


def load_curve(path) -> BlerCurve:
    code_id = "unknown"
    points = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "code_id=" in line:
                    code_id = line.split("code_id=", 1)[1].strip()
                continue
            if line.startswith("gamma_db"):
                continue
            g, b, t, cl, ch = line.split(",")
            points.append(BlerPoint(float(g), float(b), int(t), float(cl), float(ch)))
    return BlerCurve(code_id=code_id, points=points)
