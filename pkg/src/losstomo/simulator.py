"""Multicast probing under independent Bernoulli link losses.

Random stream
-------------
Every run draws from a Philox-4x64 counter-based generator seeded through
``numpy.random.SeedSequence(master_seed, spawn_key=(replication_index,))``.
Probes are processed in blocks of :data:`BLOCK` consecutive probes.  Inside a
block, links are visited in pre-order (children in stored order); for each
link one uniform is drawn per probe of the block that reached the link's
parent, in ascending probe order.  The probe crosses the link iff the
uniform is below ``alpha``.  Probes lost upstream consume no draws.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ObservationError, ParameterError
from .topology import LinkParams, Topology, derive_params

BLOCK = 65536
MAGIC = b"TOMO"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    replication_index: int = 0

    def __post_init__(self):
        if not 0 <= self.master_seed < 2**64:
            raise ParameterError("master_seed must be a 64-bit unsigned integer")
        if self.replication_index < 0:
            raise ParameterError("replication_index must be non-negative")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.master_seed, spawn_key=(self.replication_index,))
        return np.random.Generator(np.random.Philox(ss))


class ObservationMatrix:
    """``n`` probes by ``len(receivers)`` binary outcomes, bit-packed per probe row.

    Bits are packed little-endian within each byte (receiver column 0 is the
    least significant bit of byte 0).
    """

    __slots__ = ("_n", "_receivers", "_packed")

    def __init__(self, n: int, receivers: Sequence[int], packed: np.ndarray):
        receivers = tuple(int(r) for r in receivers)
        packed = np.ascontiguousarray(packed, dtype=np.uint8)
        if packed.shape != (n, (len(receivers) + 7) // 8):
            raise ObservationError(
                f"packed array has shape {packed.shape}, expected {(n, (len(receivers) + 7) // 8)}"
            )
        if len(set(receivers)) != len(receivers):
            raise ObservationError("duplicate receiver ids")
        packed.setflags(write=False)
        self._n = int(n)
        self._receivers = receivers
        self._packed = packed

    @classmethod
    def from_bits(cls, bits, receivers: Sequence[int]) -> "ObservationMatrix":
        bits = np.asarray(bits)
        if bits.ndim != 2 or bits.shape[1] != len(receivers):
            raise ObservationError(
                f"bits must be n x {len(receivers)}, got shape {bits.shape}"
            )
        if bits.size and not np.isin(bits, (0, 1)).all():
            raise ObservationError("observations must be 0/1")
        packed = np.packbits(bits.astype(bool), axis=1, bitorder="little")
        return cls(bits.shape[0], receivers, packed)

    @property
    def n(self) -> int:
        return self._n

    @property
    def receivers(self) -> tuple[int, ...]:
        return self._receivers

    @property
    def packed(self) -> np.ndarray:
        return self._packed

    @property
    def bits(self) -> np.ndarray:
        """Unpacked ``n x |R|`` boolean array."""
        return np.unpackbits(
            self._packed, axis=1, count=len(self._receivers), bitorder="little"
        ).astype(bool)

    def column(self, receiver: int) -> np.ndarray:
        try:
            c = self._receivers.index(receiver)
        except ValueError:
            raise ObservationError(f"receiver {receiver} not in observation") from None
        return ((self._packed[:, c // 8] >> (c % 8)) & 1).astype(bool)

    def __eq__(self, other):
        if not isinstance(other, ObservationMatrix):
            return NotImplemented
        return (
            self._n == other._n
            and self._receivers == other._receivers
            and np.array_equal(self._packed, other._packed)
        )

    def __repr__(self):
        return f"ObservationMatrix(n={self._n}, receivers={len(self._receivers)})"

    # -- text form ---------------------------------------------------------

    def to_text(self) -> str:
        lines = [",".join([str(self._n)] + [str(r) for r in self._receivers])]
        table = np.where(self.bits, ord("1"), ord("0")).astype(np.uint8)
        lines.extend(row.tobytes().decode("ascii") for row in table)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ObservationMatrix":
        lines = [ln.strip() for ln in text.splitlines()]
        lines = [ln for ln in lines if ln]
        if not lines:
            raise ObservationError("empty observation file")
        header = [h.strip() for h in lines[0].split(",")]
        try:
            receivers = [int(h) for h in header[1:]]
        except ValueError:
            raise ObservationError(f"bad receiver ids in header {lines[0]!r}") from None
        rows = lines[1:]
        if header[0] not in ("n", ""):
            try:
                declared = int(header[0])
            except ValueError:
                raise ObservationError(f"bad probe count {header[0]!r}") from None
            if declared != len(rows):
                raise ObservationError(f"header says {declared} probes, file has {len(rows)}")
        width = len(receivers)
        buf = np.zeros((len(rows), width), dtype=bool)
        for i, row in enumerate(rows):
            if len(row) != width or set(row) - {"0", "1"}:
                raise ObservationError(f"probe line {i + 2}: expected {width} characters of 0/1")
            buf[i] = np.frombuffer(row.encode("ascii"), dtype=np.uint8) == ord("1")
        return cls.from_bits(buf, receivers)

    # -- binary form -------------------------------------------------------

    def to_bytes(self) -> bytes:
        head = MAGIC + struct.pack("<BQI", FORMAT_VERSION, self._n, len(self._receivers))
        ids = np.asarray(self._receivers, dtype="<u4").tobytes()
        return head + ids + self._packed.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ObservationMatrix":
        if data[:4] != MAGIC:
            raise ObservationError("missing TOMO magic")
        fixed = struct.calcsize("<BQI")
        if len(data) < 4 + fixed:
            raise ObservationError("truncated header")
        version, n, count = struct.unpack_from("<BQI", data, 4)
        if version != FORMAT_VERSION:
            raise ObservationError(f"unsupported format version {version}")
        off = 4 + fixed
        ids = np.frombuffer(data, dtype="<u4", count=count, offset=off)
        off += 4 * count
        row_bytes = (count + 7) // 8
        if len(data) - off != n * row_bytes:
            raise ObservationError("payload size does not match header")
        packed = np.frombuffer(data, dtype=np.uint8, offset=off).reshape(n, row_bytes)
        return cls(n, ids.tolist(), packed.copy())


def save_observation(obs: ObservationMatrix, path, *, binary: bool = False):
    if binary:
        with open(path, "wb") as fh:
            fh.write(obs.to_bytes())
    else:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(obs.to_text())


def load_observation(path) -> ObservationMatrix:
    """Read either observation format; the ``TOMO`` magic selects binary."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] == MAGIC:
        return ObservationMatrix.from_bytes(data)
    return ObservationMatrix.from_text(data.decode("ascii"))


def simulate(
    topo: Topology,
    params,
    n: int,
    seed: SeedSpec,
    *,
    debug: bool = False,
):
    """Send ``n`` multicast probes down ``topo`` and record what the receivers see.

    ``params`` is a :class:`LinkParams` or anything :func:`derive_params`
    accepts as ``alpha``.  With ``debug=True`` the return value is
    ``(obs, trace)`` where ``trace`` is the ``n x n_nodes`` boolean matrix of
    which nodes each probe reached (the latent states estimators never see).
    """
    if n < 1:
        raise ParameterError("need at least one probe")
    if not isinstance(params, LinkParams):
        params = derive_params(topo, params, strict=False)
    if params.topology != topo:
        raise ParameterError("params were derived for a different topology")
    alpha = params.alpha
    rng = seed.generator()
    receivers = topo.receivers
    col = {r: i for i, r in enumerate(receivers)}
    order = topo.preorder()
    last_child = {cs[-1]: p for p in range(topo.n_nodes) if (cs := topo.children(p))}

    packed = np.empty((n, (len(receivers) + 7) // 8), dtype=np.uint8)
    trace = np.zeros((n, topo.n_nodes), dtype=bool) if debug else None
    for start in range(0, n, BLOCK):
        b = min(BLOCK, n - start)
        hits = np.zeros((b, len(receivers)), dtype=bool)
        reached = {0: np.ones(b, dtype=bool)}
        if debug:
            trace[start:start + b, 0] = True
        for k in order[1:]:
            p = topo.parent(k)
            up = reached[p]
            here = np.zeros(b, dtype=bool)
            m = int(np.count_nonzero(up))
            if m:
                here[up] = rng.random(m) < alpha[k]
            if debug:
                trace[start:start + b, k] = here
            if topo.is_leaf(k):
                hits[:, col[k]] = here
            else:
                reached[k] = here
            if k in last_child:
                del reached[last_child[k]]
        packed[start:start + b] = np.packbits(hits, axis=1, bitorder="little")

    obs = ObservationMatrix(n, receivers, packed)
    if debug:
        return obs, trace
    return obs


def empirical_rates(obs: ObservationMatrix, topo: Topology) -> np.ndarray:
    """Empirical ``gamma_hat`` for every node (index 0 repeats node 1)."""
    from .statistics import build_stats

    return build_stats(obs, topo).gamma_hat
