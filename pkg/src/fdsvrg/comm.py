"""Message fabric with exact scalar accounting and the tree-structured
global sum.

Every payload of length k charges k scalars to the ledger.  A tree
reduction over q workers routes q upward sends (pairwise merges plus the
apex-to-coordinator hop) and q downward sends (the reverse broadcast), so
one reduction of a length-k vector always costs exactly 2*q*k scalars.

Summation order is canonical: the broadcast value is the left-to-right
fold of the worker contributions in ascending worker order, regardless of
the merge topology.  This trades parallelism realism for bitwise
reproducibility; the tree is still walked edge by edge for the per-edge
ledger breakdown.
"""
from __future__ import annotations

import csv
import queue
import socket
import struct
import threading
from dataclasses import dataclass

import numpy as np

PHASE_FULL_GRADIENT = "full_gradient"
PHASE_INNER_LOOP = "inner_loop"
PHASE_PARAMETER_EXCHANGE = "parameter_exchange"
PHASE_INSTRUMENTATION = "instrumentation"

ALGORITHM_PHASES = (PHASE_FULL_GRADIENT, PHASE_INNER_LOOP, PHASE_PARAMETER_EXCHANGE)

_PHASE_CODES = {
    PHASE_FULL_GRADIENT: 0,
    PHASE_INNER_LOOP: 1,
    PHASE_PARAMETER_EXCHANGE: 2,
    PHASE_INSTRUMENTATION: 3,
}
_PHASE_NAMES = {v: k for k, v in _PHASE_CODES.items()}

_ROLE_CODES = {"worker": 0, "server": 1, "coordinator": 2, "center": 3}
_ROLE_NAMES = {v: k for k, v in _ROLE_CODES.items()}


@dataclass(frozen=True)
class Endpoint:
    role: str
    id: int

    def __str__(self):
        return f"{self.role}:{self.id}"

    def wire_id(self) -> int:
        return (_ROLE_CODES[self.role] << 12) | self.id


def worker(l: int) -> Endpoint:
    return Endpoint("worker", l)


def server(k: int) -> Endpoint:
    return Endpoint("server", k)


def coordinator() -> Endpoint:
    return Endpoint("coordinator", 0)


def center() -> Endpoint:
    return Endpoint("center", 0)


def _endpoint_from_wire(wire: int) -> Endpoint:
    return Endpoint(_ROLE_NAMES[wire >> 12], wire & 0xFFF)


class CommLedger:
    """Monotone counters of scalars transmitted, by phase and by edge."""

    def __init__(self):
        self._lock = threading.Lock()
        self.by_phase: dict[str, int] = {}
        self.by_edge: dict[tuple[str, str, str], int] = {}

    def record(self, phase: str, sender: Endpoint, receiver: Endpoint, scalars: int):
        if scalars < 0:
            raise ValueError("scalar count must be non-negative")
        with self._lock:
            self.by_phase[phase] = self.by_phase.get(phase, 0) + scalars
            key = (phase, str(sender), str(receiver))
            self.by_edge[key] = self.by_edge.get(key, 0) + scalars

    @property
    def total(self) -> int:
        with self._lock:
            return sum(self.by_phase.values())

    def phase_total(self, *phases: str) -> int:
        with self._lock:
            return sum(self.by_phase.get(p, 0) for p in phases)

    @property
    def algorithm_total(self) -> int:
        """Scalars attributable to the algorithm itself (instrumentation
        traffic such as trace-objective reductions is excluded)."""
        return self.phase_total(*ALGORITHM_PHASES)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["phase", "sender", "receiver", "scalars"])
            for (phase, snd, rcv) in sorted(self.by_edge):
                wr.writerow([phase, snd, rcv, self.by_edge[(phase, snd, rcv)]])


class FabricError(RuntimeError):
    pass


class InProcFabric:
    """Default backend: per-endpoint FIFO queues in one process."""

    def __init__(self):
        self.ledger = CommLedger()
        self._inboxes: dict[Endpoint, queue.Queue] = {}
        self._open = True

    def register(self, endpoint: Endpoint):
        self._inboxes.setdefault(endpoint, queue.Queue())

    def send(self, sender: Endpoint, receiver: Endpoint, payload, phase: str):
        if not self._open:
            raise FabricError("fabric is shut down")
        if sender not in self._inboxes or receiver not in self._inboxes:
            raise FabricError(f"unregistered endpoint on edge {sender}->{receiver}")
        arr = np.ascontiguousarray(payload, dtype=np.float64).ravel()
        self.ledger.record(phase, sender, receiver, arr.size)
        self._inboxes[receiver].put((sender, phase, arr))

    def recv(self, receiver: Endpoint, timeout: float = 30.0):
        if receiver not in self._inboxes:
            raise FabricError(f"unregistered endpoint {receiver}")
        try:
            return self._inboxes[receiver].get(timeout=timeout)
        except queue.Empty:
            raise FabricError(f"timeout waiting for a message at {receiver}") from None

    def close(self):
        self._open = False


class SocketFabric:
    """Localhost TCP backend with the same contract and ledger semantics.

    Wire frame: 1-byte phase tag, 2-byte sender id, little-endian u32
    payload length, then length x float64.
    """

    _HEADER = struct.Struct("<BHI")

    def __init__(self):
        self.ledger = CommLedger()
        self._inboxes: dict[Endpoint, queue.Queue] = {}
        self._listeners: dict[Endpoint, socket.socket] = {}
        self._addrs: dict[Endpoint, tuple[str, int]] = {}
        self._conns: dict[tuple[Endpoint, Endpoint], socket.socket] = {}
        self._threads: list[threading.Thread] = []
        self._lock = threading.Lock()
        self._open = True

    def register(self, endpoint: Endpoint):
        if endpoint in self._inboxes:
            return
        self._inboxes[endpoint] = queue.Queue()
        srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        srv.bind(("127.0.0.1", 0))
        srv.listen()
        self._listeners[endpoint] = srv
        self._addrs[endpoint] = srv.getsockname()
        t = threading.Thread(target=self._accept_loop, args=(endpoint, srv), daemon=True)
        t.start()
        self._threads.append(t)

    def _accept_loop(self, endpoint: Endpoint, srv: socket.socket):
        while self._open:
            try:
                conn, _ = srv.accept()
            except OSError:
                return
            t = threading.Thread(target=self._read_loop, args=(endpoint, conn), daemon=True)
            t.start()
            self._threads.append(t)

    def _read_loop(self, endpoint: Endpoint, conn: socket.socket):
        try:
            while True:
                header = self._read_exact(conn, self._HEADER.size)
                if header is None:
                    return
                phase_code, sender_wire, length = self._HEADER.unpack(header)
                body = self._read_exact(conn, 8 * length)
                if body is None:
                    return
                arr = np.frombuffer(body, dtype="<f8").copy()
                self._inboxes[endpoint].put(
                    (_endpoint_from_wire(sender_wire), _PHASE_NAMES[phase_code], arr))
        except OSError:
            return

    @staticmethod
    def _read_exact(conn: socket.socket, n: int):
        buf = b""
        while len(buf) < n:
            chunk = conn.recv(n - len(buf))
            if not chunk:
                return None
            buf += chunk
        return buf

    def _connection(self, sender: Endpoint, receiver: Endpoint) -> socket.socket:
        key = (sender, receiver)
        with self._lock:
            conn = self._conns.get(key)
            if conn is None:
                conn = socket.create_connection(self._addrs[receiver])
                conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                self._conns[key] = conn
        return conn

    def send(self, sender: Endpoint, receiver: Endpoint, payload, phase: str):
        if not self._open:
            raise FabricError("fabric is shut down")
        if receiver not in self._inboxes:
            raise FabricError(f"unregistered endpoint {receiver}")
        arr = np.ascontiguousarray(payload, dtype="<f8").ravel()
        frame = self._HEADER.pack(_PHASE_CODES[phase], sender.wire_id(), arr.size)
        conn = self._connection(sender, receiver)
        with self._lock:
            conn.sendall(frame + arr.tobytes())
        self.ledger.record(phase, sender, receiver, arr.size)

    def recv(self, receiver: Endpoint, timeout: float = 30.0):
        try:
            return self._inboxes[receiver].get(timeout=timeout)
        except queue.Empty:
            raise FabricError(f"timeout waiting for a message at {receiver}") from None

    def close(self):
        self._open = False
        for conn in self._conns.values():
            try:
                conn.close()
            except OSError:
                pass
        for srv in self._listeners.values():
            try:
                srv.close()
            except OSError:
                pass


def make_fabric(backend: str = "inproc"):
    if backend == "inproc":
        return InProcFabric()
    if backend == "socket":
        return SocketFabric()
    raise ValueError(f"unknown backend {backend!r}")


_COORD = -1


def tree_edges(q: int) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
    """Upward and downward edge lists of the reduction tree over worker
    ranks 0..q-1 plus the coordinator (rank -1).  Both lists always have
    exactly q edges."""
    up: list[tuple[int, int]] = []
    active = list(range(q))
    while len(active) > 1:
        survivors = []
        for j in range(0, len(active) - 1, 2):
            up.append((active[j + 1], active[j]))
            survivors.append(active[j])
        if len(active) % 2:
            survivors.append(active[-1])
        active = survivors
    up.append((active[0], _COORD))
    down = [(b, a) for (a, b) in reversed(up)]
    return up, down


def _fold(parts: list[np.ndarray]) -> np.ndarray:
    acc = np.array(parts[0], dtype=np.float64, copy=True)
    for p in parts[1:]:
        acc += p
    return acc


class TreeReducer:
    """Blocking tree-sum collective over q workers and a coordinator.

    The sequential driver calls :meth:`reduce` with all contributions at
    once; threaded workers each call :meth:`contribute`, and the last
    arriver routes the tree messages and wakes everyone.  Both paths run
    the identical routing and fold code, so ledgers and results match.

    A contribution may also be a list of sub-block partials (reference
    summation mode): the broadcast value is then the fold over all blocks
    of all workers in ascending order, while each transported payload is
    the worker's locally folded value so the ledger cost stays 2*q*k.
    """

    def __init__(self, fabric, q: int):
        self.fabric = fabric
        self.q = q
        self.workers = [worker(l) for l in range(q)]
        self.coordinator = coordinator()
        fabric.register(self.coordinator)
        for ep in self.workers:
            fabric.register(ep)
        self._up, self._down = tree_edges(q)
        self._lock = threading.Lock()
        self._cond = threading.Condition(self._lock)
        self._pending: dict[int, object] = {}
        self._phase: str | None = None
        self._result: np.ndarray | None = None
        self._generation = 0

    def _endpoint(self, rank: int) -> Endpoint:
        return self.coordinator if rank == _COORD else self.workers[rank]

    def _route_and_fold(self, contribs: list, phase: str) -> np.ndarray:
        blocks: list[np.ndarray] = []
        local: list[np.ndarray] = []
        length = None
        for c in contribs:
            parts = c if isinstance(c, (list, tuple)) else [c]
            parts = [np.atleast_1d(np.asarray(p, dtype=np.float64)) for p in parts]
            folded = _fold(parts)
            if length is None:
                length = folded.size
            elif folded.size != length:
                raise ValueError("tree_sum contributions must have equal length")
            blocks.extend(parts)
            local.append(folded)

        # Walk the tree for transport/ledger; merge values ride the edges.
        carried = list(local)
        for (src, dst) in self._up:
            if dst == _COORD:
                self.fabric.send(self._endpoint(src), self.coordinator, carried[src], phase)
            else:
                self.fabric.send(self._endpoint(src), self._endpoint(dst), carried[src], phase)
                carried[dst] = carried[dst] + carried[src]
        result = _fold(blocks)
        for (src, dst) in self._down:
            self.fabric.send(self._endpoint(src), self._endpoint(dst), result, phase)
        # Drain every delivery so inboxes stay clean between collectives.
        for (_, dst) in self._up + self._down:
            self.fabric.recv(self._endpoint(dst))
        return result

    def reduce(self, contribs: list, phase: str) -> np.ndarray:
        """Driver-side collective: all q contributions supplied at once."""
        if len(contribs) != self.q:
            raise ValueError(f"expected {self.q} contributions, got {len(contribs)}")
        return self._route_and_fold(contribs, phase)

    def contribute(self, rank: int, contrib, phase: str, timeout: float = 30.0) -> np.ndarray:
        """Worker-side blocking collective for threaded execution."""
        with self._cond:
            gen = self._generation
            if self._phase is None:
                self._phase = phase
            elif self._phase != phase:
                raise FabricError("mismatched phases inside one collective")
            self._pending[rank] = contrib
            if len(self._pending) == self.q:
                ordered = [self._pending[l] for l in range(self.q)]
                self._result = self._route_and_fold(ordered, phase)
                self._pending.clear()
                self._phase = None
                self._generation += 1
                self._cond.notify_all()
                return self._result
            if not self._cond.wait_for(lambda: self._generation > gen, timeout=timeout):
                raise FabricError("tree_sum collective timed out (absent worker?)")
            return self._result
