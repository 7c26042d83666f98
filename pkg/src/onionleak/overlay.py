"""Simulated onion-routing overlay.

Clients build 3-hop circuits and multiplex TCP-like streams onto them. Onion
layers are symbolic: the only place payloads become visible is the exit
relay, where registered taps receive :class:`ExitObservation` records. Those
records deliberately carry no client identity; the true stream-to-client
mapping goes to the :class:`GroundTruthLedger`, which only the evaluator
reads.
"""

from __future__ import annotations

import base64
import json
import random
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .btwire import Endpoint
from .errors import NoRelaysAvailable, StreamClosed

HOPS = 3
MAX_DIRTINESS_S = 600
TO_DESTINATION = "to-destination"
TO_CLIENT = "to-client"


@dataclass(frozen=True, slots=True)
class Relay:
    relay_id: int
    ip: str
    is_exit: bool


@dataclass(slots=True)
class Circuit:
    id: int
    hops: tuple
    created_at: int
    exit_relay: Relay
    first_stream_at: Optional[int] = None
    stream_count: int = 0


@dataclass(slots=True)
class Stream:
    id: int
    circuit_id: int
    destination: Endpoint
    opened_at: int
    encrypted: bool
    exit_relay: Relay
    source_port: int
    closed: bool = False

    @property
    def exit_source(self) -> Endpoint:
        """Address the destination sees as the connection's source."""
        return Endpoint(self.exit_relay.ip, self.source_port)


@dataclass(frozen=True, slots=True)
class ExitObservation:
    time: int
    exit_relay: int
    circuit_id: int
    stream_id: int
    destination: Endpoint
    payload: bytes
    direction: str
    opaque: bool = False
    size: int = 0

    def to_record(self) -> dict:
        return {
            "time": self.time,
            "exit_relay": self.exit_relay,
            "circuit_id": self.circuit_id,
            "stream_id": self.stream_id,
            "destination": [self.destination.ip, self.destination.port],
            "direction": self.direction,
            "opaque": self.opaque,
            "size": self.size,
            "payload": base64.b64encode(self.payload).decode("ascii"),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "ExitObservation":
        return cls(
            time=rec["time"],
            exit_relay=rec["exit_relay"],
            circuit_id=rec["circuit_id"],
            stream_id=rec["stream_id"],
            destination=Endpoint(*rec["destination"]),
            payload=base64.b64decode(rec["payload"]),
            direction=rec["direction"],
            opaque=rec["opaque"],
            size=rec["size"],
        )


def dump_observations(observations: Iterable[ExitObservation], fh) -> int:
    n = 0
    for obs in observations:
        fh.write(json.dumps(obs.to_record(), separators=(",", ":"), sort_keys=True))
        fh.write("\n")
        n += 1
    return n


def load_observations(fh) -> list[ExitObservation]:
    return [ExitObservation.from_record(json.loads(line)) for line in fh if line.strip()]


@dataclass(frozen=True, slots=True)
class Datagram:
    source: Endpoint
    destination: Endpoint
    payload: bytes


class GroundTruthLedger:
    """Write-once record of which client owns each circuit and stream."""

    def __init__(self):
        self._stream_client: dict[int, object] = {}
        self._stream_circuit: dict[int, int] = {}
        self._circuit_client: dict[int, object] = {}
        self._client_ips: dict[object, tuple] = {}

    def register_client(self, client_id, ips: Iterable[str]):
        if client_id in self._client_ips:
            raise ValueError(f"client {client_id!r} already recorded")
        self._client_ips[client_id] = tuple(ips)

    def record_circuit(self, circuit_id: int, client_id):
        if circuit_id in self._circuit_client:
            raise ValueError(f"circuit {circuit_id} already recorded")
        self._circuit_client[circuit_id] = client_id

    def record_stream(self, stream_id: int, circuit_id: int, client_id):
        if stream_id in self._stream_client:
            raise ValueError(f"stream {stream_id} already recorded")
        self._stream_client[stream_id] = client_id
        self._stream_circuit[stream_id] = circuit_id

    def client_of_stream(self, stream_id: int):
        return self._stream_client.get(stream_id)

    def client_of_circuit(self, circuit_id: int):
        return self._circuit_client.get(circuit_id)

    def circuit_of_stream(self, stream_id: int) -> Optional[int]:
        return self._stream_circuit.get(stream_id)

    def ips_of_client(self, client_id) -> tuple:
        return self._client_ips.get(client_id, ())

    def primary_ip(self, client_id) -> Optional[str]:
        ips = self._client_ips.get(client_id)
        return ips[0] if ips else None

    def streams(self) -> Iterable[int]:
        return self._stream_client.keys()

    def clients(self) -> Iterable:
        return self._client_ips.keys()

    def __len__(self):
        return len(self._stream_client)


@dataclass
class _ClientState:
    ip: str
    dirty: list = field(default_factory=list)
    clean: list = field(default_factory=list)
    rr: int = 0


Tap = Callable[[ExitObservation], Optional[bytes]]


class Overlay:
    """Circuits, streams, exit taps and the UDP bypass.

    ``pool_size`` is the number of clean circuits a client keeps built ahead
    of need. A stream joins a circuit already carrying streams only while the
    circuit's first stream is younger than ``max_dirtiness`` seconds.
    """

    def __init__(
        self,
        relays: Iterable[Relay],
        rng: random.Random,
        ledger: GroundTruthLedger,
        pool_size: int = 2,
        setup_latency: int = 0,
        max_dirtiness: int = MAX_DIRTINESS_S,
    ):
        self.relays = list(relays)
        self.exits = [r for r in self.relays if r.is_exit]
        self.non_exits = [r for r in self.relays if not r.is_exit]
        self.exit_ips = frozenset(r.ip for r in self.exits)
        self.rng = rng
        self.ledger = ledger
        self.pool_size = pool_size
        self.setup_latency = setup_latency
        self.max_dirtiness = max_dirtiness
        self._clients: dict[object, _ClientState] = {}
        self._taps: dict[int, list[Tap]] = defaultdict(list)
        self._next_circuit = 1
        self._next_stream = 1

    # -- registration ------------------------------------------------------

    def register_client(self, client_id, ip: str, other_ips: Iterable[str] = ()):
        if client_id in self._clients:
            raise ValueError(f"client {client_id!r} already registered")
        self._clients[client_id] = _ClientState(ip)
        self.ledger.register_client(client_id, (ip, *other_ips))

    def tap(self, exit_relay_id: int, callback: Tap):
        if not any(r.relay_id == exit_relay_id for r in self.exits):
            raise ValueError(f"relay {exit_relay_id} is not an exit")
        self._taps[exit_relay_id].append(callback)

    @property
    def tapped_exit_ids(self) -> frozenset:
        return frozenset(k for k, v in self._taps.items() if v)

    # -- circuits ------------------------------------------------------------

    def _build_circuit(self, client_id, now: int) -> Circuit:
        if not self.exits:
            raise NoRelaysAvailable("scenario defines no exit relays")
        exit_relay = self.exits[self.rng.randrange(len(self.exits))]
        others = self.non_exits if len(self.non_exits) >= HOPS - 1 else [
            r for r in self.relays if r is not exit_relay
        ]
        if len(others) < HOPS - 1:
            raise NoRelaysAvailable("not enough relays for a 3-hop circuit")
        path = self.rng.sample(others, HOPS - 1)
        circ = Circuit(
            id=self._next_circuit,
            hops=tuple(r.relay_id for r in path) + (exit_relay.relay_id,),
            created_at=now,
            exit_relay=exit_relay,
        )
        self._next_circuit += 1
        self.ledger.record_circuit(circ.id, client_id)
        return circ

    def _pick_circuit(self, client_id, state: _ClientState, now: int) -> Circuit:
        limit = self.max_dirtiness
        state.dirty = [c for c in state.dirty if now - c.first_stream_at < limit]
        if state.dirty:
            circ = state.dirty[state.rr % len(state.dirty)]
            state.rr += 1
            return circ
        circ = state.clean.pop(0) if state.clean else self._build_circuit(client_id, now)
        circ.first_stream_at = now
        state.dirty.append(circ)
        while len(state.clean) < self.pool_size:
            state.clean.append(self._build_circuit(client_id, now))
        return circ

    def circuits_of(self, client_id) -> list[Circuit]:
        """Currently eligible circuits; for tests and diagnostics only."""
        return list(self._clients[client_id].dirty)

    # -- streams -------------------------------------------------------------

    def open_stream(self, client_id, dst: Endpoint, now: int, encrypted: bool = False) -> Stream:
        state = self._clients.get(client_id)
        if state is None:
            raise KeyError(f"unknown client {client_id!r}")
        circ = self._pick_circuit(client_id, state, now)
        stream = Stream(
            id=self._next_stream,
            circuit_id=circ.id,
            destination=dst,
            opened_at=now + self.setup_latency,
            encrypted=encrypted,
            exit_relay=circ.exit_relay,
            source_port=self.rng.randrange(32768, 61000),
        )
        self._next_stream += 1
        circ.stream_count += 1
        self.ledger.record_stream(stream.id, circ.id, client_id)
        return stream

    def _observe(self, stream: Stream, payload: bytes, now: int, direction: str):
        taps = self._taps.get(stream.exit_relay.relay_id)
        obs = ExitObservation(
            time=max(now, stream.opened_at),
            exit_relay=stream.exit_relay.relay_id,
            circuit_id=stream.circuit_id,
            stream_id=stream.id,
            destination=stream.destination,
            payload=b"" if stream.encrypted else payload,
            direction=direction,
            opaque=stream.encrypted,
            size=len(payload),
        )
        return obs, taps

    def send(self, stream: Stream, payload: bytes, now: int) -> ExitObservation:
        """Client to destination. The destination sees ``stream.exit_source``."""
        if stream.closed:
            raise StreamClosed(f"stream {stream.id} is closed")
        obs, taps = self._observe(stream, payload, now, TO_DESTINATION)
        if taps:
            for tap in taps:
                tap(obs)
        return obs

    def reply(self, stream: Stream, payload: bytes, now: int) -> bytes:
        """Destination to client; returns what the client finally receives.

        A tap may return replacement octets (a man-in-the-middle rewrite);
        opaque streams cannot be rewritten.
        """
        if stream.closed:
            raise StreamClosed(f"stream {stream.id} is closed")
        obs, taps = self._observe(stream, payload, now, TO_CLIENT)
        if taps:
            for tap in taps:
                replaced = tap(obs)
                if replaced is not None and not stream.encrypted:
                    payload = replaced
                    obs = ExitObservation(
                        obs.time, obs.exit_relay, obs.circuit_id, obs.stream_id,
                        obs.destination, payload, obs.direction, obs.opaque, len(payload),
                    )
        return payload

    def close(self, stream: Stream):
        stream.closed = True

    def is_tapped(self, stream: Stream) -> bool:
        return bool(self._taps.get(stream.exit_relay.relay_id))

    # -- UDP bypass ----------------------------------------------------------

    def udp_send(self, client_id, dst: Endpoint, payload: bytes, src_port: int) -> Datagram:
        """UDP is not carried by circuits: the datagram leaves from the client's own address."""
        state = self._clients[client_id]
        return Datagram(Endpoint(state.ip, src_port), dst, payload)
