"""Discrete-event generator for labeled Modbus/TCP traffic.

A single virtual clock drives polling "slots". Each slot hosts one event:
a normal request/response exchange, a single malicious write, a flood
burst, or a man-in-the-middle episode. Every emitted frame is encoded,
passed through a passive tap that decodes it and extracts the 19 packet
features, and returned as a :class:`PacketRecord`.

Events are assigned to sessions drawn uniformly from the same pool of
client/PLC pairs regardless of label, so addresses, ports, sequence numbers
and transaction ids carry no information about the class.
"""

from __future__ import annotations

import configparser
import ipaddress
import itertools
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import modbus
from .features import relative_time
from .plant import (HIGH, HIGHEST, LOW, LOWEST, PUMP_SPEED, READABLE_REGISTERS, TANK1_LEVEL,
                    TANK2_LEVEL, WRITABLE_REGISTERS, IllegalDataAddress, TwoTankPLC)

CLASS_NAMES = ("Normal", "Pump", "T1", "T2", "HH", "LL", "H", "L", "SCAN", "CRC", "MITM")
UNCORRELATED = ("Pump", "T1", "T2", "HH", "LL", "H", "L")
FLOODS = ("SCAN", "CRC")
CORRELATED = ("SCAN", "CRC", "MITM")
CLASS_INDEX = {name: i for i, name in enumerate(CLASS_NAMES)}

FEATURE_NAMES = (
    "src_ip", "dst_ip", "src_port", "dst_port", "tcp_seq", "transaction_id",
    "function_code", "reference_number", "register_data", "exception_code",
    "timestamp", "relative_time", "highest_threshold", "lowest_threshold",
    "high_threshold", "low_threshold", "pump_speed", "tank1_level", "tank2_level",
)

MASTER_IP = int(ipaddress.IPv4Address("10.0.0.2"))
ATTACKER_IP = int(ipaddress.IPv4Address("10.0.0.9"))
PLC_IPS = tuple(int(ipaddress.IPv4Address(f"10.0.0.{i}")) for i in (5, 6, 7))
CLIENT_IPS = (MASTER_IP, ATTACKER_IP)
MODBUS_PORT = 502

# Value bands the HMI uses for legitimate threshold writes. Disjoint and
# ordered, so any in-band write keeps lowest <= low <= high <= highest.
NORMAL_BANDS = {LOWEST: (5, 15), LOW: (18, 30), HIGH: (70, 82), HIGHEST: (85, 95)}
# operator setpoint presets; legal threshold writes pick one of these
SETPOINTS = {LOWEST: (8, 10, 12), LOW: (20, 25), HIGH: (75, 80), HIGHEST: (88, 90, 92)}
PUMP_RANGE = (0, 10)
THRESHOLD_ORDER = (HIGHEST, LOWEST, HIGH, LOW)

ATTACK_REGISTER = {"Pump": PUMP_SPEED, "T1": TANK1_LEVEL, "T2": TANK2_LEVEL,
                   "HH": HIGHEST, "LL": LOWEST, "H": HIGH, "L": LOW}
# (low, high, weight) value ranges per uncorrelated attack.
ATTACK_VALUES = {
    "Pump": ((11, 100, 1.0),),
    "T1": ((101, 1000, 1.0),),
    "T2": ((101, 1000, 1.0),),
    "HH": ((0, 65, 1.0),),
    "LL": ((35, 100, 1.0),),
    "H": ((100, 150, 0.8), (0, 12, 0.2)),
    "L": ((90, 150, 0.8), (0, 3, 0.2)),
}


@dataclass(frozen=True, slots=True)
class PacketRecord:
    src_ip: int
    dst_ip: int
    src_port: int
    dst_port: int
    tcp_seq: int
    transaction_id: int
    function_code: int
    reference_number: int
    register_data: int
    exception_code: int
    timestamp: float
    relative_time: float
    highest_threshold: int
    lowest_threshold: int
    high_threshold: int
    low_threshold: int
    pump_speed: int
    tank1_level: int
    tank2_level: int
    label: str
    checksum_mismatch: bool = False

    def features(self) -> tuple:
        return tuple(getattr(self, name) for name in FEATURE_NAMES)

    @property
    def is_request(self) -> bool:
        return self.dst_port == MODBUS_PORT


class ConfigError(ValueError):
    pass


def _default_mix():
    return {"Normal": 1.0}


@dataclass(frozen=True)
class TrafficConfig:
    seed: int = 0
    n_packets: int = 100_000
    duration: float | None = None
    mix: dict = field(default_factory=_default_mix)
    poll_period: float = 1.0
    poll_jitter: float = 0.1
    write_prob: float = 0.2
    setpoint_share: float = 0.1
    response_latency: tuple = (0.001, 0.005)
    flood_rate: float = 1000.0
    flood_length: int = 200
    mitm_exchanges: int = 40
    mitm_delay: float = 0.02
    mitm_retransmit_prob: float = 0.25
    session_lifetime: tuple = (600.0, 6000.0)
    start_time: float = 0.0

    def validate(self) -> "TrafficConfig":
        unknown = set(self.mix) - set(CLASS_NAMES)
        if unknown:
            raise ConfigError(f"unknown classes in mix: {sorted(unknown)}")
        ratios = list(self.mix.values())
        if any(not math.isfinite(r) or r < 0 for r in ratios):
            raise ConfigError("mix ratios must be finite and non-negative")
        if not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
            raise ConfigError(f"mix ratios sum to {sum(ratios)!r}, expected 1")
        if self.poll_period <= 0:
            raise ConfigError("poll_period must be positive")
        if not 0 <= self.poll_jitter < 1:
            raise ConfigError("poll_jitter must be in [0, 1)")
        if not all(0 <= p <= 1 for p in (self.write_prob, self.setpoint_share,
                                          self.mitm_retransmit_prob)):
            raise ConfigError("probabilities must be in [0, 1]")
        if self.flood_length < 1 or self.mitm_exchanges < 0 or self.n_packets < 0:
            raise ConfigError("counts must be non-negative (flood_length >= 1)")
        if self.flood_rate <= 0 or self.mitm_delay <= 0:
            raise ConfigError("flood_rate and mitm_delay must be positive")
        if 1.0 / self.flood_rate >= self.poll_period:
            raise ConfigError("flood_rate must exceed the polling rate")
        lo, hi = self.session_lifetime
        if not 0 < lo <= hi:
            raise ConfigError("session_lifetime must satisfy 0 < min <= max")
        if not 0 < self.response_latency[0] <= self.response_latency[1]:
            raise ConfigError("response_latency must satisfy 0 < min <= max")
        if self.duration is not None and self.duration <= 0:
            raise ConfigError("duration must be positive")
        return self


def _split(total: float, names) -> dict:
    return {n: total / len(names) for n in names}


PRESETS = {
    "dataset-i": dict(n_packets=298_700, mix={"Normal": 0.78, **_split(0.22, UNCORRELATED)}),
    "dataset-ii": dict(n_packets=201_300, mix={"Normal": 0.56, **_split(0.44, CORRELATED)}),
    "online": dict(n_packets=100_000,
                   mix={"Normal": 0.60, **_split(0.40, UNCORRELATED + CORRELATED)}),
}


def preset(name: str, **overrides) -> TrafficConfig:
    try:
        base = dict(PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    base.update(overrides)
    return TrafficConfig(**base).validate()


_TUPLE_FIELDS = {"response_latency", "session_lifetime"}


def load_config(path, base: TrafficConfig | None = None) -> TrafficConfig:
    """Read a ``[traffic]`` / ``[mix]`` key = value file over ``base``.

    Example::

        [traffic]
        seed = 7
        n_packets = 50000
        flood_length = 200
        session_lifetime = 600, 6000

        [mix]
        Normal = 0.56
        SCAN = 0.15
        CRC = 0.15
        MITM = 0.14
    """
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    cfg = base or TrafficConfig()
    known = {f.name: f for f in fields(TrafficConfig)}
    updates = {}
    if parser.has_section("traffic"):
        for key, raw in parser.items("traffic"):
            if key not in known or key == "mix":
                raise ConfigError(f"{path}: unknown traffic key {key!r}")
            updates[key] = _parse_value(key, raw, getattr(cfg, key))
    if parser.has_section("mix"):
        try:
            updates["mix"] = {k: float(v) for k, v in parser.items("mix")}
        except ValueError as exc:
            raise ConfigError(f"{path}: bad mix ratio ({exc})") from exc
    return replace(cfg, **updates).validate()


def _parse_value(key, raw, current):
    try:
        if key in _TUPLE_FIELDS:
            return tuple(float(x) for x in raw.split(","))
        if key == "duration":
            return None if raw.strip().lower() in ("", "none") else float(raw)
        if isinstance(current, bool):
            return raw.strip().lower() in ("1", "true", "yes")
        if isinstance(current, int):
            return int(raw)
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


@dataclass
class Session:
    client_ip: int
    server_ip: int
    client_port: int
    start: float
    expires: float
    client_seq: int
    server_seq: int
    next_tid: int

    def key(self):
        return (self.client_ip, self.client_port, self.server_ip)

    def take_tid(self) -> int:
        tid = self.next_tid
        self.next_tid = (tid + 1) & 0xFFFF
        return tid


class Tap:
    """Passive observer: decodes frames and extracts per-packet features.

    Read responses carry no register address on the wire, so the tap pairs
    them with the request that had the same transaction id in the session.
    """

    def __init__(self, plc: TwoTankPLC):
        self.plc = plc
        self._refs: dict = {}

    def forget(self, session: Session) -> None:
        self._refs.pop(session.key(), None)

    def observe(self, ts, session, from_client, seq, raw, label) -> PacketRecord:
        frame = modbus.decode(raw)
        refs = self._refs.setdefault(session.key(), {})
        if not frame.is_response:
            refs[frame.transaction_id] = frame.reference_number
            ref = frame.reference_number
        else:
            ref = frame.reference_number or refs.get(frame.transaction_id, 0)
        r = self.plc.registers
        if from_client:
            src, sport, dst, dport = session.client_ip, session.client_port, session.server_ip, MODBUS_PORT
        else:
            src, sport, dst, dport = session.server_ip, MODBUS_PORT, session.client_ip, session.client_port
        return PacketRecord(
            src_ip=src, dst_ip=dst, src_port=sport, dst_port=dport, tcp_seq=seq,
            transaction_id=frame.transaction_id, function_code=frame.function_code,
            reference_number=ref, register_data=frame.data[0] if frame.data else 0,
            exception_code=frame.exception_code or 0, timestamp=float(ts),
            relative_time=relative_time(ts, session.start),
            highest_threshold=r.read(HIGHEST), lowest_threshold=r.read(LOWEST),
            high_threshold=r.read(HIGH), low_threshold=r.read(LOW),
            pump_speed=r.read(PUMP_SPEED), tank1_level=r.read(TANK1_LEVEL),
            tank2_level=r.read(TANK2_LEVEL), label=label,
            checksum_mismatch=frame.checksum_mismatch,
        )


_EVENT_KINDS = ("Normal",) + UNCORRELATED + CORRELATED


class TrafficGenerator:
    """Stateful event generator around one virtual clock and one plant.

    Each event family draws from its own random stream, so switching an
    attack family off leaves the remaining traffic unchanged.
    """

    def __init__(self, cfg: TrafficConfig):
        self.cfg = cfg.validate()
        streams = np.random.SeedSequence(cfg.seed).spawn(6)
        (self._rng_schedule, self._rng_normal, self._rng_uncorrelated,
         self._rng_flood, self._rng_mitm, self._rng_session) = (
            np.random.default_rng(s) for s in streams)
        self.plc = TwoTankPLC()
        self.tap = Tap(self.plc)
        self.clock = cfg.start_time
        self._slot = cfg.start_time
        self._last_step = cfg.start_time
        self._sessions: dict = {}
        self._probs = self._event_probabilities()

    # -- scheduling ---------------------------------------------------------

    def _expected_packets(self, kind: str) -> float:
        cfg = self.cfg
        if kind in FLOODS:
            return float(cfg.flood_length)
        if kind == "MITM":
            return max(cfg.mitm_exchanges, 1) * (4 + cfg.mitm_retransmit_prob)
        return 2.0

    def _event_probabilities(self) -> np.ndarray:
        w = np.array([self.cfg.mix.get(k, 0.0) / self._expected_packets(k) for k in _EVENT_KINDS])
        return np.cumsum(w / w.sum())

    def _draw_kind(self) -> str:
        u = self._rng_schedule.random()
        i = int(np.searchsorted(self._probs, u, side="right"))
        return _EVENT_KINDS[min(i, len(_EVENT_KINDS) - 1)]

    def _gap(self) -> float:
        j = self.cfg.poll_jitter
        return self.cfg.poll_period * self._rng_schedule.uniform(1 - j, 1 + j)

    def _latency(self, rng) -> float:
        return rng.uniform(*self.cfg.response_latency)

    def _advance_plant(self, t: float) -> None:
        if t > self._last_step:
            self.plc.step(t - self._last_step)
            self._last_step = t

    # -- sessions -----------------------------------------------------------

    def _session(self, t: float) -> Session:
        rng = self._rng_session
        client = CLIENT_IPS[rng.integers(len(CLIENT_IPS))]
        server = PLC_IPS[rng.integers(len(PLC_IPS))]
        s = self._sessions.get((client, server))
        if s is None or t >= s.expires:
            if s is not None:
                self.tap.forget(s)
            lo, hi = self.cfg.session_lifetime
            s = Session(client, server, int(rng.integers(49152, 65536)), t, t + rng.uniform(lo, hi),
                        int(rng.integers(0, 2**32)), int(rng.integers(0, 2**32)),
                        int(rng.integers(0, 2**16)))
            self._sessions[(client, server)] = s
        return s

    def _send(self, ts, session, from_client, frame, label, corrupt=0, seq=None):
        raw = modbus.encode(frame)
        if corrupt:
            raw = modbus.corrupt_checksum(raw, corrupt)
        attr = "client_seq" if from_client else "server_seq"
        own = getattr(session, attr)
        if seq is None:
            seq = own
            setattr(session, attr, (own + len(raw)) & 0xFFFFFFFF)
        return self.tap.observe(ts, session, from_client, seq, raw, label)

    # -- request content ----------------------------------------------------

    def _legal_write(self, rng):
        # mostly pump commands; setpoint changes are the operator's rare move
        if rng.random() < self.cfg.setpoint_share:
            ref = THRESHOLD_ORDER[rng.integers(len(THRESHOLD_ORDER))]
        else:
            ref = PUMP_SPEED
        if ref == PUMP_SPEED:
            level = self.plc.state.tank1_level
            if level > 60:
                value = rng.integers(0, 4)
            elif level < 40:
                value = rng.integers(5, PUMP_RANGE[1] + 1)
            else:
                value = rng.integers(PUMP_RANGE[0], PUMP_RANGE[1] + 1)
        else:
            choices = SETPOINTS[ref]
            value = choices[rng.integers(len(choices))]
        return ref, int(value)

    def _random_read_ref(self, rng) -> int:
        return READABLE_REGISTERS[rng.integers(len(READABLE_REGISTERS))]

    def _request(self, rng, session, write=None):
        """Build one request frame; ``write`` forces a (ref, value) write."""
        tid = session.take_tid()
        if write is None and rng.random() < self.cfg.write_prob:
            write = self._legal_write(rng)
        if write is None:
            return modbus.request_read(tid, self._random_read_ref(rng)), None
        return modbus.request_write(tid, write[0], [write[1]]), write

    def _apply(self, request, write):
        """Let the PLC process ``request`` and build its response frame."""
        tid = request.transaction_id
        try:
            if write is not None:
                self.plc.write(*write)
                return modbus.response_write(tid, write[0], 1)
            return modbus.response_read(tid, [self.plc.read(request.reference_number)])
        except (IllegalDataAddress, ValueError) as exc:
            code = getattr(exc, "exception_code", 4)
            return modbus.exception_response(tid, request.function_code, code)

    # -- events -------------------------------------------------------------

    def normal_exchange(self, t: float, label: str = "Normal") -> list:
        rng = self._rng_normal
        self._advance_plant(t)
        s = self._session(t)
        req, write = self._request(rng, s)
        resp = self._apply(req, write)
        return [self._send(t, s, True, req, label),
                self._send(t + self._latency(rng), s, False, resp, label)]

    def uncorrelated(self, kind: str, t: float) -> list:
        """One out-of-policy write of the register ``kind`` targets, plus its response."""
        if kind not in UNCORRELATED:
            raise ValueError(f"{kind!r} is not an uncorrelated attack")
        rng = self._rng_uncorrelated
        self._advance_plant(t)
        s = self._session(t)
        ranges = ATTACK_VALUES[kind]
        weights = np.array([w for _, _, w in ranges])
        lo, hi, _ = ranges[rng.choice(len(ranges), p=weights / weights.sum())]
        req, write = self._request(rng, s, write=(ATTACK_REGISTER[kind], int(rng.integers(lo, hi + 1))))
        resp = self._apply(req, write)
        return [self._send(t, s, True, req, kind),
                self._send(t + self._latency(rng), s, False, resp, kind)]

    def flood(self, kind: str, t: float, length: int | None = None) -> list:
        """Burst of requests at ``flood_rate`` with no responses.

        SCAN sweeps the readable registers in address-map order from a random
        starting point; every request is a valid read. CRC replays writes of
        the registers' current values with a corrupted checksum trailer, so
        the PLC discards them and no register changes.
        """
        if kind not in FLOODS:
            raise ValueError(f"{kind!r} is not a flood attack")
        rng = self._rng_flood
        self._advance_plant(t)
        s = self._session(t)
        n = self.cfg.flood_length if length is None else length
        dt = 1.0 / self.cfg.flood_rate
        start = int(rng.integers(len(READABLE_REGISTERS)))
        out = []
        for k in range(n):
            tid = s.take_tid()
            corrupt = 0
            if kind == "SCAN":
                ref = READABLE_REGISTERS[(start + k) % len(READABLE_REGISTERS)]
                frame = modbus.request_read(tid, ref)
            else:
                ref = WRITABLE_REGISTERS[rng.integers(len(WRITABLE_REGISTERS))]
                frame = modbus.request_write(tid, ref, [self.plc.read(ref)])
                corrupt = int(rng.integers(1, 0xFFFF))
            out.append(self._send(t + k * dt, s, True, frame, kind, corrupt=corrupt))
        return out

    def mitm(self, t: float, n_exchanges: int | None = None) -> list:
        """Exchanges relayed through an ARP-spoofing host.

        Every packet is seen twice (original and the attacker's delayed
        forwarded copy) and requests are sometimes retransmitted with a
        perturbed sequence number. All packets are labeled MITM.
        """
        rng = self._rng_mitm
        n = self.cfg.mitm_exchanges if n_exchanges is None else n_exchanges

        def delay():
            return self.cfg.mitm_delay * rng.uniform(0.5, 1.5)

        out = []
        for k in range(n):
            if k:
                t = max(t + self._gap(), out[-1].timestamp + 1e-6)
            self._slot = t
            self._advance_plant(t)
            s = self._session(t)
            req, write = self._request(rng, s)
            seq = s.client_seq
            t_fwd = t + delay()
            pkts = [self._send(t, s, True, req, "MITM")]
            pkts.append(self._send(t_fwd, s, True, req, "MITM", seq=seq))
            if rng.random() < self.cfg.mitm_retransmit_prob:
                jitter = int(rng.integers(1, 1461)) * (1 if rng.random() < 0.5 else -1)
                pkts.append(self._send(t_fwd + delay(), s, True, req, "MITM",
                                       seq=(seq + jitter) & 0xFFFFFFFF))
            resp = self._apply(req, write)
            t_resp = pkts[-1].timestamp + self._latency(rng)
            rseq = s.server_seq
            pkts.append(self._send(t_resp, s, False, resp, "MITM"))
            pkts.append(self._send(t_resp + delay(), s, False, resp, "MITM", seq=rseq))
            out.extend(pkts)
        return out

    def event(self, kind: str, t: float) -> list:
        if kind == "Normal":
            return self.normal_exchange(t)
        if kind in UNCORRELATED:
            return self.uncorrelated(kind, t)
        if kind in FLOODS:
            return self.flood(kind, t)
        if kind == "MITM":
            return self.mitm(t)
        raise ValueError(f"unknown event kind {kind!r}")

    def stream(self):
        """Endless timestamp-ordered record stream; pull only what you need."""
        while True:
            kind = self._draw_kind()
            self._slot = self.clock
            records = self.event(kind, self.clock)
            yield from records
            nxt = self._slot + self._gap()
            if records:
                nxt = max(nxt, records[-1].timestamp + self.cfg.response_latency[1])
            self.clock = nxt


def iter_dataset(cfg: TrafficConfig):
    """Records of ``cfg`` in timestamp order, bounded by n_packets and duration."""
    cfg.validate()
    it = TrafficGenerator(cfg).stream()
    if cfg.duration is not None:
        end = cfg.start_time + cfg.duration
        it = itertools.takewhile(lambda r: r.timestamp < end, it)
    return itertools.islice(it, cfg.n_packets)


def generate(cfg: TrafficConfig) -> list:
    return list(iter_dataset(cfg))


def gen_normal(duration: float, seed: int = 0, **kw) -> list:
    cfg = TrafficConfig(seed=seed, duration=duration, n_packets=2**62, mix={"Normal": 1.0}, **kw)
    return generate(cfg)


def config_dict(cfg: TrafficConfig) -> dict:
    d = asdict(cfg)
    d["mix"] = {k: d["mix"][k] for k in CLASS_NAMES if k in d["mix"]}
    return d


# -- oracles ------------------------------------------------------------------

def legality_violations(rec: PacketRecord) -> list:
    """Per-packet policy rules a signature IDS could check on the raw fields."""
    bad = []
    fc = rec.function_code
    if rec.exception_code or fc not in (modbus.READ_HOLDING_REGISTERS, modbus.WRITE_MULTIPLE_REGISTERS):
        bad.append("function")
    if rec.reference_number not in READABLE_REGISTERS:
        bad.append("address")
    if fc == modbus.WRITE_MULTIPLE_REGISTERS:
        ref = rec.reference_number
        if ref not in WRITABLE_REGISTERS:
            bad.append("read-only register written")
        elif rec.is_request:
            lo, hi = PUMP_RANGE if ref == PUMP_SPEED else NORMAL_BANDS[ref]
            if not lo <= rec.register_data <= hi:
                bad.append("write value out of policy")
    if not PUMP_RANGE[0] <= rec.pump_speed <= PUMP_RANGE[1]:
        bad.append("pump speed")
    if not (0 <= rec.tank1_level <= 100 and 0 <= rec.tank2_level <= 100):
        bad.append("tank level")
    th = ((rec.lowest_threshold, LOWEST), (rec.low_threshold, LOW),
          (rec.high_threshold, HIGH), (rec.highest_threshold, HIGHEST))
    if any(not NORMAL_BANDS[reg][0] <= v <= NORMAL_BANDS[reg][1] for v, reg in th):
        bad.append("threshold")
    return bad
