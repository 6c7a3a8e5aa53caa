"""Two-tank process simulator and the PLC register map that fronts it."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

PUMP_SPEED = 32210
TANK1_LEVEL = 42210
TANK2_LEVEL = 42211
HIGHEST = 42212
LOWEST = 42213
HIGH = 42214
LOW = 42215

THRESHOLD_REGISTERS = {HIGHEST: "highest", LOWEST: "lowest", HIGH: "high", LOW: "low"}
SENSOR_REGISTERS = (TANK1_LEVEL, TANK2_LEVEL)
WRITABLE_REGISTERS = (PUMP_SPEED, HIGHEST, LOWEST, HIGH, LOW)
READABLE_REGISTERS = (PUMP_SPEED, TANK1_LEVEL, TANK2_LEVEL, HIGHEST, LOWEST, HIGH, LOW)

LEVEL_MIN = 0.0
LEVEL_MAX = 100.0


class IllegalDataAddress(KeyError):
    """Register address not mapped (Modbus exception 2)."""

    exception_code = 2


class IllegalDataValue(ValueError):
    """Value does not fit a 16-bit register (Modbus exception 3)."""

    exception_code = 3


@dataclass(frozen=True)
class Thresholds:
    highest: int = 90
    high: int = 80
    low: int = 20
    lowest: int = 10

    def ordered(self) -> bool:
        return self.lowest <= self.low <= self.high <= self.highest


@dataclass(frozen=True)
class TankState:
    tank1_level: float = 50.0
    tank2_level: float = 50.0
    pump_speed: int = 5
    thresholds: Thresholds = field(default_factory=Thresholds)


@dataclass(frozen=True)
class PlantParams:
    """Linear plant constants (level units per second)."""

    fill_per_speed: float = 0.02
    transfer_rate: float = 0.08
    drain_rate: float = 0.08
    pump_max: int = 10


def _clamp(x: float) -> float:
    return min(LEVEL_MAX, max(LEVEL_MIN, x))


def step(state: TankState, dt: float, params: PlantParams = PlantParams()) -> TankState:
    """Advance the plant by ``dt`` seconds.

    Tank 1 fills at ``fill_per_speed * pump_speed`` and drains into tank 2 at a
    constant rate; tank 2 drains at a constant rate. Levels are clamped.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    inflow = params.fill_per_speed * state.pump_speed * dt
    available = max(0.0, state.tank1_level + inflow)
    transfer = min(params.transfer_rate * dt, available)
    tank1 = _clamp(state.tank1_level + inflow - transfer)
    tank2 = _clamp(state.tank2_level + transfer - params.drain_rate * dt)
    return replace(state, tank1_level=tank1, tank2_level=tank2)


def quantize(level: float) -> int:
    """One level unit per register count, rounded half up."""
    return int(math.floor(level + 0.5))


class RegisterMap:
    """16-bit holding registers keyed by address."""

    def __init__(self, registers: dict[int, int] | None = None):
        self._registers: dict[int, int] = dict(registers or {})

    @classmethod
    def from_state(cls, state: TankState) -> "RegisterMap":
        th = state.thresholds
        return cls({
            PUMP_SPEED: state.pump_speed,
            TANK1_LEVEL: quantize(state.tank1_level),
            TANK2_LEVEL: quantize(state.tank2_level),
            HIGHEST: th.highest,
            LOWEST: th.lowest,
            HIGH: th.high,
            LOW: th.low,
        })

    def __contains__(self, addr: int) -> bool:
        return addr in self._registers

    def __len__(self) -> int:
        return len(self._registers)

    def read(self, addr: int) -> int:
        try:
            return self._registers[addr]
        except KeyError:
            raise IllegalDataAddress(addr) from None

    def write(self, addr: int, value: int) -> None:
        if addr not in self._registers:
            raise IllegalDataAddress(addr)
        if not 0 <= value <= 0xFFFF:
            raise IllegalDataValue(value)
        self._registers[addr] = int(value)

    def snapshot(self) -> dict[int, int]:
        return dict(self._registers)


def read_register(registers: RegisterMap, addr: int) -> int:
    return registers.read(addr)


def write_register(registers: RegisterMap, addr: int, value: int) -> None:
    registers.write(addr, value)


class TwoTankPLC:
    """Register-map front end for the two-tank plant.

    Writes land in the register map immediately and are consumed by the plant
    on the next :meth:`step`. With ``interlock`` enabled an out-of-policy pump
    speed or threshold set is rolled back to the last accepted values before
    the plant consumes it; sensor registers are always refreshed from the
    plant state, so a spoofed level only survives until the next step.
    """

    def __init__(self, state: TankState | None = None, params: PlantParams | None = None,
                 interlock: bool = True):
        self.params = params or PlantParams()
        self.state = state or TankState()
        self.interlock = interlock
        self.registers = RegisterMap.from_state(self.state)

    def read(self, addr: int) -> int:
        return self.registers.read(addr)

    def write(self, addr: int, value: int) -> None:
        self.registers.write(addr, value)

    def policy_violations(self) -> list[int]:
        """Writable registers whose current values break the operating policy."""
        bad = []
        if not 0 <= self.registers.read(PUMP_SPEED) <= self.params.pump_max:
            bad.append(PUMP_SPEED)
        th = self._thresholds_from_registers()
        if not th.ordered() or not 0 <= th.lowest <= th.highest <= LEVEL_MAX:
            bad.extend(THRESHOLD_REGISTERS)
        return bad

    def _thresholds_from_registers(self) -> Thresholds:
        r = self.registers
        return Thresholds(highest=r.read(HIGHEST), high=r.read(HIGH),
                          low=r.read(LOW), lowest=r.read(LOWEST))

    def _consume_registers(self) -> None:
        pump = self.registers.read(PUMP_SPEED)
        th = self._thresholds_from_registers()
        if self.interlock:
            if not 0 <= pump <= self.params.pump_max:
                pump = self.state.pump_speed
            if not th.ordered() or th.highest > LEVEL_MAX:
                th = self.state.thresholds
        self.state = replace(self.state, pump_speed=pump, thresholds=th)

    def step(self, dt: float) -> TankState:
        self._consume_registers()
        self.state = step(self.state, dt, self.params)
        self.registers = RegisterMap.from_state(self.state)
        return self.state
