"""Simulated world plumbing: places, advertisement packets, range, delivery.

The over-the-air record is frozen at 22 bytes: the 16-bit service UUID
0xFD6F little-endian, then 16 bytes of RPI, then 4 bytes of AEM.  Anything
that does not parse to that shape is classified as a non-protocol packet,
never an error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

SERVICE_UUID = 0xFD6F
RPI_LENGTH = 16
AEM_LENGTH = 4
PACKET_LENGTH = 2 + RPI_LENGTH + AEM_LENGTH

EARTH_RADIUS_M = 6371000.0


def encode_advertisement(rpi: bytes, aem: bytes) -> bytes:
    if len(rpi) != RPI_LENGTH:
        raise ValueError(f"rpi must be {RPI_LENGTH} bytes, got {len(rpi)}")
    if len(aem) != AEM_LENGTH:
        raise ValueError(f"aem must be {AEM_LENGTH} bytes, got {len(aem)}")
    return SERVICE_UUID.to_bytes(2, "little") + rpi + aem


def decode_advertisement(data: bytes) -> tuple[bytes, bytes] | None:
    """Parse a protocol packet; returns None for anything else."""
    if len(data) != PACKET_LENGTH:
        return None
    if int.from_bytes(data[:2], "little") != SERVICE_UUID:
        return None
    return data[2 : 2 + RPI_LENGTH], data[2 + RPI_LENGTH :]


def haversine_m(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance in meters between two (lat, lon) points."""
    lat1, lon1 = math.radians(a[0]), math.radians(a[1])
    lat2, lon2 = math.radians(b[0]), math.radians(b[1])
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(math.sqrt(h))


def in_range(
    a: tuple[float, float], b: tuple[float, float], *, ble_range_m: float = 10.0
) -> bool:
    return haversine_m(a, b) <= ble_range_m


def path_loss_db(
    distance_m: float,
    *,
    ref_db: float = 40.0,
    per_decade_db: float = 20.0,
    min_distance_m: float = 0.1,
) -> float:
    """Log-distance loss, clamped below min_distance_m to keep log10 sane."""
    d = max(distance_m, min_distance_m)
    return ref_db + per_decade_db * math.log10(d)


@dataclass(frozen=True)
class Place:
    """Named disc scenarios use to position actors."""

    name: str
    lat: float
    lon: float
    radius_m: float

    def __post_init__(self) -> None:
        if self.radius_m <= 0:
            raise ValueError(f"place {self.name!r} needs a positive radius")

    @property
    def center(self) -> tuple[float, float]:
        return (self.lat, self.lon)


@dataclass
class SimClock:
    """Discrete simulation clock; strictly monotone."""

    now: int = 0
    tick_seconds: int = 10

    def __post_init__(self) -> None:
        if self.tick_seconds <= 0:
            raise ValueError("tick_seconds must be positive")

    def advance(self) -> int:
        self.now += self.tick_seconds
        return self.now


@dataclass(frozen=True)
class Station:
    """One radio participant for a single tick: position plus outgoing packets."""

    name: str
    position: tuple[float, float]
    tx_power_dbm: int
    packets: tuple[bytes, ...] = ()


@dataclass(frozen=True)
class Delivery:
    sender: str
    receiver: str
    packet: bytes
    rssi: float


def broadcast_step(
    stations: list[Station],
    *,
    ble_range_m: float = 10.0,
    path_loss_ref_db: float = 40.0,
    path_loss_per_decade_db: float = 20.0,
    min_path_distance_m: float = 0.1,
) -> list[Delivery]:
    """Deliver every station's packets to every other station in range.

    Output order is fixed (sender name, then receiver name, then packet
    order) so identical world states always produce identical delivery
    lists.  rssi = tx_power - path_loss(distance); no interference or loss.
    """
    ordered = sorted(stations, key=lambda s: s.name)
    deliveries: list[Delivery] = []
    for sender in ordered:
        if not sender.packets:
            continue
        for receiver in ordered:
            if receiver.name == sender.name:
                continue
            distance = haversine_m(sender.position, receiver.position)
            if distance > ble_range_m:
                continue
            rssi = sender.tx_power_dbm - path_loss_db(
                distance,
                ref_db=path_loss_ref_db,
                per_decade_db=path_loss_per_decade_db,
                min_distance_m=min_path_distance_m,
            )
            for packet in sender.packets:
                deliveries.append(
                    Delivery(sender=sender.name, receiver=receiver.name, packet=packet, rssi=rssi)
                )
    return deliveries
