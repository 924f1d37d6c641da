"""Protocol and world parameters shared across the simulator.

Everything an operator might tune lives here with its default; scenario
configs override fields by name.  Values are validated once at construction
so the tick loop never has to re-check them.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

SECONDS_PER_DAY = 86400


@dataclass(frozen=True)
class SimParams:
    """Tunable knobs for one simulation run.

    The defaults encode the protocol as simulated: 2-hour pseudonym
    rotation, one advertisement per 10 s tick, a 10 m radio range with a
    log-distance path-loss model, step-function risk weights, and a
    0.001 degree / 300 s quantization grid for contact hashing.
    """

    # pseudonym schedule
    rotation_seconds: int = 7200
    tek_retention_days: int = 14
    clock_tolerance_seconds: int = 0

    # radio
    tick_seconds: int = 10
    tx_power_dbm: int = -20
    ble_range_m: float = 10.0
    path_loss_ref_db: float = 40.0
    path_loss_per_decade_db: float = 20.0
    min_path_distance_m: float = 0.1

    # risk scoring
    attenuation_threshold_db: float = 60.0
    alert_threshold_minutes: float = 10.0

    # contact-hash quantization and verification neighborhood
    cell_size_deg: float = 0.001
    bucket_seconds: int = 300
    neighborhood_cells: int = 1
    neighborhood_buckets: int = 1

    # backend
    otp_ttl_seconds: int = 3600

    def __post_init__(self) -> None:
        if self.rotation_seconds <= 0 or SECONDS_PER_DAY % self.rotation_seconds:
            raise ValueError(
                f"rotation_seconds must divide a day evenly, got {self.rotation_seconds}"
            )
        if self.bucket_seconds <= 0 or SECONDS_PER_DAY % self.bucket_seconds:
            raise ValueError(
                f"bucket_seconds must divide a day evenly, got {self.bucket_seconds}"
            )
        if self.tick_seconds <= 0:
            raise ValueError("tick_seconds must be positive")
        if self.cell_size_deg <= 0:
            raise ValueError("cell_size_deg must be positive")
        if self.ble_range_m <= 0:
            raise ValueError("ble_range_m must be positive")
        if self.tek_retention_days <= 0:
            raise ValueError("tek_retention_days must be positive")

    @property
    def intervals_per_day(self) -> int:
        return SECONDS_PER_DAY // self.rotation_seconds

    @classmethod
    def from_dict(cls, overrides: dict) -> "SimParams":
        """Build params from a config mapping, rejecting unknown keys."""
        known = {f.name for f in fields(cls)}
        unknown = set(overrides) - known
        if unknown:
            raise ValueError(f"unknown parameter(s): {', '.join(sorted(unknown))}")
        return cls(**overrides)
