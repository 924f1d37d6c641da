"""Actor state machines: honest devices, the two adversary roles, and the
database they share.

Honest devices run the full protocol stack (key schedule, scanning, risk
scoring) plus, optionally, the contact-hash defense.  Adversaries run no
protocol app at all: the sniffer only captures in-range packets into the
shared database, the rebroadcaster only retransmits captured bytes verbatim.
Neither ever stores observations or uploads keys.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

from . import actguard, gaen, radio
from .backend import BackendError, BackendStore, encode_diagnosis_payload
from .params import SECONDS_PER_DAY, SimParams


@dataclass(frozen=True)
class DatabaseEntry:
    packet: bytes
    capture_time: int
    source_place: str


@dataclass
class MaliciousDatabase:
    """Append-only packet exchange between the two adversary roles."""

    entries: list[DatabaseEntry] = field(default_factory=list)

    def append(self, packet: bytes, capture_time: int, source_place: str) -> None:
        self.entries.append(
            DatabaseEntry(packet=packet, capture_time=capture_time, source_place=source_place)
        )

    def __len__(self) -> int:
        return len(self.entries)


class SnifferAdversary:
    """Captures in-range protocol packets; never transmits anything."""

    def __init__(self, name: str, position: tuple[float, float], place_name: str = ""):
        self.name = name
        self.position = position
        self.place_name = place_name or name
        self.capture_log: list[tuple[bytes, int]] = []

    def outgoing_packets(self) -> tuple[bytes, ...]:
        return ()

    def sniff_tick(
        self, deliveries: list[radio.Delivery], database: MaliciousDatabase, now: int
    ) -> list[bytes]:
        """Append every protocol packet delivered to us; returns the captures."""
        captured = []
        for d in deliveries:
            if d.receiver != self.name:
                continue
            if radio.decode_advertisement(d.packet) is None:
                continue
            database.append(d.packet, capture_time=now, source_place=self.place_name)
            self.capture_log.append((d.packet, now))
            captured.append(d.packet)
        return captured


class RebroadcastAdversary:
    """Replays captured packets byte-for-byte at its own location.

    An entry goes on the air once its relay delay has elapsed and keeps
    being replayed every tick until ``replay_ttl`` seconds after capture,
    the longest the pseudonym inside could still be valid.  Byte-identical
    entries collapse to one transmission per tick.
    """

    def __init__(
        self,
        name: str,
        position: tuple[float, float],
        *,
        relay_delay: int = 0,
        replay_ttl: int = 7200,
        tx_power_dbm: int = -20,
    ):
        self.name = name
        self.position = position
        self.relay_delay = relay_delay
        self.replay_ttl = replay_ttl
        self.tx_power_dbm = tx_power_dbm
        self.replay_queue: tuple[bytes, ...] = ()

    def rebroadcast_tick(self, database: MaliciousDatabase, now: int) -> tuple[bytes, ...]:
        # Entries arrive in capture order, so the eligibility window
        # (now - ttl, now - delay] is a contiguous slice.
        entries = database.entries
        lo = bisect.bisect_right(entries, now - self.replay_ttl, key=lambda e: e.capture_time)
        hi = bisect.bisect_right(entries, now - self.relay_delay, key=lambda e: e.capture_time)
        self.replay_queue = tuple(dict.fromkeys(e.packet for e in entries[lo:hi]))
        return self.replay_queue


@dataclass
class ExposureState:
    gaen_alert: bool = False
    risk_score: float = 0.0
    verdicts: dict[int, actguard.Verdict] = field(default_factory=dict)
    matches_by_diagnosis: dict[int, int] = field(default_factory=dict)


class HonestDevice:
    """A protocol-running device, optionally with the hash defense enabled."""

    def __init__(
        self,
        name: str,
        seed: bytes,
        position: tuple[float, float],
        *,
        params: SimParams,
        actguard_enabled: bool = False,
    ):
        self.name = name
        self.seed = seed
        self.position = position
        self.params = params
        self.actguard_enabled = actguard_enabled

        self.teks: dict[int, gaen.Tek] = {}
        self.current_rpi: gaen.Rpi | None = None
        self.current_packet: bytes | None = None
        self._current_slot: tuple[int, int] | None = None  # (day, interval)

        self.observations: list[gaen.Observation] = []
        self.contacts = actguard.MyContactsTable() if actguard_enabled else None
        self.positive_table = actguard.PositiveTable() if actguard_enabled else None

        self.downloaded: dict[int, list[gaen.Tek]] = {}
        self.last_chunk_index = 0
        self.exposure = ExposureState()

    # --- key schedule ---------------------------------------------------

    def _tek_for_day(self, day: int) -> gaen.Tek:
        tek = self.teks.get(day)
        if tek is None:
            tek = gaen.generate_tek(self.seed, day)
            self.teks[day] = tek
            self._purge_teks(day)
        return tek

    def _purge_teks(self, today: int) -> None:
        horizon = today - (self.params.tek_retention_days - 1)
        for day in [d for d in self.teks if d < horizon]:
            del self.teks[day]

    def ensure_interval(self, now: int) -> bool:
        """Rotate the advertised pseudonym when the clock crosses a boundary."""
        day = now // SECONDS_PER_DAY
        interval = (now % SECONDS_PER_DAY) // self.params.rotation_seconds
        if self._current_slot == (day, interval):
            return False
        tek = self._tek_for_day(day)
        rpik = gaen.derive_rpik(tek)
        aemk = gaen.derive_aemk(tek)
        rpi = gaen.derive_rpi(rpik, interval, rotation_seconds=self.params.rotation_seconds)
        aem = gaen.encrypt_aem(aemk, rpi.bytes, self.params.tx_power_dbm)
        self.current_rpi = rpi
        self.current_packet = radio.encode_advertisement(rpi.bytes, aem)
        self._current_slot = (day, interval)
        return True

    def outgoing_packets(self) -> tuple[bytes, ...]:
        return (self.current_packet,) if self.current_packet else ()

    # --- scanning ---------------------------------------------------------

    def receive(self, deliveries: list[radio.Delivery], now: int) -> int:
        """Store one observation per protocol delivery; own echoes are dropped."""
        self.ensure_interval(now)
        assert self.current_rpi is not None
        stored = 0
        own = self.current_rpi.bytes
        for d in deliveries:
            if d.receiver != self.name:
                continue
            decoded = radio.decode_advertisement(d.packet)
            if decoded is None:
                continue
            rpi, aem = decoded
            if rpi == own:
                continue
            self.observations.append(
                gaen.Observation(
                    rpi=rpi, aem=aem, rssi=d.rssi, scan_time=now, location=self.position
                )
            )
            stored += 1
            if self.contacts is not None:
                actguard.record_contact(
                    self.contacts,
                    own,
                    rpi,
                    self.position,
                    now,
                    cell_size_deg=self.params.cell_size_deg,
                    bucket_seconds=self.params.bucket_seconds,
                )
        return stored

    # --- diagnosis and exposure checking -----------------------------------

    def diagnose_and_upload(
        self, backend: BackendStore, otp_code: str, now: int
    ) -> tuple[int, bytes]:
        """Publish retained keys (and the hash batch, if defended).

        Returns (diagnosis_id, serialized upload payload).  A rejected OTP
        propagates as a BackendError and leaves this device untouched.
        """
        teks = [self.teks[d] for d in sorted(self.teks)]
        hashes = self.contacts.hashes() if self.contacts is not None else None
        payload = encode_diagnosis_payload(teks, otp_code, hashes)
        diagnosis_id = backend.ingest_diagnosis(teks, otp_code, hashes, now)
        return diagnosis_id, payload

    def poll_backend(self, backend: BackendStore, now: int) -> list[int]:
        """Pull new chunks (and their hash batches); returns new diagnosis ids.

        All fetches complete before any local state changes, so a transport
        failure mid-poll leaves the device exactly as it was.
        """
        fetched = []
        for chunk in backend.fetch_chunks(self.last_chunk_index, now):
            batch = (
                backend.fetch_hash_batch(chunk.index)
                if self.positive_table is not None
                else None
            )
            fetched.append((chunk, batch))

        new_ids = []
        for chunk, batch in fetched:
            self.last_chunk_index = max(self.last_chunk_index, chunk.index)
            self.downloaded[chunk.index] = [
                gaen.Tek(bytes=b, day_index=d) for b, d in chunk.teks
            ]
            if batch is not None and self.positive_table is not None:
                self.positive_table.add(chunk.index, batch)
            new_ids.append(chunk.index)
        return new_ids

    def evaluate_exposure(self) -> ExposureState:
        """Recompute alert and verdicts from everything downloaded so far."""
        all_matches: list[gaen.ExposureMatch] = []
        verdicts: dict[int, actguard.Verdict] = {}
        matched: dict[int, int] = {}
        for diagnosis_id in sorted(self.downloaded):
            matches = gaen.match_observations(
                self.downloaded[diagnosis_id],
                self.observations,
                self.params.clock_tolerance_seconds,
                rotation_seconds=self.params.rotation_seconds,
            )
            if not matches:
                continue
            all_matches.extend(matches)
            matched[diagnosis_id] = len(matches)
            if self.actguard_enabled:
                verdicts[diagnosis_id] = self._verdict_for(diagnosis_id, matches)
        risk = gaen.risk_score(
            all_matches,
            beacon_interval_seconds=self.params.tick_seconds,
            attenuation_threshold_db=self.params.attenuation_threshold_db,
            alert_threshold_minutes=self.params.alert_threshold_minutes,
        )
        self.exposure = ExposureState(
            gaen_alert=risk.alert,
            risk_score=risk.score,
            verdicts=verdicts,
            matches_by_diagnosis=matched,
        )
        return self.exposure

    def _verdict_for(
        self, diagnosis_id: int, matches: list[gaen.ExposureMatch]
    ) -> actguard.Verdict:
        # One verdict per diagnosis: confirmation by any match wins.
        assert self.contacts is not None and self.positive_table is not None
        batch = self.positive_table.get(diagnosis_id)
        first: actguard.Verdict | None = None
        for match in matches:
            verdict = actguard.verify_exposure(
                match,
                self.contacts,
                batch,
                diagnosis_id=diagnosis_id,
                neighborhood_cells=self.params.neighborhood_cells,
                neighborhood_buckets=self.params.neighborhood_buckets,
            )
            if verdict.kind is actguard.VerdictKind.CONFIRMED_CONTACT:
                return verdict
            if first is None:
                first = verdict
        assert first is not None
        return first

    def exposure_check(self, backend: BackendStore, now: int) -> ExposureState:
        """Poll and re-evaluate; a transport failure just skips this round."""
        try:
            new_ids = self.poll_backend(backend, now)
        except BackendError:
            return self.exposure
        if new_ids:
            self.evaluate_exposure()
        return self.exposure
