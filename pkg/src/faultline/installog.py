"""Timestamped software-installation deltas per service.

A periodic scan compares each service's current package set against the
previous inspection and appends one event per (service, deployment
timestamp) that changed. The first event ever recorded for a service carries
the full package snapshot; every later event carries only the delta. Removed
packages are encoded with the reserved version token "∅". The store is an
append-only line-delimited file: one JSON object per line with keys
`service`, `ts`, `delta` and (first event only) `full`, entries as
"name@version" strings.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError

logger = logging.getLogger(__name__)

REMOVED = "∅"


@dataclass(frozen=True)
class PackageSet:
    """A set of (name, version) pairs; at most one version per name."""

    entries: frozenset[tuple[str, str]] = frozenset()

    def __post_init__(self):
        names = [n for n, _ in self.entries]
        if len(names) != len(set(names)):
            raise DataError("package set has multiple versions of one package")

    @classmethod
    def of(cls, *specs: str) -> "PackageSet":
        """Build from "name@version" strings."""
        entries = []
        for spec in specs:
            name, sep, version = spec.partition("@")
            if not sep or not name or not version:
                raise DataError(f"bad package spec {spec!r}, want name@version")
            entries.append((name, version))
        return cls(frozenset(entries))

    def versions(self) -> dict[str, str]:
        return dict(self.entries)

    def specs(self) -> list[str]:
        return sorted(f"{n}@{v}" for n, v in self.entries)

    def __bool__(self) -> bool:
        return bool(self.entries)

    def __len__(self) -> int:
        return len(self.entries)


def diff(current: PackageSet, previous: PackageSet) -> PackageSet:
    """Changes turning `previous` into `current`.

    New or upgraded packages appear with their new version; removed packages
    with the REMOVED token.
    """
    cur, prev = current.versions(), previous.versions()
    changed = [(n, v) for n, v in cur.items() if prev.get(n) != v]
    removed = [(n, REMOVED) for n in prev if n not in cur]
    return PackageSet(frozenset(changed + removed))


def apply_delta(base: PackageSet, delta: PackageSet) -> PackageSet:
    """Replay one delta on top of a snapshot."""
    state = base.versions()
    for name, version in delta.entries:
        if version == REMOVED:
            state.pop(name, None)
        else:
            state[name] = version
    return PackageSet(frozenset(state.items()))


@dataclass(frozen=True)
class InstallEvent:
    service: str
    timestamp: int
    delta: PackageSet
    full_snapshot: PackageSet | None = None

    def __post_init__(self):
        if not self.delta:
            raise DataError("install event must carry a nonempty delta")

    def to_record(self) -> dict:
        rec = {"service": self.service, "ts": self.timestamp,
               "delta": self.delta.specs()}
        if self.full_snapshot is not None:
            rec["full"] = self.full_snapshot.specs()
        return rec

    @classmethod
    def from_record(cls, rec: Mapping) -> "InstallEvent":
        full = rec.get("full")
        return cls(service=rec["service"], timestamp=int(rec["ts"]),
                   delta=PackageSet.of(*rec["delta"]),
                   full_snapshot=PackageSet.of(*full) if full is not None else None)

    def dedup_key(self) -> tuple:
        return (self.service, self.timestamp, tuple(self.delta.specs()))


def scan(current: Mapping[str, PackageSet],
         previous_snapshot: Mapping[str, PackageSet],
         deploy_times: Mapping[str, Sequence[int]],
         recorded_services: Iterable[str] = (),
         now: int | None = None) -> list[InstallEvent]:
    """One inspection pass: emit events for services whose packages changed.

    `recorded_services` names services that already have a stored event, so
    only genuinely-first events get the full snapshot. A scan sees only the
    aggregate diff since the last inspection; with several deployments inside
    one interval the earliest timestamp receives the first-ever snapshot and
    the aggregate delta is attributed to each deployment. Unchanged services
    emit nothing.
    """
    recorded = set(recorded_services)
    events: list[InstallEvent] = []
    for service in sorted(deploy_times):
        times = sorted(deploy_times[service])
        if not times:
            continue
        if now is not None and times[-1] > now:
            raise DataError(f"deployment timestamp {times[-1]} for {service!r} "
                            "is in the future")
        cur = current.get(service)
        if cur is None:
            continue
        prev = previous_snapshot.get(service)
        delta = diff(cur, prev) if prev is not None else cur
        if not delta:
            continue
        first_ever = service not in recorded
        for i, ts in enumerate(times):
            snapshot = cur if (first_ever and i == 0) else None
            events.append(InstallEvent(service, ts, delta, snapshot))
    return events


class InstallLog:
    """Append-only install-event store over a line-delimited file.

    One writer (the periodic scan), many readers; a reader always sees a
    consistent prefix of the log, and a truncated final line from a crashed
    writer is ignored on load.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._events: list[InstallEvent] = []
        self._keys: set[tuple] = set()
        self._has_snapshot: set[str] = set()
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    event = InstallEvent.from_record(json.loads(line))
                except (json.JSONDecodeError, KeyError):
                    logger.warning("ignoring truncated/corrupt install-log line")
                    continue
                self._append_in_memory(event)

    def _append_in_memory(self, event: InstallEvent) -> bool:
        key = event.dedup_key()
        if key in self._keys:
            return False
        # Every service's first event carries a snapshot, so snapshot-holders
        # and seen-services coincide.
        seen = event.service in self._has_snapshot
        if event.full_snapshot is not None and seen:
            raise DataError(f"service {event.service!r} already recorded; "
                            "full snapshot allowed on the first event only")
        if event.full_snapshot is None and not seen:
            raise DataError(f"first event for service {event.service!r} "
                            "must carry a full snapshot")
        self._events.append(event)
        self._keys.add(key)
        if event.full_snapshot is not None:
            self._has_snapshot.add(event.service)
        return True

    def record(self, events: Iterable[InstallEvent]) -> int:
        """Durably append events; exact duplicates are ignored."""
        appended = 0
        fh = open(self.path, "a", encoding="utf-8") if self.path is not None else None
        try:
            for event in events:
                if not self._append_in_memory(event):
                    continue
                appended += 1
                if fh is not None:
                    fh.write(json.dumps(event.to_record(), sort_keys=True,
                                        separators=(",", ":"), ensure_ascii=False) + "\n")
            if fh is not None:
                fh.flush()
        finally:
            if fh is not None:
                fh.close()
        return appended

    def services(self) -> list[str]:
        return sorted({e.service for e in self._events})

    def query_window(self, services: Iterable[str], t_start: int, t_end: int
                     ) -> list[tuple[int, InstallEvent]]:
        """Events with service in `services` and t_start <= ts <= t_end
        (closed on both ends), ascending by timestamp."""
        if t_start > t_end:
            raise DataError("query window start is after its end")
        wanted = set(services)
        hits = [(e.timestamp, e) for e in self._events
                if e.service in wanted and t_start <= e.timestamp <= t_end]
        hits.sort(key=lambda pair: (pair[0], pair[1].service, pair[1].delta.specs()))
        return hits

    def replay_state(self, service: str) -> PackageSet:
        """Reconstruct a service's current package set from snapshot + deltas."""
        events = sorted((e for e in self._events if e.service == service),
                        key=lambda e: e.timestamp)
        if not events:
            raise DataError(f"no events recorded for service {service!r}")
        if events[0].full_snapshot is None:
            raise DataError(f"service {service!r} log does not start with a snapshot")
        state = events[0].full_snapshot
        for event in events[1:]:
            state = apply_delta(state, event.delta)
        return state
