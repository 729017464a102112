"""Reading and writing ``#qmemtags v1`` time-tag files.

Layout::

    #qmemtags v1; resolution=1ps; duration=<ps>; seed=<u64>
    signal,1200,pair
    idler,1350,dark
    ...

Rows are ``channel,time_ps[,origin]``; times never decrease within a
channel.
"""

from __future__ import annotations

import hashlib
import io
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Optional

import numpy as np

from .errors import TagFormatError

CHANNELS = ("signal", "idler", "herald")
ORIGINS = ("pair", "dark", "leak", "noise")
PS = 1e-12

_HEADER = re.compile(r"^#qmemtags v(\d+); resolution=1ps; duration=(\d+); seed=(\d+)\s*$")


class TimeTag(NamedTuple):
    channel: str
    time: int
    origin: Optional[str] = None


@dataclass
class TimeTags:
    """Per-channel sorted integer-picosecond detection times."""

    duration_ps: int
    seed: int
    times: dict[str, np.ndarray] = field(default_factory=dict)
    origins: Optional[dict[str, np.ndarray]] = None

    def __post_init__(self):
        for ch, t in self.times.items():
            if ch not in CHANNELS:
                raise TagFormatError(f"unknown channel {ch!r}")
            t = np.asarray(t, dtype=np.int64)
            if t.size and (t[0] < 0 or t[-1] > self.duration_ps or np.any(np.diff(t) < 0)):
                raise TagFormatError(f"channel {ch}: times must be sorted within [0, duration]")
            self.times[ch] = t

    @property
    def duration(self) -> float:
        return self.duration_ps * PS

    def channel(self, name: str) -> np.ndarray:
        return self.times.get(name, np.empty(0, dtype=np.int64))

    def counts_by_origin(self) -> dict[str, dict[str, int]]:
        out: dict[str, dict[str, int]] = {}
        for ch, t in self.times.items():
            if self.origins is None:
                out[ch] = {"all": int(t.size)}
                continue
            o = self.origins[ch]
            out[ch] = {name: int(np.sum(o == k)) for k, name in enumerate(ORIGINS)}
        return out

    def records(self) -> Iterator[TimeTag]:
        """Tags merged across channels in time order."""
        chans = [c for c in CHANNELS if c in self.times]
        if not chans:
            return
        t = np.concatenate([self.times[c] for c in chans])
        c = np.concatenate([np.full(self.times[ch].size, i) for i, ch in enumerate(chans)])
        if self.origins is not None:
            o = np.concatenate([self.origins[ch] for ch in chans])
        order = np.lexsort((c, t))
        for k in order:
            origin = ORIGINS[o[k]] if self.origins is not None else None
            yield TimeTag(chans[c[k]], int(t[k]), origin)

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write(f"#qmemtags v1; resolution=1ps; duration={self.duration_ps}; seed={self.seed}\n")
        for tag in self.records():
            if tag.origin is None:
                buf.write(f"{tag.channel},{tag.time}\n")
            else:
                buf.write(f"{tag.channel},{tag.time},{tag.origin}\n")
        return buf.getvalue()

    def write(self, path) -> str:
        """Write the file and return its SHA-256 hex digest."""
        data = self.to_text().encode("ascii")
        Path(path).write_bytes(data)
        return hashlib.sha256(data).hexdigest()

    @classmethod
    def from_text(cls, text: str) -> "TimeTags":
        lines = text.splitlines()
        if not lines:
            raise TagFormatError("empty tag file")
        m = _HEADER.match(lines[0])
        if not m:
            raise TagFormatError(f"bad header: {lines[0][:80]!r}")
        if m.group(1) != "1":
            raise TagFormatError(f"unsupported format version v{m.group(1)}")
        duration_ps, seed = int(m.group(2)), int(m.group(3))
        times: dict[str, list[int]] = {}
        origins: dict[str, list[int]] = {}
        with_origin: Optional[bool] = None
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            parts = line.split(",")
            if len(parts) not in (2, 3) or parts[0] not in CHANNELS:
                raise TagFormatError(f"line {lineno}: malformed row {line!r}")
            has = len(parts) == 3
            if with_origin is None:
                with_origin = has
            elif has != with_origin:
                raise TagFormatError(f"line {lineno}: origin column present on some rows only")
            try:
                t = int(parts[1])
            except ValueError:
                raise TagFormatError(f"line {lineno}: time is not an integer") from None
            times.setdefault(parts[0], []).append(t)
            if has:
                if parts[2] not in ORIGINS:
                    raise TagFormatError(f"line {lineno}: unknown origin {parts[2]!r}")
                origins.setdefault(parts[0], []).append(ORIGINS.index(parts[2]))
        arrays = {c: np.asarray(v, dtype=np.int64) for c, v in times.items()}
        orig = None
        if with_origin:
            orig = {c: np.asarray(v, dtype=np.int8) for c, v in origins.items()}
        return cls(duration_ps, seed, arrays, orig)

    @classmethod
    def read(cls, path) -> "TimeTags":
        return cls.from_text(Path(path).read_text(encoding="ascii"))
