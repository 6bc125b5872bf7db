"""Line codec for the application -> mapper stats stream.

Each record is ``TID;RID;TIMESTAMP\\n`` in ASCII. A request id seen for the
first time is a begin event; its second appearance is the end event.
"""

from __future__ import annotations

import io
import logging
import os
from dataclasses import dataclass
from typing import BinaryIO, Union

log = logging.getLogger(__name__)

_MAX_TS = 2**64 - 1


class MalformedLine(ValueError):
    pass


class ChannelClosed(EOFError):
    pass


@dataclass(frozen=True)
class StatsEvent:
    thread_id: int
    request_id: str
    timestamp_ms: int

    def __post_init__(self):
        if self.thread_id < 0:
            raise ValueError("thread_id must be non-negative")
        if not self.request_id or any(c in self.request_id for c in ";\r\n"):
            raise ValueError(f"request_id {self.request_id!r} must be non-empty without ';' or newlines")
        if not 0 <= self.timestamp_ms <= _MAX_TS:
            raise ValueError("timestamp_ms must fit in an unsigned 64-bit integer")


def encode_event(e: StatsEvent) -> str:
    return f"{e.thread_id};{e.request_id};{int(e.timestamp_ms)}\n"


def _parse_uint(text: str, what: str, line: str) -> int:
    # int() would also accept "+5", " 5" and "5_0"
    if not text.isascii() or not text.isdigit():
        raise MalformedLine(f"non-numeric {what} in {line!r}")
    return int(text)


def parse_line(line: str | bytes) -> StatsEvent:
    if isinstance(line, bytes):
        try:
            line = line.decode("ascii")
        except UnicodeDecodeError:
            raise MalformedLine(f"non-ASCII bytes in {line!r}") from None
    stripped = line[:-1] if line.endswith("\n") else line
    if stripped.endswith("\r"):
        stripped = stripped[:-1]
    parts = stripped.split(";")
    if len(parts) != 3:
        raise MalformedLine(f"expected 3 ';'-separated fields, got {len(parts)} in {line!r}")
    tid, rid, ts = parts
    if not rid:
        raise MalformedLine(f"empty request id in {line!r}")
    if "\n" in rid or "\r" in rid:
        raise MalformedLine(f"newline inside request id in {line!r}")
    timestamp = _parse_uint(ts, "timestamp", line)
    if timestamp > _MAX_TS:
        raise MalformedLine(f"timestamp overflows 64 bits in {line!r}")
    return StatsEvent(_parse_uint(tid, "thread id", line), rid, timestamp)


class StatsChannel:
    """Buffered single-consumer reader over a pipe, FIFO or binary stream.

    ``source`` may be a raw file descriptor or a binary file object. Partial
    trailing lines are kept until the rest of the line arrives.
    """

    chunk_size = 65536

    def __init__(self, source: Union[int, BinaryIO]):
        self._source = source
        self._buf = b""
        self._eof = False
        self.malformed: list[tuple[bytes, MalformedLine]] = []

    @classmethod
    def open(cls, path: str | os.PathLike) -> "StatsChannel":
        # opening a FIFO blocks until a writer attaches
        return cls(os.open(path, os.O_RDONLY))

    def close(self) -> None:
        if isinstance(self._source, int):
            os.close(self._source)
        else:
            self._source.close()

    def _read_chunk(self) -> bytes:
        src = self._source
        if isinstance(src, int):
            return os.read(src, self.chunk_size)
        read1 = getattr(src, "read1", None)
        if read1 is not None:
            return read1(self.chunk_size)
        return src.read(self.chunk_size)

    def read_lines(self) -> list[bytes]:
        """Block until at least one complete line is buffered and return them all."""
        while b"\n" not in self._buf:
            if self._eof:
                if self._buf:
                    # producer exited mid-line without a terminator
                    tail, self._buf = self._buf, b""
                    return [tail]
                raise ChannelClosed("stats channel closed")
            chunk = self._read_chunk()
            if not chunk:
                self._eof = True
            self._buf += chunk
        head, sep, rest = self._buf.rpartition(b"\n")
        self._buf = rest
        return (head + sep).splitlines(keepends=True)

    def read_available(self, errors: str = "raise") -> list[StatsEvent]:
        """Decode every complete line currently available.

        With ``errors="skip"`` malformed lines are logged, recorded in
        ``self.malformed`` and dropped; with ``"raise"`` the first one raises
        after the remaining good lines have been consumed from the buffer.
        """
        events = []
        first_error = None
        for raw in self.read_lines():
            if raw.strip() == b"":
                continue
            try:
                events.append(parse_line(raw))
            except MalformedLine as exc:
                self.malformed.append((raw, exc))
                if errors == "skip":
                    log.warning("skipping malformed stats line: %s", exc)
                elif first_error is None:
                    first_error = exc
        if first_error is not None:
            raise first_error
        return events


def read_available(channel: StatsChannel, errors: str = "raise") -> list[StatsEvent]:
    return channel.read_available(errors=errors)


def channel_from_bytes(data: bytes) -> StatsChannel:
    return StatsChannel(io.BytesIO(data))
