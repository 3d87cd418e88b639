"""Line protocol connecting an external detector process to the simulator.

Wire format, one UTF-8 line per message, fields separated by single spaces::

    DET <frame_id> <timestamp_us> <u0> <v0> <u1> <v1> <u2> <v2> <u3> <v3> <confidence> <visible_fraction>
    FRAME <frame_id> <timestamp_us> [<x> <y> <z> <yaw>]

``DET`` flows detector -> simulator, ``FRAME`` simulator -> detector; the
optional FRAME tail is the vehicle pose hint. Corners follow the package's
(TL, TR, BL, BR) order. Floats are written with 17 significant digits, so
values survive the round trip bit for bit. Extra trailing fields are ignored.
"""

from __future__ import annotations

import logging
import math
import queue
import shlex
import socket
import subprocess
import threading
import time
from dataclasses import dataclass
from typing import BinaryIO, Optional, Union

from mavland.geometry import BoundingBox, ImagePoint
from mavland.simulator import DetectorClosed, VehiclePose

log = logging.getLogger(__name__)

U64_MAX = 2**64 - 1


class DecodeError(ValueError):
    def __init__(self, message: str, line: Union[str, bytes]):
        self.line = line
        super().__init__(f"{message}: {line!r}")


@dataclass(frozen=True)
class DetectionMessage:
    frame_id: int
    timestamp_us: int
    corners: tuple[tuple[float, float], ...]
    confidence: float
    visible_fraction: float

    def to_bbox(self) -> BoundingBox:
        return BoundingBox(
            corners=tuple(ImagePoint(u, v) for u, v in self.corners),  # type: ignore[arg-type]
            confidence=self.confidence,
            frame_id=self.frame_id,
            visible_fraction=self.visible_fraction,
        )

    @classmethod
    def from_bbox(cls, box: BoundingBox, timestamp_us: int) -> "DetectionMessage":
        return cls(
            frame_id=box.frame_id,
            timestamp_us=timestamp_us,
            corners=tuple((p.u, p.v) for p in box.corners),
            confidence=box.confidence,
            visible_fraction=box.visible_fraction,
        )


@dataclass(frozen=True)
class FramePublication:
    frame_id: int
    timestamp_us: int
    pose_hint: Optional[tuple[float, float, float, float]] = None


Message = Union[DetectionMessage, FramePublication]


def _f(x: float) -> str:
    return format(x, ".16e")


def encode(msg: Message) -> bytes:
    if isinstance(msg, DetectionMessage):
        if len(msg.corners) != 4:
            raise ValueError("a detection needs exactly 4 corners")
        fields = ["DET", str(msg.frame_id), str(msg.timestamp_us)]
        for u, v in msg.corners:
            fields += [_f(u), _f(v)]
        fields += [_f(msg.confidence), _f(msg.visible_fraction)]
    else:
        fields = ["FRAME", str(msg.frame_id), str(msg.timestamp_us)]
        if msg.pose_hint is not None:
            fields += [_f(x) for x in msg.pose_hint]
    return (" ".join(fields) + "\n").encode("utf-8")


def _u64(token: str, name: str, line) -> int:
    try:
        value = int(token)
    except ValueError:
        raise DecodeError(f"{name} is not an integer", line) from None
    if not 0 <= value <= U64_MAX:
        raise DecodeError(f"{name} outside u64 range", line)
    return value


def _float(token: str, name: str, line) -> float:
    try:
        value = float(token)
    except ValueError:
        raise DecodeError(f"{name} is not a number", line) from None
    if not math.isfinite(value):
        raise DecodeError(f"{name} is not finite", line)
    return value


def decode(line: Union[str, bytes]) -> Message:
    """Parse one protocol line.

    Raises:
        DecodeError: on any schema violation, carrying the offending line.
    """
    raw = line
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError:
            raise DecodeError("line is not valid UTF-8", raw) from None
    tokens = line.rstrip("\r\n").split(" ")
    kind = tokens[0]
    if kind == "DET":
        if len(tokens) < 13:
            raise DecodeError("corner count: expected 4 corner pairs plus confidence and visibility", raw)
        values = [_float(t, f"field {i + 3}", raw) for i, t in enumerate(tokens[3:13])]
        corners = tuple((values[2 * i], values[2 * i + 1]) for i in range(4))
        confidence, visible = values[8], values[9]
        if not 0.0 <= confidence <= 1.0:
            raise DecodeError("confidence outside [0, 1]", raw)
        if not 0.0 <= visible <= 1.0:
            raise DecodeError("visible_fraction outside [0, 1]", raw)
        return DetectionMessage(
            frame_id=_u64(tokens[1], "frame_id", raw),
            timestamp_us=_u64(tokens[2], "timestamp_us", raw),
            corners=corners,
            confidence=confidence,
            visible_fraction=visible,
        )
    if kind == "FRAME":
        if len(tokens) < 3:
            raise DecodeError("FRAME needs frame_id and timestamp_us", raw)
        hint = None
        if len(tokens) >= 7:
            hint = tuple(_float(t, "pose hint", raw) for t in tokens[3:7])
        return FramePublication(
            frame_id=_u64(tokens[1], "frame_id", raw),
            timestamp_us=_u64(tokens[2], "timestamp_us", raw),
            pose_hint=hint,  # type: ignore[arg-type]
        )
    raise DecodeError(f"unknown message kind {kind!r}", raw)


class StreamTransport:
    """A pair of binary streams: lines come in on ``rfile``, go out on ``wfile``.

    Closing happens in two steps. :meth:`hang_up` ends the outgoing stream
    and should make the peer close its side, which unblocks a pending read;
    :meth:`close` then releases the incoming stream. Closing a buffered
    stream while another thread is blocked reading it would deadlock.
    """

    def __init__(self, rfile: BinaryIO, wfile: BinaryIO):
        self.rfile = rfile
        self.wfile = wfile

    def write(self, data: bytes) -> None:
        self.wfile.write(data)
        self.wfile.flush()

    def hang_up(self) -> None:
        try:
            self.wfile.close()
        except OSError:
            pass

    def close(self) -> None:
        self.hang_up()
        try:
            self.rfile.close()
        except OSError:
            pass


class ExecTransport(StreamTransport):
    """Child process speaking the protocol on its stdin/stdout."""

    def __init__(self, command: str):
        self.proc = subprocess.Popen(
            shlex.split(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE
        )
        super().__init__(self.proc.stdout, self.proc.stdin)  # type: ignore[arg-type]

    def hang_up(self) -> None:
        super().hang_up()
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()


class TcpTransport(StreamTransport):
    def __init__(self, host: str, port: int, timeout: float = 5.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.sock.settimeout(None)
        super().__init__(self.sock.makefile("rb"), self.sock.makefile("wb"))

    def hang_up(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        super().hang_up()

    def close(self) -> None:
        super().close()
        self.sock.close()


_EOF = object()


class DetectionSession:
    """Frame-synchronous detection source over a transport.

    A reader thread decodes incoming lines into a queue; :meth:`poll` drains
    it once per tick. At most one detection is accepted per frame (the most
    confident one when several arrive together). Duplicates, regressions,
    late or premature frame ids and malformed lines are dropped with a
    warning. The first poll waits up to ``startup_timeout`` instead of the
    per-frame deadline so a freshly spawned detector can finish loading.
    """

    def __init__(self, transport: StreamTransport, deadline: float = 0.05, startup_timeout: float = 5.0):
        self.transport = transport
        self.deadline = deadline
        self.startup_timeout = startup_timeout
        self.inbox: queue.Queue = queue.Queue()
        self.closed = False
        self.last_published: Optional[int] = None
        self.last_accepted: Optional[int] = None
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        try:
            for raw in self.transport.rfile:
                if not raw.strip():
                    continue
                try:
                    self.inbox.put(decode(raw))
                except DecodeError as exc:
                    self.inbox.put(exc)
        except (OSError, ValueError):
            pass
        self.inbox.put(_EOF)

    def publish(self, frame: FramePublication) -> None:
        if self.last_published is not None and frame.frame_id <= self.last_published:
            raise ValueError("published frame ids must increase")
        try:
            self.transport.write(encode(frame))
        except (OSError, ValueError) as exc:
            self.closed = True
            raise DetectorClosed(f"detector transport closed: {exc}") from exc
        self.last_published = frame.frame_id

    def _admit(self, item, frame_id: int, best: Optional[DetectionMessage]):
        if isinstance(item, DecodeError):
            log.warning("dropping malformed detector line: %s", item)
            return best
        if not isinstance(item, DetectionMessage):
            log.warning("dropping unexpected %s from detector", type(item).__name__)
            return best
        fid = item.frame_id
        if self.last_accepted is not None and fid <= self.last_accepted:
            kind = "duplicate" if fid == self.last_accepted else "regressed"
            log.warning("dropping %s detection for frame %d (last accepted %d)", kind, fid, self.last_accepted)
            return best
        if fid != frame_id:
            kind = "late" if fid < frame_id else "unpublished"
            log.warning("dropping %s detection for frame %d while at frame %d", kind, fid, frame_id)
            return best
        if best is None:
            return item
        log.warning("dropping duplicate detection for frame %d", fid)
        return item if item.confidence > best.confidence else best

    def poll(self, frame_id: int, timeout: Optional[float] = None) -> Optional[DetectionMessage]:
        """Wait up to ``timeout`` (default: the deadline) for frame ``frame_id``.

        Returns None for a missed frame.

        Raises:
            DetectorClosed: once the transport has reached end-of-stream.
        """
        if self.closed:
            raise DetectorClosed("detector stream ended")
        if timeout is None:
            timeout = self.startup_timeout if self.last_accepted is None else self.deadline
        stop = time.monotonic() + timeout
        best: Optional[DetectionMessage] = None
        while True:
            try:
                if best is None:
                    item = self.inbox.get(timeout=max(stop - time.monotonic(), 0.0))
                else:
                    item = self.inbox.get_nowait()
            except queue.Empty:
                break
            if item is _EOF:
                self.closed = True
                if best is None:
                    raise DetectorClosed("detector stream ended")
                break
            best = self._admit(item, frame_id, best)
        if best is not None:
            self.last_accepted = frame_id
        return best

    def close(self) -> None:
        self.transport.hang_up()
        self._reader.join(timeout=2.0)
        if self._reader.is_alive():
            log.warning("detector kept its stream open after hang-up; leaving it to the reader thread")
            return
        self.transport.close()


class BridgeDetector:
    """Detection source backed by a :class:`DetectionSession`."""

    def __init__(self, session: DetectionSession, send_pose: bool = True):
        self.session = session
        self.send_pose = send_pose

    def detect(self, frame_id: int, t: float, pose: VehiclePose) -> Optional[BoundingBox]:
        hint = (pose.x, pose.y, pose.z, pose.yaw) if self.send_pose else None
        self.session.publish(FramePublication(frame_id, round(t * 1e6), hint))
        msg = self.session.poll(frame_id)
        return msg.to_bbox() if msg is not None else None

    def close(self) -> None:
        self.session.close()


def parse_detector_spec(spec: str) -> tuple:
    """``synthetic`` | ``exec:<cmd>`` | ``tcp:<host>:<port>``."""
    if spec == "synthetic":
        return ("synthetic",)
    if spec.startswith("exec:") and spec[5:].strip():
        return ("exec", spec[5:])
    if spec.startswith("tcp:"):
        host, sep, port = spec[4:].rpartition(":")
        if sep and host and port.isdigit():
            return ("tcp", host, int(port))
    raise ValueError(f"bad detector spec {spec!r}; use synthetic, exec:<cmd> or tcp:<host>:<port>")


def open_detector(spec: str, deadline: float, **placeholders) -> Optional[BridgeDetector]:
    """Connect an external detector; None means use the synthetic one.

    ``{config}`` and ``{seed}`` in an exec command are replaced from
    ``placeholders``.
    """
    parsed = parse_detector_spec(spec)
    if parsed[0] == "synthetic":
        return None
    if parsed[0] == "exec":
        command = parsed[1].format(**placeholders)
        transport: StreamTransport = ExecTransport(command)
    else:
        transport = TcpTransport(parsed[1], parsed[2])
    return BridgeDetector(DetectionSession(transport, deadline=deadline))
