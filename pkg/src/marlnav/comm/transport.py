"""Byte-stream links that carry wire-protocol frames.

Two flavours share one interface (``send(msg)``, ``recv(timeout) -> msg | None``):
an in-process queue pair, and a TCP socket on the loopback interface for
endpoints living in other processes. Both move real encoded frames, so the
in-process form exercises the same codec as the socket form.
"""
from __future__ import annotations

import queue
import socket
import time

from .protocol import HEADER, WireMessage, decode_message, encode_message, frame_length


class LinkClosed(ConnectionError):
    pass


class QueueLink:
    def __init__(self, inbox: queue.Queue, outbox: queue.Queue):
        self.inbox = inbox
        self.outbox = outbox
        self.closed = False

    def send(self, msg: WireMessage) -> None:
        self.outbox.put(encode_message(msg))

    def recv(self, timeout=None) -> WireMessage | None:
        try:
            frame = self.inbox.get(timeout=timeout)
        except queue.Empty:
            return None
        if frame is None:
            raise LinkClosed("peer closed the link")
        return decode_message(frame)

    def close(self):
        if not self.closed:
            self.closed = True
            self.outbox.put(None)


def queue_pair() -> tuple[QueueLink, QueueLink]:
    a, b = queue.Queue(), queue.Queue()
    return QueueLink(a, b), QueueLink(b, a)


class SocketLink:
    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.buf = bytearray()
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    @classmethod
    def connect(cls, address, timeout=10.0) -> SocketLink:
        return cls(socket.create_connection(address, timeout=timeout))

    def send(self, msg: WireMessage) -> None:
        self.sock.settimeout(None)
        self.sock.sendall(encode_message(msg))

    def _frame_ready(self):
        if len(self.buf) < HEADER.size:
            return None
        n = frame_length(bytes(self.buf[:HEADER.size]))
        if len(self.buf) < HEADER.size + n:
            return None
        frame = bytes(self.buf[:HEADER.size + n])
        del self.buf[:HEADER.size + n]
        return frame

    def recv(self, timeout=None) -> WireMessage | None:
        deadline = None if timeout is None else time.monotonic() + timeout
        while True:
            frame = self._frame_ready()
            if frame is not None:
                return decode_message(frame)
            if deadline is not None:
                left = deadline - time.monotonic()
                if left <= 0:
                    return None
                self.sock.settimeout(left)
            else:
                self.sock.settimeout(None)
            try:
                chunk = self.sock.recv(65536)
            except socket.timeout:
                return None
            if not chunk:
                raise LinkClosed("peer closed the socket")
            self.buf.extend(chunk)

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass


class ObjectQueueLink:
    """In-process stand-in for a ``multiprocessing.Pipe`` end."""

    def __init__(self, inbox: queue.Queue, outbox: queue.Queue):
        self.inbox = inbox
        self.outbox = outbox

    def send(self, obj):
        self.outbox.put(obj)

    def recv(self):
        return self.inbox.get()

    def poll(self, timeout=0.0):
        return not self.inbox.empty()

    def close(self):
        pass


def object_pair() -> tuple[ObjectQueueLink, ObjectQueueLink]:
    a, b = queue.Queue(), queue.Queue()
    return ObjectQueueLink(a, b), ObjectQueueLink(b, a)
