"""Length-prefixed wire protocol between the serving daemon and clients.

Frame layout: type u8 | payload length u64 LE | payload. Types::

    01 Hello          client: u32 LE protocol version
                      server: u32 LE version, u32 w, u32 h, u32 c,
                              u32 classes, u32 k
    02 AttestRequest  32-byte client nonce
    03 AttestEvidence 32-byte measurement + 32-byte MAC
    04 ProvisionKeys  wrapped key message (empty payload as the server ack)
    05 Predict        encoded sealed image container
    06 Result         encoded sealed result container
    07 Error          u16 LE code + UTF-8 message

Payloads are capped at 64 MiB; unknown type codes are rejected. Error
codes: 1 auth_failure, 2 not_ready, 3 too_large, 4 malformed, 5 internal.
"""

from __future__ import annotations

import socket
import struct

from .errors import ProtocolError

__all__ = [
    "MSG_HELLO",
    "MSG_ATTEST_REQUEST",
    "MSG_ATTEST_EVIDENCE",
    "MSG_PROVISION_KEYS",
    "MSG_PREDICT",
    "MSG_RESULT",
    "MSG_ERROR",
    "ERR_AUTH_FAILURE",
    "ERR_NOT_READY",
    "ERR_TOO_LARGE",
    "ERR_MALFORMED",
    "ERR_INTERNAL",
    "MAX_PAYLOAD",
    "PROTOCOL_VERSION",
    "encode_frame",
    "encode_error",
    "decode_error",
    "read_frame",
    "send_frame",
    "FrameTooLarge",
    "server_hello_payload",
    "parse_server_hello",
]

MSG_HELLO = 1
MSG_ATTEST_REQUEST = 2
MSG_ATTEST_EVIDENCE = 3
MSG_PROVISION_KEYS = 4
MSG_PREDICT = 5
MSG_RESULT = 6
MSG_ERROR = 7
_KNOWN_TYPES = frozenset(range(1, 8))

ERR_AUTH_FAILURE = 1
ERR_NOT_READY = 2
ERR_TOO_LARGE = 3
ERR_MALFORMED = 4
ERR_INTERNAL = 5

MAX_PAYLOAD = 64 * 1024 * 1024
PROTOCOL_VERSION = 1
HEADER_LEN = 9


class FrameTooLarge(ProtocolError):
    """Incoming frame declared a payload beyond the 64 MiB cap."""


def encode_frame(msg_type: int, payload: bytes) -> bytes:
    if msg_type not in _KNOWN_TYPES:
        raise ProtocolError(f"unknown wire message type {msg_type}")
    if len(payload) > MAX_PAYLOAD:
        raise FrameTooLarge(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    return struct.pack("<BQ", msg_type, len(payload)) + payload


def encode_error(code: int, message: str) -> bytes:
    return encode_frame(MSG_ERROR, struct.pack("<H", code) + message.encode())


def decode_error(payload: bytes) -> tuple[int, str]:
    if len(payload) < 2:
        raise ProtocolError("error payload shorter than its code")
    (code,) = struct.unpack_from("<H", payload, 0)
    return code, payload[2:].decode(errors="replace")


def _recv_exactly(sock: socket.socket, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(min(remaining, 1 << 20))
        if not chunk:
            raise ConnectionError("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket) -> tuple[int, bytes]:
    """Read one frame. Raises FrameTooLarge/ProtocolError on bad headers and
    ConnectionError when the peer goes away."""
    header = _recv_exactly(sock, HEADER_LEN)
    msg_type, length = struct.unpack("<BQ", header)
    if msg_type not in _KNOWN_TYPES:
        raise ProtocolError(f"unknown wire message type {msg_type}")
    if length > MAX_PAYLOAD:
        raise FrameTooLarge(f"declared payload of {length} bytes exceeds {MAX_PAYLOAD}")
    return msg_type, _recv_exactly(sock, int(length))


def send_frame(sock: socket.socket, msg_type: int, payload: bytes) -> None:
    sock.sendall(encode_frame(msg_type, payload))


def server_hello_payload(input_shape: tuple[int, int, int], classes: int, k: int) -> bytes:
    w, h, c = input_shape
    return struct.pack("<IIIIII", PROTOCOL_VERSION, w, h, c, classes, k)


def parse_server_hello(payload: bytes) -> dict:
    if len(payload) != 24:
        raise ProtocolError(f"server hello must be 24 bytes, got {len(payload)}")
    version, w, h, c, classes, k = struct.unpack("<IIIIII", payload)
    if version != PROTOCOL_VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    return {"version": version, "input_shape": (w, h, c), "classes": classes, "k": k}
