"""Simulated trusted enclave: sealed-model loading, key provisioning, and
in-boundary inference and class mapping.

The enclave is an isolated component behind a narrow message API. Every
operation crosses the boundary as an encoded frame (type byte, u64 LE
length, payload) and every byte that leaves is appended to an audit log, so
tests can assert that no plaintext model bytes, labels, images, or keys
ever escape. Only two kinds of payload carry model data outward: the
intermediate tensor produced by the loaded front model (by design) and
sealed result containers (ciphertext).

Attestation is a stub faithful to the protocol shape: the enclave proves
knowledge of a pre-shared root key by MACing its measurement (a hash of the
code identity and the loaded sealed artifacts) together with a client
nonce. Key provisioning wraps the model and image keys under a key derived
from the root key and that attestation transcript, so keys can only be
provisioned to the attested enclave instance.

Session states move strictly created -> attested -> provisioned -> ready;
any failure parks the session in a terminal failed state with all partial
secrets discarded.
"""

from __future__ import annotations

import hashlib
import hmac
import os
import struct
import threading
import uuid
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .engine import forward_range
from .errors import AuthError, IrshieldError, ProtocolError, ShapeError, StateError
from .netdef import parse_network
from .partition import unpack_model
from .sealing import KEY_LEN, NONCE_LEN, SealedContainer, open_container, seal
from .tensor import Tensor

__all__ = [
    "EnclaveSession",
    "AttestationEvidence",
    "enclave_create",
    "attest",
    "provision_keys",
    "infer_encrypted_image",
    "map_classes",
    "build_key_message",
    "verify_evidence",
    "measurement_from_manifest",
    "encode_result_payload",
    "decode_result_payload",
    "CODE_IDENTITY",
]

CODE_IDENTITY = b"irshield-enclave/1"

# boundary frame types
MSG_ATTEST_REQ = 0x10
MSG_ATTEST_EVIDENCE = 0x11
MSG_PROVISION = 0x12
MSG_PROVISION_OK = 0x13
MSG_INFER = 0x14
MSG_IR = 0x15
MSG_MAP = 0x16
MSG_RESULT = 0x17
MSG_ERROR = 0x1F

ERR_AUTH = 1
ERR_STATE = 2
ERR_MALFORMED = 4
ERR_INTERNAL = 5

STATES = ("created", "attested", "provisioned", "ready", "failed")


def _frame(msg_type: int, payload: bytes) -> bytes:
    return struct.pack("<BQ", msg_type, len(payload)) + payload


def _unframe(blob: bytes) -> tuple[int, bytes]:
    if len(blob) < 9:
        raise ProtocolError("boundary frame shorter than its header")
    msg_type, length = struct.unpack_from("<BQ", blob, 0)
    if len(blob) != 9 + length:
        raise ProtocolError("boundary frame length mismatch")
    return msg_type, blob[9:]


def _mac(root_key: bytes, *parts: bytes) -> bytes:
    return hmac.new(root_key, b"".join(parts), hashlib.sha256).digest()


def verify_evidence(root_key: bytes, measurement: bytes, client_nonce: bytes, mac: bytes) -> bool:
    """Client-side check of attestation evidence against the shared root key."""
    expected = _mac(root_key, b"attest", measurement, client_nonce)
    return hmac.compare_digest(expected, mac)


def measurement_from_manifest(manifest: dict[str, str]) -> bytes:
    """Expected enclave measurement, computed from artifact manifest hashes.

    Lets a client that holds only the manifest verify it is talking to an
    enclave loaded with exactly the artifacts it produced.
    """
    fn_digest = bytes.fromhex(manifest["frontnet.sealed"])
    lbl_digest = bytes.fromhex(manifest["labels.sealed"])
    return hashlib.sha256(CODE_IDENTITY + fn_digest + lbl_digest).digest()


def _wrap_key(root_key: bytes, measurement: bytes, client_nonce: bytes, evidence_mac: bytes) -> bytes:
    return _mac(root_key, b"provision-wrap", measurement, client_nonce, evidence_mac)


def build_key_message(
    root_key: bytes,
    measurement: bytes,
    client_nonce: bytes,
    evidence_mac: bytes,
    model_key: bytes,
    img_key: bytes,
    nonce: bytes | None = None,
) -> bytes:
    """Client-side wrapping of (model_key, img_key) to an attested session."""
    if len(model_key) != KEY_LEN or len(img_key) != KEY_LEN:
        raise ValueError(f"keys must be {KEY_LEN} bytes")
    wrap = _wrap_key(root_key, measurement, client_nonce, evidence_mac)
    if nonce is None:
        nonce = os.urandom(NONCE_LEN)
    return nonce + AESGCM(wrap).encrypt(nonce, model_key + img_key, b"irshield-keys")


@dataclass(frozen=True)
class AttestationEvidence:
    measurement: bytes
    mac: bytes


def encode_result_payload(entries: list[tuple[int, str, float]]) -> bytes:
    chunks = [struct.pack("<I", len(entries))]
    for index, label, score in entries:
        raw = label.encode()
        chunks.append(struct.pack("<If", index, score))
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
    return b"".join(chunks)


def decode_result_payload(blob: bytes) -> list[tuple[int, str, float]]:
    if len(blob) < 4:
        raise ProtocolError("result payload shorter than its count header")
    (count,) = struct.unpack_from("<I", blob, 0)
    pos = 4
    out = []
    for _ in range(count):
        if len(blob) < pos + 10:
            raise ProtocolError("result payload truncated")
        index, score = struct.unpack_from("<If", blob, pos)
        (label_len,) = struct.unpack_from("<H", blob, pos + 8)
        pos += 10
        if len(blob) < pos + label_len:
            raise ProtocolError("result payload truncated")
        label = blob[pos : pos + label_len].decode()
        pos += label_len
        out.append((index, label, score))
    if pos != len(blob):
        raise ProtocolError("result payload has trailing bytes")
    return out


class EnclaveSession:
    """One simulated enclave instance holding one set of secrets.

    Callers interact through the module-level operations, which shuttle
    encoded frames through :meth:`call`. Requests are serialized by an
    internal lock: a session is one logical thread of trust.
    """

    def __init__(self, fn_sealed: SealedContainer, lbl_sealed: SealedContainer):
        self.enclave_id = uuid.uuid4().hex
        self._fn_sealed = fn_sealed
        self._lbl_sealed = lbl_sealed
        self.measurement = hashlib.sha256(
            CODE_IDENTITY
            + hashlib.sha256(fn_sealed.encode()).digest()
            + hashlib.sha256(lbl_sealed.encode()).digest()
        ).digest()
        self.state = "created"
        self._lock = threading.Lock()
        self._root_key: bytes | None = None
        self._client_nonce: bytes | None = None
        self._evidence_mac: bytes | None = None
        self._model_key: bytes | None = None
        self._img_key: bytes | None = None
        self._front = None
        self._labels: list[str] | None = None
        self.boundary_log: list[bytes] = []

    # -- boundary ---------------------------------------------------------

    def call(self, request: bytes) -> bytes:
        """Handle one boundary frame and return the response frame.

        Every returned byte is recorded in :attr:`boundary_log`.
        """
        with self._lock:
            try:
                msg_type, payload = _unframe(request)
                response = self._dispatch(msg_type, payload)
            except IrshieldError as exc:
                response = _frame(MSG_ERROR, struct.pack("<H", _err_code(exc)) + str(exc).encode())
            except Exception as exc:  # never leak a raw traceback across the boundary
                response = _frame(
                    MSG_ERROR, struct.pack("<H", ERR_INTERNAL) + type(exc).__name__.encode()
                )
            self.boundary_log.append(response)
            return response

    def boundary_output(self) -> bytes:
        """Concatenation of every byte this session has ever returned."""
        return b"".join(self.boundary_log)

    # -- in-enclave handlers ----------------------------------------------

    def _dispatch(self, msg_type: int, payload: bytes) -> bytes:
        if msg_type == MSG_ATTEST_REQ:
            return self._handle_attest(payload)
        if msg_type == MSG_PROVISION:
            return self._handle_provision(payload)
        if msg_type == MSG_INFER:
            return self._handle_infer(payload)
        if msg_type == MSG_MAP:
            return self._handle_map(payload)
        raise ProtocolError(f"unknown boundary message type {msg_type:#x}")

    def _require_state(self, expected: str, op: str) -> None:
        if self.state != expected:
            raise StateError(f"{op} requires state {expected!r}, session is {self.state!r}")

    def _fail(self) -> None:
        self.state = "failed"
        self._model_key = None
        self._img_key = None
        self._front = None
        self._labels = None

    def _handle_attest(self, payload: bytes) -> bytes:
        self._require_state("created", "attest")
        if len(payload) != 64:
            raise ProtocolError("attest request must carry a 32-byte root key and nonce")
        root_key, client_nonce = payload[:32], payload[32:]
        mac = _mac(root_key, b"attest", self.measurement, client_nonce)
        self._root_key = root_key
        self._client_nonce = client_nonce
        self._evidence_mac = mac
        self.state = "attested"
        return _frame(MSG_ATTEST_EVIDENCE, self.measurement + mac)

    def _handle_provision(self, payload: bytes) -> bytes:
        self._require_state("attested", "provision_keys")
        if len(payload) < NONCE_LEN + 16:
            self._fail()
            raise AuthError("key message too short")
        wrap = _wrap_key(self._root_key, self.measurement, self._client_nonce, self._evidence_mac)
        try:
            keys = AESGCM(wrap).decrypt(payload[:NONCE_LEN], payload[NONCE_LEN:], b"irshield-keys")
        except InvalidTag:
            self._fail()
            raise AuthError("key message rejected: not bound to this session") from None
        if len(keys) != 2 * KEY_LEN:
            self._fail()
            raise AuthError("key message carried malformed key material")
        self.state = "provisioned"
        model_key, img_key = keys[:KEY_LEN], keys[KEY_LEN:]
        try:
            if self._fn_sealed.content_name != "frontnet":
                raise AuthError(
                    f"frontnet artifact declares content type {self._fn_sealed.content_name}"
                )
            if self._lbl_sealed.content_name != "labels":
                raise AuthError(
                    f"labels artifact declares content type {self._lbl_sealed.content_name}"
                )
            model_blob = open_container(self._fn_sealed, model_key)
            labels_blob = open_container(self._lbl_sealed, model_key)
            cfg_text, weights = unpack_model(model_blob)
            front = parse_network(cfg_text, weights)
            try:
                labels = labels_blob.decode().splitlines()
            except UnicodeDecodeError:
                raise AuthError("labels artifact is not UTF-8 text") from None
        except IrshieldError:
            self._fail()
            raise
        self._model_key = model_key
        self._img_key = img_key
        self._front = front
        self._labels = labels
        self.state = "ready"
        return _frame(MSG_PROVISION_OK, b"")

    def _handle_infer(self, payload: bytes) -> bytes:
        self._require_state("ready", "infer_encrypted_image")
        container = SealedContainer.decode(payload)
        image_blob = open_container(container, self._img_key)
        image = Tensor.decode(image_blob)
        if image.shape != self._front.input_shape:
            w, h, c = self._front.input_shape
            raise ShapeError(
                f"image shape {image.shape[0]}x{image.shape[1]}x{image.shape[2]} "
                f"does not match the model input {w}x{h}x{c}"
            )
        ir = forward_range(self._front, 1, self._front.n_layers, image)
        return _frame(MSG_IR, ir.encode())

    def _handle_map(self, payload: bytes) -> bytes:
        self._require_state("ready", "map_classes")
        if len(payload) < 1:
            raise ProtocolError("class-mapping request truncated")
        has_nonce = payload[0]
        pos = 1
        nonce = None
        if has_nonce:
            nonce = payload[pos : pos + NONCE_LEN]
            if len(nonce) != NONCE_LEN:
                raise ProtocolError("class-mapping nonce truncated")
            pos += NONCE_LEN
        if len(payload) < pos + 4:
            raise ProtocolError("class-mapping request truncated")
        (count,) = struct.unpack_from("<I", payload, pos)
        pos += 4
        if len(payload) != pos + count * 8:
            raise ProtocolError("class-mapping entries truncated")
        entries = []
        for _ in range(count):
            index, score = struct.unpack_from("<If", payload, pos)
            pos += 8
            if not (1 <= index <= len(self._labels)):
                raise ShapeError(
                    f"class index {index} outside 1..{len(self._labels)}"
                )
            entries.append((index, self._labels[index - 1], score))
        result = seal(encode_result_payload(entries), self._img_key, "result", nonce)
        return _frame(MSG_RESULT, result.encode())


def _err_code(exc: IrshieldError) -> int:
    if isinstance(exc, AuthError):
        return ERR_AUTH
    if isinstance(exc, StateError):
        return ERR_STATE
    if isinstance(exc, (ProtocolError, ShapeError)):
        return ERR_MALFORMED
    return ERR_INTERNAL


def _raise_boundary_error(payload: bytes) -> None:
    code = struct.unpack_from("<H", payload, 0)[0] if len(payload) >= 2 else ERR_INTERNAL
    message = payload[2:].decode(errors="replace")
    if code == ERR_AUTH:
        raise AuthError(message)
    if code == ERR_STATE:
        raise StateError(message)
    if code == ERR_MALFORMED:
        raise ProtocolError(message)
    raise IrshieldError(message)


def _call(session: EnclaveSession, msg_type: int, payload: bytes, expect: int) -> bytes:
    response = session.call(_frame(msg_type, payload))
    got_type, got_payload = _unframe(response)
    if got_type == MSG_ERROR:
        _raise_boundary_error(got_payload)
    if got_type != expect:
        raise ProtocolError(f"unexpected boundary response type {got_type:#x}")
    return got_payload


def enclave_create(fn_sealed, lbl_sealed) -> EnclaveSession:
    """Create a session around two sealed artifacts; nothing is decrypted.

    Accepts SealedContainer objects or their encoded bytes; malformed
    framing is rejected here.
    """
    if isinstance(fn_sealed, (bytes, bytearray)):
        fn_sealed = SealedContainer.decode(bytes(fn_sealed))
    if isinstance(lbl_sealed, (bytes, bytearray)):
        lbl_sealed = SealedContainer.decode(bytes(lbl_sealed))
    return EnclaveSession(fn_sealed, lbl_sealed)


def attest(session: EnclaveSession, client_nonce: bytes, root_key: bytes) -> AttestationEvidence:
    """MAC the session measurement together with the client's nonce."""
    if len(client_nonce) != 32:
        raise ValueError("client nonce must be 32 bytes")
    if len(root_key) != KEY_LEN:
        raise ValueError(f"root key must be {KEY_LEN} bytes")
    payload = _call(session, MSG_ATTEST_REQ, root_key + client_nonce, MSG_ATTEST_EVIDENCE)
    return AttestationEvidence(measurement=payload[:32], mac=payload[32:])


def provision_keys(session: EnclaveSession, key_msg: bytes) -> None:
    """Install wrapped keys, then decrypt and load the model and labels."""
    _call(session, MSG_PROVISION, key_msg, MSG_PROVISION_OK)


def infer_encrypted_image(session: EnclaveSession, img_sealed) -> Tensor:
    """Run the loaded front model on a sealed image; only the intermediate
    tensor crosses back."""
    if isinstance(img_sealed, SealedContainer):
        img_sealed = img_sealed.encode()
    payload = _call(session, MSG_INFER, bytes(img_sealed), MSG_IR)
    return Tensor.decode(payload)


def map_classes(
    session: EnclaveSession,
    pv_top: list[tuple[int, float]],
    result_nonce: bytes | None = None,
) -> SealedContainer:
    """Translate (class index, score) pairs to labeled results, sealed under
    the session's image key."""
    if result_nonce is None:
        head = b"\x00"
    else:
        if len(result_nonce) != NONCE_LEN:
            raise ValueError(f"result nonce must be {NONCE_LEN} bytes")
        head = b"\x01" + result_nonce
    body = struct.pack("<I", len(pv_top))
    for index, score in pv_top:
        body += struct.pack("<If", index, score)
    payload = _call(session, MSG_MAP, head + body, MSG_RESULT)
    return SealedContainer.decode(payload)
