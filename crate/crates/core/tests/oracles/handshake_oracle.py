"""Independent reference for the tunnel handshake golden vectors.

Run with `python3 handshake_oracle.py`; the printed hex strings are frozen
into tests/tunnel_vectors.rs.
"""
import hashlib
import struct

from cryptography.hazmat.primitives import hashes, hmac
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

LABEL = b"sliceguard v1 tunnel"


def clamp(b):
    b = bytearray(b)
    b[0] &= 248
    b[31] &= 127
    b[31] |= 64
    return bytes(b)


def pub(priv):
    k = X25519PrivateKey.from_private_bytes(priv)
    return k.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)


def dh(priv, peer):
    return X25519PrivateKey.from_private_bytes(priv).exchange(X25519PublicKey.from_public_bytes(peer))


def H(*parts):
    return hashlib.sha256(b"".join(parts)).digest()


def hmac256(key, data):
    m = hmac.HMAC(key, hashes.SHA256())
    m.update(data)
    return m.finalize()


def kdf(ck, ikm, n):
    # RFC 5869 extract-then-expand with an empty info string
    prk = hmac256(ck, ikm)
    out, t = b"", b""
    for i in range(1, n + 1):
        t = hmac256(prk, t + bytes([i]))
        out += t
    return [out[32 * i:32 * i + 32] for i in range(n)]


def seal(key, counter, pt, ad):
    return ChaCha20Poly1305(key).encrypt(b"\0" * 4 + struct.pack("<Q", counter), pt, ad)


def tai64n(secs, nanos):
    return struct.pack(">QI", (1 << 62) + 10 + secs, nanos)


def run(psk):
    s_i = clamp(bytes([0x11]) * 32)
    s_r = clamp(bytes([0x22]) * 32)
    e_i = clamp(bytes([0x33]) * 32)
    e_r = clamp(bytes([0x44]) * 32)
    S_i, S_r, E_i, E_r = pub(s_i), pub(s_r), pub(e_i), pub(e_r)
    idx_i, idx_r = 0x01020304, 0x0A0B0C0D

    ck = H(LABEL)
    h = H(ck, S_r)
    head1 = bytes([1, 0, 0, 0]) + struct.pack("<I", idx_i)
    h = H(h, head1)
    h = H(h, E_i)
    (ck,) = kdf(ck, E_i, 1)
    ck, k = kdf(ck, dh(e_i, S_r), 2)
    enc_static = seal(k, 0, S_i, h)
    h = H(h, enc_static)
    ck, k = kdf(ck, dh(s_i, S_r), 2)
    enc_ts = seal(k, 0, tai64n(1_700_000_000, 123_456_789), h)
    h = H(h, enc_ts)
    msg1 = head1 + E_i + enc_static + enc_ts

    head2 = bytes([2, 0, 0, 0]) + struct.pack("<II", idx_r, idx_i)
    h = H(h, head2)
    h = H(h, E_r)
    (ck,) = kdf(ck, E_r, 1)
    (ck,) = kdf(ck, dh(e_r, E_i), 1)
    (ck,) = kdf(ck, dh(e_r, S_i), 1)
    ck, tau, k = kdf(ck, psk, 3)
    h = H(h, tau)
    enc_empty = seal(k, 0, b"", h)
    h = H(h, enc_empty)
    msg2 = head2 + E_r + enc_empty

    t_send, t_recv = kdf(ck, b"", 2)
    frame = bytes([4, 0, 0, 0]) + struct.pack("<IQ", idx_r, 0) + seal(t_send, 0, b"ping", b"")
    return {
        "initiator_public": S_i,
        "responder_public": S_r,
        "msg1": msg1,
        "msg2": msg2,
        "initiator_send": t_send,
        "responder_send": t_recv,
        "transcript": h,
        "ping_frame": frame,
    }


if __name__ == "__main__":
    for name, psk in (("zero_psk", b"\0" * 32), ("psk_55", bytes([0x55]) * 32)):
        print(f"[{name}]")
        for k, v in run(psk).items():
            print(f"{k} = {v.hex()}")
