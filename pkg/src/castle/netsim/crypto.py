"""Key derivation and packet sealing.

Models the cover game's built-in channel security: a session password
gates membership, every link gets its own AEAD key, and all command
traffic rides inside ChaCha20-Poly1305.  The join handshake seals under
a key derived from public session parameters (integrity framing only);
real secrecy starts once the per-link key is established from an
ephemeral X25519 exchange authenticated by the password-derived token.
"""

from __future__ import annotations

import hashlib
import hmac
from random import Random
from typing import Optional

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

KEY_LEN = 32
SALT_LEN = 16
TOKEN_LEN = 32
KNOCK_BITS = 128

# scrypt work factor for the password digest; tests may lower it.
DEFAULT_KDF_COST = 2 ** 14


def derive_salt(session_name: str) -> bytes:
    """Public per-session salt; all joiners (including censors) know it."""
    return hashlib.sha256(b"castle-session:" + session_name.encode()).digest()[:SALT_LEN]


def derive_auth_secret(password: Optional[str], salt: bytes,
                       cost: int = DEFAULT_KDF_COST) -> bytes:
    """Slow hash of the session password, shared by everyone who knows it."""
    pw = (password or "").encode()
    return hashlib.scrypt(pw, salt=salt, n=cost, r=8, p=1, dklen=KEY_LEN)


def hello_key(salt: bytes) -> bytes:
    """Publicly derivable key sealing the join handshake packets."""
    return hashlib.sha256(b"castle-hello:" + salt).digest()


def join_token(auth_secret: bytes, client_nonce: bytes, client_pub: bytes,
               sender: int) -> bytes:
    """Binds the client's ephemeral public key to the session password."""
    msg = client_nonce + client_pub + bytes([sender])
    return hmac.new(auth_secret, b"castle-join:" + msg, hashlib.sha256).digest()


def tokens_match(expected: bytes, presented: bytes) -> bool:
    return hmac.compare_digest(expected, presented)


def knock_bytes(auth_secret: bytes, nbits: int = KNOCK_BITS) -> bytes:
    """The covert knock: the opening bit string a client must transmit."""
    digest = hmac.new(auth_secret, b"castle-knock", hashlib.sha256).digest()
    return digest[: (nbits + 7) // 8]


def new_keypair(rng: Random) -> tuple[X25519PrivateKey, bytes]:
    """Ephemeral X25519 pair from the session RNG (deterministic in sim)."""
    priv = X25519PrivateKey.from_private_bytes(rng.randbytes(32))
    pub = priv.public_key().public_bytes_raw()
    return priv, pub


def link_key(priv: X25519PrivateKey, peer_pub: bytes, salt: bytes,
             host_id: int, peer_id: int, client_nonce: bytes) -> bytes:
    """Per-link traffic key from the ephemeral exchange."""
    shared = priv.exchange(X25519PublicKey.from_public_bytes(peer_pub))
    ctx = salt + bytes([host_id, peer_id]) + client_nonce
    return hmac.new(shared, b"castle-link:" + ctx, hashlib.sha256).digest()


def seal(key: bytes, nonce: bytes, associated: bytes, plaintext: bytes) -> bytes:
    return ChaCha20Poly1305(key).encrypt(nonce, plaintext, associated)


def open_sealed(key: bytes, nonce: bytes, associated: bytes,
                ciphertext: bytes) -> Optional[bytes]:
    """Decrypt and verify; None on any authentication failure."""
    try:
        return ChaCha20Poly1305(key).decrypt(nonce, ciphertext, associated)
    except InvalidTag:
        return None
