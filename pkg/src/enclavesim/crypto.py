"""Key derivation, block ciphers, MACs, key wrapping and the freshness PRNG.

Every protected page is encrypted under its own 256-bit key assembled from
five bit fields (most significant first):

  hw_key      64 bits   per-device secret fused into the TCB
  enclave_id  31 bits   owner enclave
  random     128 bits   fresh draw on every write-back of the page
  page_addr   27 bits   physical page index (2^27 pages = 512 GiB)
  block_addr   6 bits   64-byte block within the page

The page key K has the block bits zeroed; the key for block b differs from K
only in those 6 bits, so k_0 == K.  Each 64-byte block is encrypted with
AES-256-ECB under its block key (four 16-byte cipher blocks).  Because the
random field changes on every write-back, ECB reuse across writes never
repeats a (key, plaintext) pair.

Only the 128-bit random field needs secrecy: the TCB re-derives the rest.  So
a stored key slot is AES-256(SSK, random) = 16 bytes, where the security
structure key SSK = device_key2 (128 bits) || boot_time (128 bits).

MACs are HMAC-SHA-256 truncated to 8 bytes: page MACs are keyed by the page
key K, upper forest levels and the EPC integrity tree by the SSK.  Domain
tags and node indices in the MAC input defeat cross-use and relocation.

AES contexts are memoized per key: ECB has no chaining state, so one
encryptor/decryptor pair per key serves any number of 16-byte-aligned
updates.  This matters because a single page transfer touches 64 distinct
block keys.
"""

from __future__ import annotations

import hashlib
import hmac
import logging
from dataclasses import dataclass
from functools import lru_cache

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .layout import BLOCK_SIZE, BLOCKS_PER_PAGE, PAGE_SIZE

logger = logging.getLogger(__name__)

HW_KEY_BITS = 64
ENCLAVE_ID_BITS = 31
RANDOM_BITS = 128
PAGE_ADDR_BITS = 27
BLOCK_ADDR_BITS = 6
KEY_BITS = HW_KEY_BITS + ENCLAVE_ID_BITS + RANDOM_BITS + PAGE_ADDR_BITS + BLOCK_ADDR_BITS
assert KEY_BITS == 256

_BLOCK_SHIFT = 0
_PAGE_SHIFT = BLOCK_ADDR_BITS
_RANDOM_SHIFT = _PAGE_SHIFT + PAGE_ADDR_BITS
_EID_SHIFT = _RANDOM_SHIFT + RANDOM_BITS
_HW_SHIFT = _EID_SHIFT + ENCLAVE_ID_BITS

MAC_BYTES = 8
WRAPPED_KEY_BYTES = 16


@lru_cache(maxsize=32768)
def _aes_ctx(key: bytes):
    """Cached (encryptor, decryptor) contexts for one AES-256 key."""
    cipher = Cipher(algorithms.AES(key), modes.ECB())
    return cipher.encryptor(), cipher.decryptor()


def aes_encrypt(key: bytes, data: bytes) -> bytes:
    return _aes_ctx(key)[0].update(data)


def aes_decrypt(key: bytes, data: bytes) -> bytes:
    return _aes_ctx(key)[1].update(data)


# ---------------------------------------------------------------- page keys


def compose_page_key(hw_key: int, enclave_id: int, random128: int, page: int) -> bytes:
    """Assemble a page key (block bits zero) as 32 big-endian bytes."""
    if not 0 <= hw_key < 1 << HW_KEY_BITS:
        raise ValueError("hw_key out of range")
    if not 0 <= enclave_id < 1 << ENCLAVE_ID_BITS:
        raise ValueError("enclave_id out of range")
    if not 0 <= random128 < 1 << RANDOM_BITS:
        raise ValueError("random component out of range")
    if not 0 <= page < 1 << PAGE_ADDR_BITS:
        raise ValueError("page index out of range")
    word = (
        (hw_key << _HW_SHIFT)
        | (enclave_id << _EID_SHIFT)
        | (random128 << _RANDOM_SHIFT)
        | (page << _PAGE_SHIFT)
    )
    return word.to_bytes(32, "big")


def derive_block_key(page_key: bytes, block: int) -> bytes:
    """Block key: identical to the page key except the low 6 bits."""
    if not 0 <= block < BLOCKS_PER_PAGE:
        raise ValueError("block index out of range")
    return page_key[:31] + bytes([(page_key[31] & 0xC0) | block])


@dataclass(frozen=True)
class KeyFields:
    hw_key: int
    enclave_id: int
    random: int
    page: int
    block: int


def split_key(key: bytes) -> KeyFields:
    """Decompose a 256-bit key into its fields (test/diagnostic helper)."""
    word = int.from_bytes(key, "big")
    return KeyFields(
        hw_key=word >> _HW_SHIFT,
        enclave_id=(word >> _EID_SHIFT) & ((1 << ENCLAVE_ID_BITS) - 1),
        random=(word >> _RANDOM_SHIFT) & ((1 << RANDOM_BITS) - 1),
        page=(word >> _PAGE_SHIFT) & ((1 << PAGE_ADDR_BITS) - 1),
        block=word & ((1 << BLOCK_ADDR_BITS) - 1),
    )


# ----------------------------------------------------------------- ciphers


def ecb_encrypt_block(block_key: bytes, data: bytes) -> bytes:
    """Encrypt one 64-byte block (four AES blocks) under its block key."""
    if len(data) != BLOCK_SIZE:
        raise ValueError("ECB block must be 64 bytes")
    return aes_encrypt(block_key, data)


def ecb_decrypt_block(block_key: bytes, data: bytes) -> bytes:
    if len(data) != BLOCK_SIZE:
        raise ValueError("ECB block must be 64 bytes")
    return aes_decrypt(block_key, data)


def ecb_encrypt_page(page_key: bytes, page: bytes) -> bytes:
    if len(page) != PAGE_SIZE:
        raise ValueError("page must be 4096 bytes")
    return b"".join(
        aes_encrypt(
            derive_block_key(page_key, b), page[b * BLOCK_SIZE : (b + 1) * BLOCK_SIZE]
        )
        for b in range(BLOCKS_PER_PAGE)
    )


def ecb_decrypt_page(page_key: bytes, page: bytes) -> bytes:
    if len(page) != PAGE_SIZE:
        raise ValueError("page must be 4096 bytes")
    return b"".join(
        aes_decrypt(
            derive_block_key(page_key, b), page[b * BLOCK_SIZE : (b + 1) * BLOCK_SIZE]
        )
        for b in range(BLOCKS_PER_PAGE)
    )


@lru_cache(maxsize=65536)
def _ctr_keystream(key: bytes, page: int, block: int, counter: int, nblocks16: int) -> bytes:
    # Counter blocks: high quad identifies (page, block), low quad carries the
    # write counter scaled by 4 so consecutive counters use disjoint streams.
    # Cached: reads between writes replay the same (key, counter) stream.
    hi = ((page << 6) | block).to_bytes(8, "big")
    base = counter << 2
    blocks = b"".join(hi + (base + i).to_bytes(8, "big") for i in range(nblocks16))
    return aes_encrypt(key, blocks)


def ctr_crypt_block(key: bytes, page: int, block: int, counter: int, data: bytes) -> bytes:
    """Counter-mode en/decrypt one 64-byte block (XOR is its own inverse)."""
    if len(data) != BLOCK_SIZE:
        raise ValueError("CTR block must be 64 bytes")
    ks = _ctr_keystream(key, page, block, counter, 4)
    return (int.from_bytes(ks, "big") ^ int.from_bytes(data, "big")).to_bytes(
        BLOCK_SIZE, "big"
    )


# -------------------------------------------------------------------- MACs


def keyed_mac8(key: bytes, domain: bytes, *parts: bytes) -> bytes:
    """8-byte truncated HMAC-SHA-256 with a domain separation tag."""
    m = hmac.new(key, domain, hashlib.sha256)
    for p in parts:
        m.update(p)
    return m.digest()[:MAC_BYTES]


def page_mac(page_key: bytes, plaintext_page: bytes) -> bytes:
    """Leaf MAC over a full plaintext page, keyed by the page key."""
    if len(plaintext_page) != PAGE_SIZE:
        raise ValueError("page must be 4096 bytes")
    return keyed_mac8(page_key, b"page-mac", plaintext_page)


def level_mac(ssk_bytes: bytes, level: int, node_index: int, children: bytes) -> bytes:
    """Upper-level MAC over concatenated child MACs, bound to the node index."""
    return keyed_mac8(
        ssk_bytes,
        b"level-mac",
        level.to_bytes(1, "big"),
        node_index.to_bytes(8, "big"),
        children,
    )


# ------------------------------------------------------------ key wrapping


@dataclass(frozen=True)
class Ssk:
    """Security structure key: second device key || boot timestamp."""

    device_key2: bytes  # 16 bytes
    boot_time: bytes  # 16 bytes

    def __post_init__(self):
        if len(self.device_key2) != 16 or len(self.boot_time) != 16:
            raise ValueError("SSK components must be 16 bytes each")

    @property
    def key_bytes(self) -> bytes:
        return self.device_key2 + self.boot_time


def wrap_key(ssk: Ssk, page_key: bytes) -> bytes:
    """Wrap only the 128-bit random component into a 16-byte key slot."""
    random128 = split_key(page_key).random
    return aes_encrypt(ssk.key_bytes, random128.to_bytes(16, "big"))


def unwrap_key(ssk: Ssk, wrapped: bytes, hw_key: int, enclave_id: int, page: int) -> bytes:
    """Recover the page key from a slot by re-deriving the public fields."""
    if len(wrapped) != WRAPPED_KEY_BYTES:
        raise ValueError("wrapped key slot must be 16 bytes")
    random128 = int.from_bytes(aes_decrypt(ssk.key_bytes, wrapped), "big")
    return compose_page_key(hw_key, enclave_id, random128, page)


# ------------------------------------------------------------------- PRNG


class FreshnessSource:
    """Deterministic 128-bit freshness generator for page-key randomness.

    "prng" mode is a counter-mode AES stream seeded from (boot_time, hw_key);
    "counter" mode falls back to a plain global counter, trading randomness
    for guaranteed uniqueness.  Both are reproducible from the run seed.
    """

    def __init__(self, boot_time: bytes, hw_key: int, mode: str = "prng"):
        if mode not in ("prng", "counter"):
            raise ValueError(f"unknown freshness mode {mode!r}")
        self.mode = mode
        self.draws = 0
        seed = hashlib.sha256(
            b"freshness" + boot_time + hw_key.to_bytes(8, "big")
        ).digest()
        self._seed_key = seed

    def draw(self) -> int:
        self.draws += 1
        if self.mode == "counter":
            return self.draws
        block = aes_encrypt(self._seed_key, self.draws.to_bytes(16, "big"))
        return int.from_bytes(block, "big")
