"""Pure-Python BLAKE3 (hash mode only).

The wire format's content addressing requires BLAKE3 digests and no C
implementation is available in this environment, so the primitive is
implemented here. Verification workloads hash every entry of an
artifact, making this the hottest code path in the package. Two speed
strategies are used:

- the scalar compression function is generated at import time with all
  seven rounds unrolled and the message schedule baked into
  local-variable reads (~1.5x over an array-based loop), and
- when numpy is available, independent compressions run lane-parallel
  as uint32 array columns: `digest_many` batches whole messages and
  `digest` batches the chunks of one long message. Both are verified
  against the scalar path in the test suite.

Only the plain hash mode is provided (no keyed hashing, no key
derivation). Output length defaults to the 32 bytes the hash-reference
format uses, with extended output supported for completeness.
"""

from __future__ import annotations

import struct

try:
    import numpy as _np
except ImportError:  # pragma: no cover - numpy ships with matplotlib here
    _np = None

_IV = (
    0x6A09E667, 0xBB67AE85, 0x3C6EF372, 0xA54FF53A,
    0x510E527F, 0x9B05688C, 0x1F83D9AB, 0x5BE0CD19,
)

_BLOCK_LEN = 64
_CHUNK_LEN = 1024

_CHUNK_START = 1 << 0
_CHUNK_END = 1 << 1
_PARENT = 1 << 2
_ROOT = 1 << 3

_MSG_PERMUTATION = (2, 6, 3, 10, 7, 0, 4, 13, 1, 11, 12, 5, 9, 14, 15, 8)

# Column then diagonal mixing targets of the eight G applications.
_G_LAYOUT = (
    (0, 4, 8, 12), (1, 5, 9, 13), (2, 6, 10, 14), (3, 7, 11, 15),
    (0, 5, 10, 15), (1, 6, 11, 12), (2, 7, 8, 13), (3, 4, 9, 14),
)


def _build_schedules() -> tuple[tuple[int, ...], ...]:
    schedules = [tuple(range(16))]
    for _ in range(6):
        prev = schedules[-1]
        schedules.append(tuple(prev[_MSG_PERMUTATION[i]] for i in range(16)))
    return tuple(schedules)


_SCHEDULES = _build_schedules()

_unpack_block = struct.Struct("<16I").unpack
_pack_words = struct.Struct("<16I").pack


def _gen_compress_source() -> str:
    """Emit the unrolled compression function source.

    Message words are bound once to locals m0..m15; each round reads
    them directly per the permuted schedule, so the inner loop contains
    only local loads, masked adds, xors and rotates.
    """
    lines = [
        "def _compress(cv, m, counter, block_len, flags):",
        "    M = 0xFFFFFFFF",
        "    m0, m1, m2, m3, m4, m5, m6, m7, m8, m9, m10, m11, m12, m13, m14, m15 = m",
        "    v0, v1, v2, v3, v4, v5, v6, v7 = cv",
        "    v8 = 0x6A09E667",
        "    v9 = 0xBB67AE85",
        "    v10 = 0x3C6EF372",
        "    v11 = 0xA54FF53A",
        "    v12 = counter & M",
        "    v13 = (counter >> 32) & M",
        "    v14 = block_len",
        "    v15 = flags",
    ]
    schedule = list(range(16))
    for _ in range(7):
        for g, (a, b, c, d) in enumerate(_G_LAYOUT):
            mx = f"m{schedule[2 * g]}"
            my = f"m{schedule[2 * g + 1]}"
            lines += [
                f"    v{a} = (v{a} + v{b} + {mx}) & M",
                f"    v{d} ^= v{a}",
                f"    v{d} = (v{d} >> 16) | ((v{d} << 16) & M)",
                f"    v{c} = (v{c} + v{d}) & M",
                f"    v{b} ^= v{c}",
                f"    v{b} = (v{b} >> 12) | ((v{b} << 20) & M)",
                f"    v{a} = (v{a} + v{b} + {my}) & M",
                f"    v{d} ^= v{a}",
                f"    v{d} = (v{d} >> 8) | ((v{d} << 24) & M)",
                f"    v{c} = (v{c} + v{d}) & M",
                f"    v{b} ^= v{c}",
                f"    v{b} = (v{b} >> 7) | ((v{b} << 25) & M)",
            ]
        schedule = [schedule[_MSG_PERMUTATION[i]] for i in range(16)]
    lines += [
        "    c0, c1, c2, c3, c4, c5, c6, c7 = cv",
        "    return (",
        "        v0 ^ v8, v1 ^ v9, v2 ^ v10, v3 ^ v11,",
        "        v4 ^ v12, v5 ^ v13, v6 ^ v14, v7 ^ v15,",
        "        v8 ^ c0, v9 ^ c1, v10 ^ c2, v11 ^ c3,",
        "        v12 ^ c4, v13 ^ c5, v14 ^ c6, v15 ^ c7,",
        "    )",
    ]
    return "\n".join(lines)


_namespace: dict = {}
exec(compile(_gen_compress_source(), "<pamkit.blake3 compress>", "exec"), _namespace)
_compress = _namespace["_compress"]
del _namespace


def _block_words(block: bytes) -> tuple[int, ...]:
    if len(block) == _BLOCK_LEN:
        return _unpack_block(block)
    return _unpack_block(block + b"\x00" * (_BLOCK_LEN - len(block)))


class _Output:
    """Pending final compression, expandable into root output bytes."""

    __slots__ = ("cv", "block", "counter", "block_len", "flags")

    def __init__(self, cv, block, counter, block_len, flags):
        self.cv = cv
        self.block = block
        self.counter = counter
        self.block_len = block_len
        self.flags = flags

    def chaining_value(self) -> tuple[int, ...]:
        return _compress(self.cv, self.block, self.counter, self.block_len, self.flags)[:8]

    def root_bytes(self, length: int) -> bytes:
        out = bytearray()
        counter = 0
        while len(out) < length:
            words = _compress(self.cv, self.block, counter, self.block_len, self.flags | _ROOT)
            out.extend(_pack_words(*words))
            counter += 1
        return bytes(out[:length])


def _chunk_output(chunk: bytes, chunk_counter: int) -> _Output:
    """Compress all but the last block of one chunk; defer the last."""
    cv = _IV
    n = len(chunk)
    # A chunk always contributes at least one block, even when empty.
    last_start = ((n - 1) // _BLOCK_LEN) * _BLOCK_LEN if n else 0
    flags = _CHUNK_START
    pos = 0
    while pos < last_start:
        cv = _compress(
            cv, _unpack_block(chunk[pos:pos + _BLOCK_LEN]), chunk_counter, _BLOCK_LEN, flags,
        )[:8]
        flags = 0
        pos += _BLOCK_LEN
    last = chunk[last_start:]
    return _Output(cv, _block_words(last), chunk_counter, len(last), flags | _CHUNK_END)


def _parent_output(left_cv, right_cv) -> _Output:
    return _Output(_IV, tuple(left_cv) + tuple(right_cv), 0, _BLOCK_LEN, _PARENT)


def _digest_scalar(data: bytes, length: int) -> bytes:
    n = len(data)
    if n <= _CHUNK_LEN:
        return _chunk_output(data, 0).root_bytes(length)

    # Subtree chaining values, merged by the trailing-zeros rule on the
    # chunk counter, exactly mirroring the incremental hasher.
    stack: list[tuple[int, ...]] = []
    total_chunks = 0
    pos = 0
    while n - pos > _CHUNK_LEN:
        cv = _chunk_output(data[pos:pos + _CHUNK_LEN], total_chunks).chaining_value()
        total_chunks += 1
        merges = total_chunks
        while merges & 1 == 0:
            cv = _parent_output(stack.pop(), cv).chaining_value()
            merges >>= 1
        stack.append(cv)
        pos += _CHUNK_LEN

    output = _chunk_output(data[pos:], total_chunks)
    while stack:
        output = _parent_output(stack.pop(), output.chaining_value())
    return output.root_bytes(length)


def digest(data: bytes, length: int = 32) -> bytes:
    """BLAKE3 hash of `data`, default 32 bytes."""
    if _np is not None and len(data) > 8 * _CHUNK_LEN:
        return _digest_chunk_lanes(data, length)
    return _digest_scalar(data, length)


def digest_hex(data: bytes, length: int = 32) -> str:
    return digest(data, length).hex()


class Hasher:
    """Incremental BLAKE3 hasher (hash mode)."""

    def __init__(self) -> None:
        self._buf = bytearray()
        self._stack: list[tuple[int, ...]] = []
        self._total_chunks = 0

    def update(self, data: bytes) -> "Hasher":
        self._buf.extend(data)
        # Only flush chunks that are certainly not the final one.
        while len(self._buf) > _CHUNK_LEN:
            chunk = bytes(self._buf[:_CHUNK_LEN])
            del self._buf[:_CHUNK_LEN]
            cv = _chunk_output(chunk, self._total_chunks).chaining_value()
            self._total_chunks += 1
            merges = self._total_chunks
            while merges & 1 == 0:
                cv = _parent_output(self._stack.pop(), cv).chaining_value()
                merges >>= 1
            self._stack.append(cv)
        return self

    def digest(self, length: int = 32) -> bytes:
        output = _chunk_output(bytes(self._buf), self._total_chunks)
        for cv in reversed(self._stack):
            output = _parent_output(cv, output.chaining_value())
        return output.root_bytes(length)

    def hexdigest(self, length: int = 32) -> str:
        return self.digest(length).hex()


# ---------------------------------------------------------------------------
# Lane-parallel batching (numpy). Independent compressions are laid out as
# columns of uint32 arrays; unsigned arithmetic wraps mod 2^32 natively.
# ---------------------------------------------------------------------------


def _compress_lanes(cv, m, counter_lo, block_len, flags):
    """Vector compression over N lanes.

    cv: (8, N); m: (16, N); counter_lo/block_len/flags: (N,) or scalar.
    Returns the full (16, N) output state.
    """
    n = cv.shape[1]
    v = _np.empty((16, n), _np.uint32)
    v[:8] = cv
    for i in range(4):
        v[8 + i] = _IV[i]
    v[12] = counter_lo
    v[13] = 0
    v[14] = block_len
    v[15] = flags
    tmp = _np.empty(n, _np.uint32)

    for s in _SCHEDULES:
        for g, (a, b, c, d) in enumerate(_G_LAYOUT):
            va, vb, vc, vd = v[a], v[b], v[c], v[d]
            mx = m[s[2 * g]]
            my = m[s[2 * g + 1]]
            _np.add(va, vb, out=va)
            _np.add(va, mx, out=va)
            _np.bitwise_xor(vd, va, out=vd)
            _np.right_shift(vd, 16, out=tmp)
            _np.left_shift(vd, 16, out=vd)
            _np.bitwise_or(vd, tmp, out=vd)
            _np.add(vc, vd, out=vc)
            _np.bitwise_xor(vb, vc, out=vb)
            _np.right_shift(vb, 12, out=tmp)
            _np.left_shift(vb, 20, out=vb)
            _np.bitwise_or(vb, tmp, out=vb)
            _np.add(va, vb, out=va)
            _np.add(va, my, out=va)
            _np.bitwise_xor(vd, va, out=vd)
            _np.right_shift(vd, 8, out=tmp)
            _np.left_shift(vd, 24, out=vd)
            _np.bitwise_or(vd, tmp, out=vd)
            _np.add(vc, vd, out=vc)
            _np.bitwise_xor(vb, vc, out=vb)
            _np.right_shift(vb, 7, out=tmp)
            _np.left_shift(vb, 25, out=vb)
            _np.bitwise_or(vb, tmp, out=vb)

    v[:8] ^= v[8:]
    v[8:] ^= cv
    return v


def _message_words(data: bytes, blocks: int) -> "object":
    """(blocks, 16) uint32 word matrix, zero-padding the final block."""
    padded = blocks * _BLOCK_LEN
    if len(data) < padded:
        data = data + b"\x00" * (padded - len(data))
    return _np.frombuffer(data, dtype="<u4").reshape(blocks, 16).astype(_np.uint32)


def _digest_chunk_lanes(data: bytes, length: int) -> bytes:
    """Hash one long message by compressing its chunks as lanes."""
    n = len(data)
    chunks = (n + _CHUNK_LEN - 1) // _CHUNK_LEN
    tail_len = n - (chunks - 1) * _CHUNK_LEN
    tail_blocks = max(1, (tail_len + _BLOCK_LEN - 1) // _BLOCK_LEN)

    full = chunks - 1
    words = _np.empty((chunks, 16, 16), _np.uint32)
    if full:
        words[:full] = (
            _np.frombuffer(data[: full * _CHUNK_LEN], dtype="<u4")
            .reshape(full, 16, 16)
            .astype(_np.uint32)
        )
    words[full, :tail_blocks] = _message_words(data[full * _CHUNK_LEN:], tail_blocks)

    counters = _np.arange(chunks, dtype=_np.uint32)
    cv = _np.empty((8, chunks), _np.uint32)
    for i in range(8):
        cv[i] = _IV[i]

    last_block = _np.full(chunks, 15, _np.int64)
    last_block[-1] = tail_blocks - 1
    last_len = _np.full(chunks, _BLOCK_LEN, _np.uint32)
    last_len[-1] = tail_len - (tail_blocks - 1) * _BLOCK_LEN

    for k in range(16):
        # Lanes are ordered with the (possibly shorter) tail last, so
        # the lanes still needing block k form a prefix.
        active = int(_np.searchsorted(-last_block, -k, side="right"))
        if active == 0:
            break
        is_last = last_block[:active] == k
        flags = _np.where(is_last, _CHUNK_END, 0).astype(_np.uint32)
        if k == 0:
            flags |= _CHUNK_START
        blen = _np.where(is_last, last_len[:active], _BLOCK_LEN).astype(_np.uint32)
        m = _np.ascontiguousarray(words[:active, k, :].T)
        out = _compress_lanes(cv[:, :active], m, counters[:active], blen, flags)
        cv[:, :active] = out[:8]

    # Merge parents level by level: adjacent pairs, odd lane carries up.
    # This reproduces the canonical left-full tree shape.
    cvs = cv
    while cvs.shape[1] > 2:
        count = cvs.shape[1]
        pairs = count // 2
        m = _np.empty((16, pairs), _np.uint32)
        m[:8] = cvs[:, 0:2 * pairs:2]
        m[8:] = cvs[:, 1:2 * pairs:2]
        out = _compress_lanes(
            _np.repeat(_np.array(_IV, _np.uint32)[:, None], pairs, axis=1),
            m,
            _np.zeros(pairs, _np.uint32),
            _np.uint32(_BLOCK_LEN),
            _np.uint32(_PARENT),
        )
        if count & 1:
            cvs = _np.concatenate([out[:8], cvs[:, -1:]], axis=1)
        else:
            cvs = out[:8].copy()

    left = tuple(int(x) for x in cvs[:, 0])
    right = tuple(int(x) for x in cvs[:, 1])
    return _parent_output(left, right).root_bytes(length)


def digest_many(messages: list[bytes]) -> list[bytes]:
    """32-byte BLAKE3 digests for many independent messages.

    Single-chunk messages (<= 1024 bytes) are hashed lane-parallel when
    numpy is available; anything longer falls back to `digest`.
    """
    results: list[bytes | None] = [None] * len(messages)
    small: list[int] = []
    for i, msg in enumerate(messages):
        if len(msg) <= _CHUNK_LEN:
            small.append(i)
        else:
            results[i] = digest(msg)
    if _np is None or len(small) < 4:
        for i in small:
            results[i] = _digest_scalar(messages[i], 32)
        return results  # type: ignore[return-value]

    # Longest messages first so active lanes stay a prefix per block step.
    blocks = {i: max(1, (len(messages[i]) + _BLOCK_LEN - 1) // _BLOCK_LEN) for i in small}
    order = sorted(small, key=lambda i: -blocks[i])
    n = len(order)
    max_blocks = blocks[order[0]]

    words = _np.zeros((n, max_blocks, 16), _np.uint32)
    for lane, i in enumerate(order):
        words[lane, : blocks[i]] = _message_words(messages[i], blocks[i])
    lane_blocks = _np.array([blocks[i] for i in order])
    lane_last_len = _np.array(
        [len(messages[i]) - (blocks[i] - 1) * _BLOCK_LEN for i in order], _np.uint32
    )

    cv = _np.empty((8, n), _np.uint32)
    for i in range(8):
        cv[i] = _IV[i]
    zero = _np.zeros(n, _np.uint32)

    for k in range(max_blocks):
        active = int(_np.searchsorted(-lane_blocks, -(k + 1), side="right"))
        if active == 0:
            break
        is_last = lane_blocks[:active] == k + 1
        flags = _np.where(is_last, _CHUNK_END | _ROOT, 0).astype(_np.uint32)
        if k == 0:
            flags |= _CHUNK_START
        blen = _np.where(is_last, lane_last_len[:active], _BLOCK_LEN).astype(_np.uint32)
        m = _np.ascontiguousarray(words[:active, k, :].T)
        out = _compress_lanes(cv[:, :active], m, zero[:active], blen, flags)
        cv[:, :active] = out[:8]
        if is_last.any():
            final = out[:8, is_last].T.astype("<u4")
            for row, lane in zip(final, _np.nonzero(is_last)[0]):
                results[order[int(lane)]] = row.tobytes()

    return results  # type: ignore[return-value]
