"""Per-robot authority-rotation blockchain carrying the contract transactions.

Byte layout (all integers little-endian, fixed width)::

    transaction = kind:u8 (0 noop, 1 submit) | sender:u32 | nonce:u64
                  [| n_samples:u32 | count:u32 | count * weight:f32]   (submit only)
                  | signature:65 bytes (zero placeholder, never checked)
    header      = index:u64 | parent:32 | sealer:u32 | timestamp_ms:u64 | tx_root:32
    block       = header | seal:65 bytes (zero placeholder) | n_txs:u32
                  | n_txs * (length:u32 | transaction)

``tx_root`` is SHA-256 over the concatenated transaction hashes, the block
hash is SHA-256 over the header, and a transaction hash is SHA-256 over its
bytes. Block and transaction sizes are the lengths of these encodings.
"""

from __future__ import annotations

import base64
import hashlib
import json
import struct
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable

import numpy as np

from .contract import ContractState, apply_tx
from .netsim import ConnectivityGraph, DeliveryLog, Envelope, exchange

SIG_BYTES = 65
GENESIS_SEALER = 0xFFFFFFFF
ZERO_HASH = bytes(32)

_TX_HEAD = struct.Struct("<BIQ")
_TX_SUBMIT = struct.Struct("<II")
_HEADER = struct.Struct("<Q32sIQ32s")
_U32 = struct.Struct("<I")


class ChainError(ValueError):
    """Malformed or invalid chain data."""


@dataclass(frozen=True, eq=False)
class Transaction:
    sender: int
    nonce: int
    kind: str = "noop"
    weights: np.ndarray | None = None
    n_samples: int = 0

    def __post_init__(self):
        if self.kind not in ("submit", "noop"):
            raise ChainError(f"unknown transaction kind {self.kind!r}")
        if self.sender < 0 or self.nonce < 0:
            raise ChainError("sender and nonce must be non-negative")
        if self.kind == "submit":
            if self.weights is None or self.n_samples < 1:
                raise ChainError("submit needs weights and n_samples >= 1")
            w = np.ascontiguousarray(self.weights, dtype="<f4").ravel()
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)

    @cached_property
    def payload(self) -> bytes:
        parts = [_TX_HEAD.pack(1 if self.kind == "submit" else 0, self.sender, self.nonce)]
        if self.kind == "submit":
            parts.append(_TX_SUBMIT.pack(self.n_samples, self.weights.size))
            parts.append(self.weights.tobytes())
        parts.append(bytes(SIG_BYTES))
        return b"".join(parts)

    @cached_property
    def hash(self) -> bytes:
        return hashlib.sha256(self.payload).digest()

    @property
    def byte_size(self) -> int:
        return len(self.payload)

    @property
    def key(self) -> tuple[int, int]:
        return self.sender, self.nonce


def submit_tx(sender: int, nonce: int, weights, n_samples: int) -> Transaction:
    return Transaction(sender, nonce, "submit", weights, int(n_samples))


def tx_from_bytes(buf: bytes) -> Transaction:
    try:
        kind, sender, nonce = _TX_HEAD.unpack_from(buf, 0)
        off = _TX_HEAD.size
        if kind == 1:
            n_samples, count = _TX_SUBMIT.unpack_from(buf, off)
            off += _TX_SUBMIT.size
            w = np.frombuffer(buf, dtype="<f4", count=count, offset=off)
            off += 4 * count
            tx = Transaction(sender, nonce, "submit", w, n_samples)
        elif kind == 0:
            tx = Transaction(sender, nonce)
        else:
            raise ChainError(f"unknown transaction kind byte {kind}")
    except (struct.error, ValueError) as exc:
        raise ChainError(f"malformed transaction: {exc}") from exc
    if len(buf) != off + SIG_BYTES:
        raise ChainError("transaction length mismatch")
    return tx


@dataclass(frozen=True, eq=False)
class Block:
    index: int
    parent: bytes
    sealer: int
    timestamp_ms: int
    txs: tuple = ()

    @property
    def timestamp(self) -> float:
        return self.timestamp_ms / 1000.0

    @cached_property
    def tx_root(self) -> bytes:
        return hashlib.sha256(b"".join(tx.hash for tx in self.txs)).digest()

    @cached_property
    def header(self) -> bytes:
        return _HEADER.pack(self.index, self.parent, self.sealer, self.timestamp_ms, self.tx_root)

    @cached_property
    def hash(self) -> bytes:
        return hashlib.sha256(self.header).digest()

    @cached_property
    def nbytes(self) -> int:
        return len(self.header) + SIG_BYTES + 4 + sum(4 + tx.byte_size for tx in self.txs)

    def to_bytes(self) -> bytes:
        parts = [self.header, bytes(SIG_BYTES), _U32.pack(len(self.txs))]
        for tx in self.txs:
            parts.append(_U32.pack(tx.byte_size))
            parts.append(tx.payload)
        return b"".join(parts)


def block_from_bytes(buf: bytes) -> Block:
    try:
        index, parent, sealer, ts, root = _HEADER.unpack_from(buf, 0)
        off = _HEADER.size + SIG_BYTES
        (n,) = _U32.unpack_from(buf, off)
        off += 4
        txs = []
        for _ in range(n):
            (ln,) = _U32.unpack_from(buf, off)
            off += 4
            txs.append(tx_from_bytes(bytes(buf[off:off + ln])))
            off += ln
    except struct.error as exc:
        raise ChainError(f"malformed block: {exc}") from exc
    if off != len(buf):
        raise ChainError("block length mismatch")
    block = Block(index, parent, sealer, ts, tuple(txs))
    if block.tx_root != root:
        raise ChainError("transaction root mismatch")
    return block


GENESIS = Block(0, ZERO_HASH, GENESIS_SEALER, 0, ())


def block_to_json(block: Block) -> dict:
    txs = []
    for tx in block.txs:
        row = {"sender": tx.sender, "nonce": tx.nonce, "kind": tx.kind}
        if tx.kind == "submit":
            row["n_samples"] = tx.n_samples
            row["weights"] = base64.b64encode(tx.weights.tobytes()).decode("ascii")
        txs.append(row)
    return {
        "index": block.index,
        "hash": block.hash.hex(),
        "parent": block.parent.hex(),
        "sealer": block.sealer,
        "timestamp_ms": block.timestamp_ms,
        "nbytes": block.nbytes,
        "txs": txs,
    }


def block_from_json(row: dict) -> Block:
    txs = []
    for t in row["txs"]:
        if t["kind"] == "submit":
            w = np.frombuffer(base64.b64decode(t["weights"]), dtype="<f4")
            txs.append(submit_tx(t["sender"], t["nonce"], w, t["n_samples"]))
        else:
            txs.append(Transaction(t["sender"], t["nonce"]))
    block = Block(row["index"], bytes.fromhex(row["parent"]), row["sealer"], row["timestamp_ms"], tuple(txs))
    if "hash" in row and block.hash.hex() != row["hash"]:
        raise ChainError(f"hash mismatch at height {row['index']}")
    return block


def write_block_log(blocks: Iterable[Block], path) -> None:
    with open(path, "w") as fh:
        for b in blocks:
            fh.write(json.dumps(block_to_json(b), separators=(",", ":")) + "\n")


def read_block_log(path) -> list[Block]:
    with open(path) as fh:
        return [block_from_json(json.loads(line)) for line in fh if line.strip()]


@dataclass(frozen=True)
class ChainConfig:
    n_robots: int = 15
    block_period_ms: int = 10_000
    tick_ms: int = 100
    announce_every: int = 10  # ticks between periodic head announcements
    rotation: tuple = ()  # in-turn sealer for height h is rotation[h % n]

    def __post_init__(self):
        if not self.rotation:
            object.__setattr__(self, "rotation", tuple(range(self.n_robots)))
        if sorted(self.rotation) != list(range(self.n_robots)):
            raise ValueError("rotation must be a permutation of robot ids")
        if self.block_period_ms <= 0 or self.tick_ms <= 0:
            raise ValueError("periods must be positive")

    def in_turn(self, height: int) -> int:
        return self.rotation[height % self.n_robots]

    def earliest_seal_ms(self, parent_ts_ms: int, height: int, robot: int) -> int:
        """Earliest time ``robot`` may seal a block at ``height``.

        The in-turn sealer waits one block period. Everyone else waits one
        more period plus ``robot`` ticks, so the lowest id goes first.
        """
        if self.in_turn(height) == robot:
            return parent_ts_ms + self.block_period_ms
        return parent_ts_ms + 2 * self.block_period_ms + robot * self.tick_ms


def seeded_rotation(n_robots: int, seed: int) -> tuple:
    rng = np.random.default_rng([seed, 0xB10C])
    return tuple(int(v) for v in rng.permutation(n_robots))


@dataclass(frozen=True, eq=False)
class BlockMeta:
    state: ContractState
    next_nonce: tuple
    cum_bytes: int


class ReplayStore:
    """Memoised replay keyed by block hash.

    Replay is a pure function of the block sequence, so every node may share
    one store. Blocks must be registered before their state is requested.
    """

    def __init__(self, genesis_state: ContractState, n_robots: int, genesis: Block = GENESIS):
        self.genesis = genesis
        self.genesis_state = genesis_state
        self.n_robots = n_robots
        self.blocks: dict[bytes, Block] = {genesis.hash: genesis}
        self._meta: dict[bytes, BlockMeta] = {
            genesis.hash: BlockMeta(genesis_state, (0,) * n_robots, genesis.nbytes)
        }
        self.events: dict[bytes, list] = {genesis.hash: []}

    def register(self, block: Block) -> None:
        self.blocks.setdefault(block.hash, block)

    def meta(self, h: bytes) -> BlockMeta:
        m = self._meta.get(h)
        if m is not None:
            return m
        path = []
        while h not in self._meta:
            path.append(h)
            h = self.blocks[h].parent
        m = self._meta[h]
        for bh in reversed(path):
            block = self.blocks[bh]
            state, events = m.state, []
            nonces = list(m.next_nonce)
            for tx in block.txs:
                nonces[tx.sender] += 1
                state, ev = apply_tx(state, tx)
                events.extend(ev)
            m = BlockMeta(state, tuple(nonces), m.cum_bytes + block.nbytes)
            self._meta[bh] = m
            self.events[bh] = events
        return m

    def state(self, h: bytes) -> ContractState:
        return self.meta(h).state


def replay(blocks: Iterable[Block], genesis_state: ContractState) -> ContractState:
    """Pure left fold of the contract over the transactions of ``blocks``.

    ``blocks`` runs from genesis (which may be omitted) to the head.
    """
    state = genesis_state
    for b in blocks:
        for tx in b.txs:
            state, _ = apply_tx(state, tx)
    return state


def replay_with_events(blocks: Iterable[Block], genesis_state: ContractState):
    """Like ``replay`` but also returns ``[(block, events)]``."""
    state, out = genesis_state, []
    for b in blocks:
        events = []
        for tx in b.txs:
            state, ev = apply_tx(state, tx)
            events.extend(ev)
        out.append((b, events))
    return state, out


def validate_block(block: Block, parent: Block, parent_nonces: tuple, cfg: ChainConfig) -> str | None:
    """Reason string if ``block`` may not extend ``parent``, else None."""
    if block.parent != parent.hash:
        return "bad_parent"
    if block.index != parent.index + 1:
        return "bad_index"
    if block.timestamp_ms < parent.timestamp_ms + cfg.block_period_ms:
        return "bad_timestamp"
    if not 0 <= block.sealer < cfg.n_robots:
        return "bad_sealer"
    nonces = list(parent_nonces)
    for tx in block.txs:
        if not 0 <= tx.sender < cfg.n_robots:
            return "bad_sender"
        if tx.nonce != nonces[tx.sender]:
            return "bad_nonce"
        nonces[tx.sender] += 1
    return None


# gossip payloads


@dataclass(frozen=True, eq=False)
class BlockAnnounce:
    block: Block
    kind: str = "block"

    @property
    def nbytes(self) -> int:
        return self.block.nbytes


@dataclass(frozen=True, eq=False)
class TxGossip:
    tx: Transaction
    kind: str = "tx"

    @property
    def nbytes(self) -> int:
        return self.tx.byte_size


@dataclass(frozen=True, eq=False)
class SegmentRequest:
    target: int
    locator: tuple
    kind: str = "segment_request"

    @property
    def nbytes(self) -> int:
        return 4 + 32 * len(self.locator)


@dataclass(frozen=True, eq=False)
class ChainSegment:
    target: int
    blocks: tuple
    kind: str = "segment"

    @property
    def nbytes(self) -> int:
        return 4 + sum(b.nbytes for b in self.blocks)


class ChainNode:
    """One robot's view of the chain: block tree, head, mempool, cached state."""

    def __init__(self, owner: int, cfg: ChainConfig, store: ReplayStore):
        self.owner = owner
        self.cfg = cfg
        self.store = store
        g = store.genesis
        self.blocks: dict[bytes, Block] = {g.hash: g}
        self.head: bytes = g.hash
        self.main: list[bytes] = [g.hash]  # head chain by height
        self.mempool: dict[bytes, tuple] = {}  # tx hash -> (first_seen_ms, tx)
        self.seen_txs: set[bytes] = set()
        self.orphans: dict[bytes, Block] = {}
        self.fresh: list[bytes] = []
        self.resurrected: list[Transaction] = []  # to re-gossip after a reorg
        self.log: list[tuple] = []  # (time_ms, reason, detail)
        self.nonce = 0
        self._announced: bytes | None = None
        self._requested_at: dict[int, int] = {}

    # views

    @property
    def head_block(self) -> Block:
        return self.blocks[self.head]

    @property
    def state(self) -> ContractState:
        return self.store.state(self.head)

    @property
    def next_nonces(self) -> tuple:
        return self.store.meta(self.head).next_nonce

    def chain(self) -> list[Block]:
        return [self.blocks[h] for h in self.main]

    def on_main(self, h: bytes) -> bool:
        b = self.blocks.get(h)
        return b is not None and b.index < len(self.main) and self.main[b.index] == h

    # block handling

    def add_block(self, block: Block, now_ms: int = 0) -> bool:
        """Validate and insert; orphans are parked until their parent arrives.

        Every newly inserted hash (including released orphans) is appended to
        ``self.fresh`` so callers can run the fork choice over them.
        """
        if block.hash in self.blocks:
            return True
        parent = self.blocks.get(block.parent)
        if parent is None:
            self.orphans[block.hash] = block
            return False
        reason = validate_block(block, parent, self.store.meta(parent.hash).next_nonce, self.cfg)
        if reason is not None:
            self.log.append((now_ms, "rejected_block", reason))
            return False
        self.store.register(block)
        self.blocks[block.hash] = block
        self.fresh.append(block.hash)
        # adopt any parked children
        for h, orphan in list(self.orphans.items()):
            if orphan.parent == block.hash:
                del self.orphans[h]
                self.add_block(orphan, now_ms)
        return True

    def _better(self, h: bytes) -> bool:
        cand, cur = self.blocks[h], self.head_block
        return cand.index > cur.index or (cand.index == cur.index and h < self.head)

    def adopt_fresh(self, now_ms: int = 0) -> bool:
        """Run the fork choice over blocks inserted since the last call."""
        best = self.head
        for h in self.fresh:
            b, cb = self.blocks[h], self.blocks[best]
            if b.index > cb.index or (b.index == cb.index and h < best):
                best = h
        self.fresh.clear()
        return self.adopt(best, now_ms)

    def adopt(self, candidate: bytes, now_ms: int = 0) -> bool:
        """Switch head to ``candidate`` if it wins the fork choice."""
        if candidate not in self.blocks or candidate == self.head or not self._better(candidate):
            return False
        # walk the candidate back to the current main chain
        new_branch = []
        h = candidate
        while not self.on_main(h):
            new_branch.append(h)
            h = self.blocks[h].parent
        fork = self.blocks[h].index
        abandoned = self.main[fork + 1:]
        self.main = self.main[: fork + 1] + new_branch[::-1]
        self.head = candidate
        nonces = self.next_nonces
        for bh in abandoned:
            for tx in self.blocks[bh].txs:
                if tx.nonce >= nonces[tx.sender]:
                    self.mempool.setdefault(tx.hash, (now_ms, tx))
                    self.resurrected.append(tx)
        self._prune_mempool()
        return True

    def _prune_mempool(self):
        nonces = self.next_nonces
        stale = [h for h, (_, tx) in self.mempool.items() if tx.nonce < nonces[tx.sender]]
        for h in stale:
            del self.mempool[h]

    def receive_tx(self, tx: Transaction, now_ms: int = 0) -> bool:
        """Record a transaction; True if it is new to this node."""
        if tx.hash in self.seen_txs:
            return False
        self.seen_txs.add(tx.hash)
        if 0 <= tx.sender < self.cfg.n_robots and tx.nonce >= self.next_nonces[tx.sender]:
            self.mempool[tx.hash] = (now_ms, tx)
        return True

    def new_tx(self, kind="submit", weights=None, n_samples=0, now_ms: int = 0) -> Transaction:
        """Create, record and return this node's next transaction."""
        tx = Transaction(self.owner, self.nonce, kind, weights, n_samples)
        self.nonce += 1
        self.receive_tx(tx, now_ms)
        return tx

    def _select_txs(self) -> list[Transaction]:
        nonces = list(self.next_nonces)
        pool = sorted(self.mempool.values(), key=lambda p: (p[0], p[1].hash))
        chosen = []
        progress = True
        while progress and pool:
            progress = False
            rest = []
            for item in pool:
                tx = item[1]
                if tx.nonce == nonces[tx.sender]:
                    chosen.append(tx)
                    nonces[tx.sender] += 1
                    progress = True
                else:
                    rest.append(item)
            pool = rest
        return chosen

    def try_seal(self, now_ms: int) -> Block | None:
        head = self.head_block
        height = head.index + 1
        if now_ms < self.cfg.earliest_seal_ms(head.timestamp_ms, height, self.owner):
            return None
        block = Block(height, head.hash, self.owner, int(now_ms), tuple(self._select_txs()))
        if not self.add_block(block, now_ms):
            return None
        self.adopt_fresh(now_ms)
        return block

    def locator(self) -> tuple:
        out, step, i = [], 1, len(self.main) - 1
        while i > 0:
            out.append(self.main[i])
            if len(out) >= 8:
                step *= 2
            i -= step
        out.append(self.main[0])
        return tuple(out)

    # gossip

    def gossip_step(self, inbox: list, now_ms: int, tick: int = 0, seal: bool = True) -> list:
        """Process one tick of messages; return the payloads to broadcast."""
        out = []
        want_sync: set[int] = set()
        for env in inbox:
            msg = env.payload
            try:
                if isinstance(msg, BlockAnnounce):
                    b = msg.block
                    if b.hash in self.blocks:
                        continue
                    if self.add_block(b, now_ms):
                        self.adopt_fresh(now_ms)
                    elif b.hash in self.orphans:
                        want_sync.add(env.sender)
                elif isinstance(msg, TxGossip):
                    if self.receive_tx(msg.tx, now_ms):
                        out.append(msg)
                elif isinstance(msg, SegmentRequest):
                    if msg.target == self.owner:
                        fork = 0
                        for h in msg.locator:
                            if self.on_main(h):
                                fork = self.blocks[h].index
                                break
                        out.append(ChainSegment(env.sender, tuple(self.chain()[fork + 1:])))
                elif isinstance(msg, ChainSegment):
                    if msg.target == self.owner:
                        for b in msg.blocks:
                            self.add_block(b, now_ms)
                        self.adopt_fresh(now_ms)
                else:
                    raise ChainError(f"unknown message {type(msg).__name__}")
            except (ChainError, KeyError, IndexError, AttributeError) as exc:
                self.log.append((now_ms, "dropped_message", str(exc)))
        for peer in sorted(want_sync):
            last = self._requested_at.get(peer, -10**12)
            if now_ms - last >= self.cfg.announce_every * self.cfg.tick_ms:
                self._requested_at[peer] = now_ms
                out.append(SegmentRequest(peer, self.locator()))
        if self.resurrected:
            out.extend(TxGossip(tx) for tx in self.resurrected if tx.hash in self.mempool)
            self.resurrected.clear()
        if seal:
            self.try_seal(now_ms)
        if self.head != self._announced or tick % self.cfg.announce_every == 0:
            if self.head != self.store.genesis.hash:
                out.append(BlockAnnounce(self.head_block))
            self._announced = self.head
        return out


def network_tick(
    nodes: list[ChainNode],
    graph: ConnectivityGraph,
    outboxes: dict[int, list],
    tick: int,
    log: DeliveryLog | None = None,
    seal: bool = True,
) -> dict[int, list]:
    """Deliver last tick's broadcasts, then run every node's gossip step.

    Returns the payloads each node broadcasts for the next tick.
    """
    now_ms = tick * nodes[0].cfg.tick_ms
    env_out = {i: [Envelope(i, p, now_ms) for p in msgs] for i, msgs in outboxes.items()}
    inboxes = exchange(graph, env_out, log, tick)
    return {n.owner: n.gossip_step(inboxes.get(n.owner, []), now_ms, tick, seal) for n in nodes}


def make_network(n_robots: int, genesis_state: ContractState, cfg: ChainConfig | None = None):
    cfg = cfg or ChainConfig(n_robots=n_robots)
    store = ReplayStore(genesis_state, n_robots)
    return [ChainNode(i, cfg, store) for i in range(n_robots)], store


def audit_node(node: ChainNode, genesis_state: ContractState) -> bool:
    """Cached state equals a fresh replay of the head chain."""
    return node.state.same_as(replay(node.chain(), genesis_state))


def chain_bytes(blocks: Iterable[Block]) -> int:
    return sum(b.nbytes for b in blocks)
