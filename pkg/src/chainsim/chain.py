"""Blocks, hash chaining, chain storage, and longest-chain fork choice.

A ChainStore indexes every accepted block by header hash and keeps the full
post-state (UTXO set, contract registry, stake bookkeeping, current PoW
target) per block, so side branches validate without replaying from genesis.
Fork choice is block count with a strict-inequality switch: on equal length
the first-seen tip is kept.  Reorganizations below the highest checkpoint are
rejected outright.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

from . import contracts
from .crypto import Address, derive_address, sha256
from .ledger import (
    MAX_SUPPLY,
    Mempool,
    Outpoint,
    Transaction,
    TxKind,
    UtxoSet,
    Validity,
    VALID,
    deserialize_transaction,
    make_coinbase,
    validate_transaction,
)
from .merkle import merkle_root

GENESIS_PREV_HASH = b"\x00" * 32
CHAIN_MAGIC = b"LGLB"
CHAIN_FORMAT_VERSION = 1

EXTENDED = "Extended"
NEW_SIDE_BRANCH = "NewSideBranch"
REORGANIZED = "Reorganized"
REJECTED = "Rejected"


@dataclass(frozen=True)
class BlockHeader:
    height: int
    prev_header_hash: bytes
    data_hash: bytes
    timestamp: int
    size: int
    nonce: int
    rule_version: int = 0
    consensus_tag: bytes = b""

    def serialize(self, zero_tag: bool = False) -> bytes:
        tag = b"" if zero_tag else self.consensus_tag
        return b"".join(
            (
                struct.pack(">Q", self.height),
                self.prev_header_hash,
                self.data_hash,
                struct.pack(">Q", self.timestamp),
                struct.pack(">I", self.size),
                struct.pack(">Q", self.nonce),
                struct.pack(">H", self.rule_version),
                struct.pack(">I", len(tag)),
                tag,
            )
        )


def header_hash(header: BlockHeader) -> bytes:
    return sha256(header.serialize())


def deserialize_header(buf: bytes, offset: int = 0) -> tuple[BlockHeader, int]:
    fixed = struct.calcsize(">Q32s32sQIQHI")
    if offset + fixed > len(buf):
        raise ValueError(f"header truncated at byte {offset}")
    height, prev, data, ts, size, nonce, version, tag_len = struct.unpack_from(
        ">Q32s32sQIQHI", buf, offset
    )
    offset += fixed
    if offset + tag_len > len(buf):
        raise ValueError(f"header tag truncated at byte {offset}")
    tag = buf[offset : offset + tag_len]
    return BlockHeader(height, prev, data, ts, size, nonce, version, tag), offset + tag_len


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    transactions: tuple[Transaction, ...]

    def data_bytes(self) -> bytes:
        return block_data_bytes(self.transactions)

    def serialize(self) -> bytes:
        return self.header.serialize() + self.data_bytes()


def block_data_bytes(txs: Iterable[Transaction]) -> bytes:
    txs = tuple(txs)
    return struct.pack(">I", len(txs)) + b"".join(t.serialize() for t in txs)


def deserialize_block(buf: bytes, offset: int = 0) -> tuple[Block, int]:
    header, offset = deserialize_header(buf, offset)
    if offset + 4 > len(buf):
        raise ValueError(f"block truncated at byte {offset}")
    (count,) = struct.unpack_from(">I", buf, offset)
    offset += 4
    txs = []
    for _ in range(count):
        tx, offset = deserialize_transaction(buf, offset)
        txs.append(tx)
    return Block(header, tuple(txs)), offset


def transactions_merkle_root(txs: Iterable[Transaction]) -> bytes:
    return merkle_root([t.tx_id for t in txs])


# ---------------------------------------------------------------------------
# Parameters and genesis
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChainParams:
    confirmation_depth: int = 6
    block_subsidy: int = 50
    max_block_data_bytes: int = 65536
    genesis_allocation: tuple[tuple[Address, int], ...] = ()
    consensus: object = None  # one of the consensus params dataclasses

    def __post_init__(self):
        if self.confirmation_depth < 1:
            raise ValueError("confirmation depth must be at least 1")
        if self.block_subsidy < 0:
            raise ValueError("subsidy must be non-negative")


def make_genesis(params: ChainParams, extra_txs: tuple[Transaction, ...] = ()) -> Block:
    """Height-0 block carrying the initial allocation in its coinbase.

    extra_txs lets a scenario pre-configure state (for instance initial STAKE
    transactions spending the allocation) as part of the fixed genesis.
    """
    total = sum(amount for _, amount in params.genesis_allocation)
    if total > MAX_SUPPLY:
        raise ValueError("genesis allocation exceeds maximum supply")
    coinbase = make_coinbase(list(params.genesis_allocation), 0)
    txs = (coinbase,) + tuple(extra_txs)
    data = block_data_bytes(txs)
    header = BlockHeader(
        height=0,
        prev_header_hash=GENESIS_PREV_HASH,
        data_hash=transactions_merkle_root(txs),
        timestamp=0,
        size=len(data),
        nonce=0,
        rule_version=0,
    )
    return Block(header, txs)


# ---------------------------------------------------------------------------
# Chain state
# ---------------------------------------------------------------------------


@dataclass
class ChainState:
    utxo: UtxoSet
    registry: contracts.ContractRegistry = field(default_factory=dict)
    deploy_counts: dict[bytes, int] = field(default_factory=dict)
    stake_resets: dict[Outpoint, int] = field(default_factory=dict)
    pow_params: object = None  # PowParams with the branch-current target
    issued: int = 0  # sum of all coinbase outputs
    fees: int = 0  # sum of all fees paid to publishers

    def clone(self) -> "ChainState":
        return ChainState(
            self.utxo.copy(),
            contracts.clone_registry(self.registry),
            dict(self.deploy_counts),
            dict(self.stake_resets),
            self.pow_params,
            self.issued,
            self.fees,
        )


def _is_stake_model(params: ChainParams) -> bool:
    from . import consensus

    return isinstance(params.consensus, (consensus.PosChainParams, consensus.PosCoinAgeParams))


def _invalid(reason: str, detail: str = "") -> Validity:
    return Validity(False, reason, detail)


def _walk_transactions(
    txs: tuple[Transaction, ...],
    state: ChainState,
    height: int,
    params: ChainParams,
    coinbase_expected: bool,
) -> Validity:
    """Validate and apply a block's transactions in order, mutating state.

    Covers the ledger rules plus the chain-level ones: contract deploys must
    parse, calls must target a known contract and execute with gas = fee x
    GAS_PER_FEE_UNIT (failed executions keep the fee but revert writes).
    """
    allow_locked = not _is_stake_model(params)
    for index, tx in enumerate(txs):
        if coinbase_expected and (tx.kind == TxKind.COINBASE) != (index == 0):
            return _invalid("Coinbase", f"transaction {index}")
        v = validate_transaction(tx, state.utxo, allow_locked)
        if not v:
            return _invalid(v.reason, f"transaction {index}: {v.detail}".strip())
        fee = 0
        if tx.kind != TxKind.COINBASE:
            fee = sum(state.utxo.get(i.outpoint).output.amount for i in tx.inputs)
            fee -= tx.output_value
        if tx.kind == TxKind.CONTRACT_DEPLOY:
            try:
                contracts.parse_bytecode(tx.payload)
            except contracts.BytecodeError as exc:
                return _invalid("BadBytecode", f"transaction {index}: {exc}")
        call_target = None
        call_words: tuple[int, ...] = ()
        if tx.kind == TxKind.CONTRACT_CALL:
            call_target = tx.outputs[0].recipient.to_bytes()
            if call_target not in state.registry:
                return _invalid("UnknownContract", f"transaction {index}")
            try:
                call_words = contracts.parse_call_payload(tx.payload)
            except ValueError as exc:
                return _invalid("BadCallData", f"transaction {index}: {exc}")
        tx_id = tx.tx_id
        for inp in tx.inputs:
            state.utxo.spend(inp.outpoint, height)
        for i, out in enumerate(tx.outputs):
            locked = tx.kind == TxKind.STAKE and i == 0
            state.utxo.add((tx_id, i), out, locked, height)
        if tx.kind == TxKind.COINBASE:
            state.issued += tx.output_value
        else:
            state.fees += fee
        if tx.kind == TxKind.CONTRACT_DEPLOY:
            creator = derive_address(tx.inputs[0].public_key)
            count = state.deploy_counts.get(creator.to_bytes(), 0)
            contracts.registry_deploy(state.registry, creator, count, tx.payload)
            state.deploy_counts[creator.to_bytes()] = count + 1
        elif tx.kind == TxKind.CONTRACT_CALL:
            gas_limit = fee * contracts.GAS_PER_FEE_UNIT
            contracts.registry_call(state.registry[call_target], call_words, gas_limit)
    return VALID


def _block_fees(txs: tuple[Transaction, ...], utxo: UtxoSet) -> int | None:
    """Total fees if every input resolves against the evolving view, else None
    (the sequential walk will report the actual failure)."""
    view = utxo.copy()
    fees = 0
    for tx in txs:
        if tx.kind != TxKind.COINBASE:
            value_in = 0
            for inp in tx.inputs:
                entry = view.get(inp.outpoint)
                if entry is None or not entry.live:
                    return None
                value_in += entry.output.amount
            fees += value_in - tx.output_value
        tx_id = tx.tx_id
        try:
            for inp in tx.inputs:
                view.spend(inp.outpoint, 0)
            for i, out in enumerate(tx.outputs):
                view.add((tx_id, i), out, False, 0)
        except ValueError:
            return None
    return fees


def validate_and_apply(
    block: Block,
    parent_header: BlockHeader,
    parent_state: ChainState,
    params: ChainParams,
    header_at: Callable[[int], BlockHeader | None],
) -> tuple[ChainState | None, Validity]:
    """Full block validation in fixed rule order, returning the post-state.

    header_at(height) resolves ancestors on the block's own branch (needed for
    the retarget window).
    """
    from . import consensus

    header = block.header
    if header.prev_header_hash != header_hash(parent_header):
        return None, _invalid("PrevHash")
    if header.height != parent_header.height + 1:
        return None, _invalid("Height", f"{header.height} after {parent_header.height}")
    if not block.transactions:
        return None, _invalid("DataHash", "no transactions")
    if header.data_hash != transactions_merkle_root(block.transactions):
        return None, _invalid("DataHash")
    data = block.data_bytes()
    if header.size != len(data):
        return None, _invalid("Size", f"declared {header.size}, actual {len(data)}")
    if len(data) > params.max_block_data_bytes:
        return None, _invalid("Oversize", f"{len(data)} > {params.max_block_data_bytes}")

    pow_params = parent_state.pow_params
    if isinstance(params.consensus, consensus.PowParams):
        if header.height % params.consensus.retarget_interval == 0:
            window = _retarget_window(header.height, params.consensus.retarget_interval, header_at)
            if window:
                pow_params = replace(
                    pow_params, target=consensus.pow_retarget(window, pow_params)
                )
    ctx = consensus.ProofContext(
        target=pow_params.target if pow_params is not None else 0,
        stake_entries=consensus.stake_view(
            parent_state.utxo, header.height, parent_state.stake_resets
        ),
    )
    ok, reason = consensus.verify_header_proof(params.consensus, header, ctx)
    if not ok:
        return None, _invalid("Consensus", reason)

    coinbases = [t for t in block.transactions if t.kind == TxKind.COINBASE]
    if len(coinbases) != 1 or block.transactions[0].kind != TxKind.COINBASE:
        return None, _invalid("Coinbase", "exactly one coinbase, first in the block")
    fees = _block_fees(block.transactions, parent_state.utxo)
    if fees is not None and coinbases[0].output_value > params.block_subsidy + fees:
        return None, _invalid(
            "ExcessReward",
            f"{coinbases[0].output_value} > {params.block_subsidy} + {fees}",
        )

    state = parent_state.clone()
    state.pow_params = pow_params
    v = _walk_transactions(block.transactions, state, header.height, params, True)
    if not v:
        return None, v
    _apply_stake_resets(block, state, parent_state, params, header.height)
    return state, VALID


def _retarget_window(
    height: int, interval: int, header_at: Callable[[int], BlockHeader | None]
) -> list[BlockHeader]:
    # one extra header below the interval when available, so the window spans
    # exactly `interval` inter-block gaps
    lo = max(0, height - interval - 1)
    window = [header_at(h) for h in range(lo, height)]
    return [h for h in window if h is not None]


def _apply_stake_resets(
    block: Block, state: ChainState, parent_state: ChainState, params: ChainParams, height: int
) -> None:
    from . import consensus

    if not isinstance(params.consensus, consensus.PosCoinAgeParams):
        return
    winner = consensus.proof_publisher(block.header)
    if winner is None:
        return
    threshold = params.consensus.age_threshold
    view = consensus.stake_view(parent_state.utxo, height, parent_state.stake_resets)
    for entry in view:
        if entry.address == winner and entry.age >= threshold:
            state.stake_resets[entry.outpoint] = height


def validate_block(
    block: Block,
    parent_header: BlockHeader,
    parent_state: ChainState,
    params: ChainParams,
    header_at: Callable[[int], BlockHeader | None] = lambda _h: None,
) -> Validity:
    _, v = validate_and_apply(block, parent_header, parent_state, params, header_at)
    return v


# ---------------------------------------------------------------------------
# Store
# ---------------------------------------------------------------------------


@dataclass
class AppendResult:
    status: str
    validity: Validity = VALID
    orphaned: list[Block] = field(default_factory=list)
    adopted: list[Block] = field(default_factory=list)

    @property
    def reason(self) -> str | None:
        return self.validity.reason


@dataclass(frozen=True)
class VerifyResult:
    ok: bool
    height: int | None = None
    reason: str | None = None


class ChainStore:
    """Block index plus adopted-tip bookkeeping for one node."""

    def __init__(
        self,
        params: ChainParams,
        genesis: Block | None = None,
        mempool: Mempool | None = None,
    ):
        from . import consensus

        self.params = params
        self.mempool = mempool if mempool is not None else Mempool()
        self.policy: Callable[[Block], Validity] | None = None
        genesis = genesis if genesis is not None else make_genesis(params)
        if genesis.header.height != 0 or genesis.header.prev_header_hash != GENESIS_PREV_HASH:
            raise ValueError("genesis must have height 0 and a zero previous hash")
        state = ChainState(UtxoSet())
        if isinstance(params.consensus, consensus.PowParams):
            state.pow_params = params.consensus
        v = _walk_transactions(genesis.transactions, state, 0, params, True)
        if not v:
            raise ValueError(f"invalid genesis: {v.reason} {v.detail}".strip())
        self.genesis_hash = header_hash(genesis.header)
        self.blocks: dict[bytes, Block] = {self.genesis_hash: genesis}
        self.states: dict[bytes, ChainState] = {self.genesis_hash: state}
        self.children: dict[bytes, list[bytes]] = {}
        self.order: list[bytes] = [self.genesis_hash]
        self.tip_hash = self.genesis_hash
        self.checkpoints: dict[int, bytes] = {}
        self._adopted_tx_heights: dict[bytes, int] = {
            t.tx_id: 0 for t in genesis.transactions
        }

    # -- basic queries ------------------------------------------------------

    @property
    def tip(self) -> Block:
        return self.blocks[self.tip_hash]

    @property
    def tip_height(self) -> int:
        return self.tip.header.height

    def tip_state(self) -> ChainState:
        return self.states[self.tip_hash]

    def get_block(self, block_hash: bytes) -> Block | None:
        return self.blocks.get(block_hash)

    def path_to_genesis(self, block_hash: bytes) -> list[bytes]:
        """Hashes from genesis up to and including block_hash."""
        path = []
        h = block_hash
        while True:
            path.append(h)
            block = self.blocks[h]
            if block.header.height == 0:
                break
            h = block.header.prev_header_hash
        path.reverse()
        return path

    def adopted_path(self) -> list[bytes]:
        return self.path_to_genesis(self.tip_hash)

    def ancestor_at(self, block_hash: bytes, height: int) -> bytes | None:
        h = block_hash
        while True:
            block = self.blocks.get(h)
            if block is None:
                return None
            if block.header.height == height:
                return h
            if block.header.height < height or block.header.height == 0:
                return None
            h = block.header.prev_header_hash

    def _branch_header_at(self, parent_hash: bytes) -> Callable[[int], BlockHeader | None]:
        def header_at(height: int) -> BlockHeader | None:
            h = self.ancestor_at(parent_hash, height)
            return self.blocks[h].header if h is not None else None

        return header_at

    # -- append -------------------------------------------------------------

    def append_block(self, block: Block) -> AppendResult:
        h = header_hash(block.header)
        if h in self.blocks:
            return AppendResult(REJECTED, _invalid("Duplicate"))
        parent_hash = block.header.prev_header_hash
        parent = self.blocks.get(parent_hash)
        if parent is None:
            return AppendResult(REJECTED, _invalid("UnknownParent"))
        if self.checkpoints:
            cp_height = max(self.checkpoints)
            if block.header.height <= cp_height:
                return AppendResult(REJECTED, _invalid("Checkpoint"))
            anchored = self.ancestor_at(parent_hash, cp_height)
            if anchored != self.checkpoints[cp_height]:
                return AppendResult(REJECTED, _invalid("Checkpoint"))
        if self.policy is not None:
            v = self.policy(block)
            if not v:
                return AppendResult(REJECTED, v)
        parent_state = self.states.get(parent_hash)
        if parent_state is None:
            return AppendResult(REJECTED, _invalid("UnknownParentState"))
        state, v = validate_and_apply(
            block, parent.header, parent_state, self.params, self._branch_header_at(parent_hash)
        )
        if not v:
            return AppendResult(REJECTED, v)

        self.blocks[h] = block
        self.states[h] = state
        self.children.setdefault(parent_hash, []).append(h)
        self.order.append(h)

        if block.header.height <= self.tip_height:
            return AppendResult(NEW_SIDE_BRANCH)
        if parent_hash == self.tip_hash:
            self.tip_hash = h
            for t in block.transactions:
                self._adopted_tx_heights[t.tx_id] = block.header.height
            self.mempool.remove_confirmed(block.transactions)
            self.mempool.drop_conflicting(state.utxo, not _is_stake_model(self.params))
            return AppendResult(EXTENDED)
        return self._reorganize(h)

    def _reorganize(self, new_tip: bytes) -> AppendResult:
        old_path = self.adopted_path()
        new_path = self.path_to_genesis(new_tip)
        fork_height = 0
        for old, new in zip(old_path, new_path):
            if old != new:
                break
            fork_height += 1
        orphaned = [self.blocks[h] for h in old_path[fork_height:]]
        adopted = [self.blocks[h] for h in new_path[fork_height:]]
        self.tip_hash = new_tip
        self._adopted_tx_heights = {}
        for h in new_path:
            height = self.blocks[h].header.height
            for t in self.blocks[h].transactions:
                self._adopted_tx_heights[t.tx_id] = height
        allow_locked = not _is_stake_model(self.params)
        utxo = self.tip_state().utxo
        confirmed = {t.tx_id for b in adopted for t in b.transactions}
        for b in adopted:
            self.mempool.remove_confirmed(b.transactions)
        orphaned_txs = [t for b in orphaned for t in b.transactions]
        self.mempool.reinsert(orphaned_txs, utxo, confirmed, allow_locked)
        self.mempool.drop_conflicting(utxo, allow_locked)
        return AppendResult(REORGANIZED, orphaned=orphaned, adopted=adopted)

    # -- confirmation and checkpoints ----------------------------------------

    def is_confirmed(self, tx_id: bytes) -> bool:
        height = self._adopted_tx_heights.get(tx_id)
        if height is None:
            return False
        return self.tip_height - height >= self.params.confirmation_depth

    def confirmation_height(self, tx_id: bytes) -> int | None:
        return self._adopted_tx_heights.get(tx_id)

    def set_checkpoint(self, height: int) -> None:
        if height > self.tip_height - self.params.confirmation_depth:
            raise ValueError("checkpoint must sit at least k blocks below the tip")
        anchored = self.ancestor_at(self.tip_hash, height)
        if anchored is None:
            raise ValueError("no adopted block at that height")
        self.checkpoints[height] = anchored

    # -- raw install (file loading) -------------------------------------------

    def _install_raw(self, block: Block) -> None:
        """Index a block without judging it; state is built only when the
        parent's state exists and the block validates, so corrupt entries stay
        visible to verify_chain yet can never be adopted."""
        h = header_hash(block.header)
        if h in self.blocks:
            return
        parent_hash = block.header.prev_header_hash
        self.blocks[h] = block
        self.order.append(h)
        self.children.setdefault(parent_hash, []).append(h)
        parent = self.blocks.get(parent_hash)
        parent_state = self.states.get(parent_hash)
        if parent is not None and parent_state is not None:
            state, v = validate_and_apply(
                block, parent.header, parent_state, self.params,
                self._branch_header_at(parent_hash),
            )
            if v:
                self.states[h] = state
        if h in self.states and block.header.height > self.tip_height:
            self.tip_hash = h

    def _rebuild_confirmation_index(self) -> None:
        self._adopted_tx_heights = {}
        for h in self.adopted_path():
            blk = self.blocks[h]
            for t in blk.transactions:
                self._adopted_tx_heights[t.tx_id] = blk.header.height

    # -- candidate assembly ---------------------------------------------------

    def make_candidate(
        self,
        publisher: Address,
        txs: list[Transaction],
        timestamp: int,
        rule_version: int = 0,
        parent_hash: bytes | None = None,
    ) -> Block:
        """Assemble an unproven block on top of a parent (default: the tip)."""
        parent_hash = parent_hash if parent_hash is not None else self.tip_hash
        parent = self.blocks[parent_hash]
        fees = _block_fees(tuple(txs), self.states[parent_hash].utxo)
        if fees is None:
            raise ValueError("candidate transactions do not resolve")
        height = parent.header.height + 1
        reward = self.params.block_subsidy + fees
        coinbase = make_coinbase([(publisher, reward)] if reward else [], height)
        all_txs = (coinbase,) + tuple(txs)
        data = block_data_bytes(all_txs)
        header = BlockHeader(
            height=height,
            prev_header_hash=header_hash(parent.header),
            data_hash=transactions_merkle_root(all_txs),
            timestamp=timestamp,
            size=len(data),
            nonce=0,
            rule_version=rule_version,
        )
        return Block(header, all_txs)


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------


def verify_blocks(params: ChainParams, blocks: Iterable[Block]) -> VerifyResult:
    """Replay a block sequence from scratch: genesis structure, every link,
    Merkle root, consensus proof, and transaction against rebuilt state."""
    from . import consensus

    index: dict[bytes, Block] = {}
    states: dict[bytes, ChainState] = {}
    for block in blocks:
        header = block.header
        if header.height == 0:
            if header.prev_header_hash != GENESIS_PREV_HASH:
                return VerifyResult(False, 0, "PrevHash")
            if not block.transactions:
                return VerifyResult(False, 0, "DataHash")
            if header.data_hash != transactions_merkle_root(block.transactions):
                return VerifyResult(False, 0, "DataHash")
            if header.size != len(block.data_bytes()):
                return VerifyResult(False, 0, "Size")
            state = ChainState(UtxoSet())
            if isinstance(params.consensus, consensus.PowParams):
                state.pow_params = params.consensus
            v = _walk_transactions(block.transactions, state, 0, params, True)
            if not v:
                return VerifyResult(False, 0, v.reason)
        else:
            parent = index.get(header.prev_header_hash)
            if parent is None:
                return VerifyResult(False, header.height, "PrevHash")

            def header_at(height: int, _start=parent) -> BlockHeader | None:
                b = _start
                while b.header.height > height:
                    b = index.get(b.header.prev_header_hash)
                    if b is None:
                        return None
                return b.header if b.header.height == height else None

            state, v = validate_and_apply(
                block, parent.header, states[header_hash(parent.header)], params, header_at
            )
            if not v:
                return VerifyResult(False, header.height, v.reason)
        h = header_hash(header)
        index[h] = block
        states[h] = state
    return VerifyResult(True)


def verify_chain(store: ChainStore) -> VerifyResult:
    """Re-verify every stored block in insertion order, ignoring cached state."""
    return verify_blocks(store.params, (store.blocks[h] for h in store.order))


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


class ChainFileError(Exception):
    def __init__(self, offset: int, message: str):
        self.offset = offset
        super().__init__(f"byte {offset}: {message}")


@dataclass
class LoadResult:
    store: ChainStore
    truncated_at: int | None = None


def persist(store: ChainStore, path: str) -> None:
    """Write all blocks in insertion order; atomic via temp file + rename."""
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(CHAIN_MAGIC)
        fh.write(struct.pack(">H", CHAIN_FORMAT_VERSION))
        for h in store.order:
            record = store.blocks[h].serialize()
            fh.write(struct.pack(">I", len(record)))
            fh.write(record)
            fh.write(sha256(record)[:4])
    os.replace(tmp, path)


def load(path: str, params: ChainParams, mempool: Mempool | None = None) -> LoadResult:
    """Rebuild a store from a chain file.

    A file ending mid-record loads its intact prefix and reports the
    truncation offset; a checksum or decode failure raises with the offset of
    the bad record.  Semantic problems (bad signatures, broken proofs) are
    verify_chain's job, not load's.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != CHAIN_MAGIC:
        raise ChainFileError(0, "bad magic")
    if len(buf) < 6:
        raise ChainFileError(4, "missing format version")
    (version,) = struct.unpack_from(">H", buf, 4)
    if version != CHAIN_FORMAT_VERSION:
        raise ChainFileError(4, f"unsupported format version {version}")
    offset = 6
    blocks: list[Block] = []
    truncated_at: int | None = None
    while offset < len(buf):
        start = offset
        if offset + 4 > len(buf):
            truncated_at = start
            break
        (length,) = struct.unpack_from(">I", buf, offset)
        offset += 4
        if offset + length + 4 > len(buf):
            truncated_at = start
            break
        record = buf[offset : offset + length]
        offset += length
        checksum = buf[offset : offset + 4]
        offset += 4
        if sha256(record)[:4] != checksum:
            raise ChainFileError(start, "record checksum mismatch")
        try:
            block, consumed = deserialize_block(record)
        except ValueError as exc:
            raise ChainFileError(start, f"undecodable block: {exc}") from None
        if consumed != length:
            raise ChainFileError(start, "trailing bytes in record")
        blocks.append(block)
    if not blocks:
        raise ChainFileError(6, "no blocks in file")
    if blocks[0].header.height != 0:
        raise ChainFileError(6, "first record is not a genesis block")
    try:
        store = ChainStore(params, genesis=blocks[0], mempool=mempool)
    except ValueError as exc:
        raise ChainFileError(6, str(exc)) from None
    for block in blocks[1:]:
        store._install_raw(block)
    store._rebuild_confirmation_index()
    return LoadResult(store, truncated_at)
