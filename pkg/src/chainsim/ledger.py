"""Transactions, UTXO bookkeeping, validation, and the pending pool.

Amounts are integers in a smallest indivisible unit.  A transaction's fee is
the surplus of resolved input value over output value; the block publisher
claims fees through its coinbase.  The UTXO set keeps spent entries around
(with a spent_height marker) so reverting a block is the exact inverse of
applying it.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Iterable, NamedTuple

from .crypto import (
    ADDRESS_SIZE,
    CONTRACT_ADDRESS_VERSION,
    Address,
    KeyPair,
    derive_address,
    sha256,
    sign,
    verify,
)

MAX_SUPPLY = 2**62

Outpoint = tuple[bytes, int]


class TxKind(IntEnum):
    TRANSFER = 0
    COINBASE = 1
    STAKE = 2
    CONTRACT_DEPLOY = 3
    CONTRACT_CALL = 4


class TxBuildError(Exception):
    """Raised by build_transaction on unknown outpoints, key mismatch, or
    insufficient funds."""


@dataclass(frozen=True)
class TxOutput:
    amount: int
    recipient: Address

    def serialize(self) -> bytes:
        return struct.pack(">Q", self.amount) + self.recipient.to_bytes()


@dataclass(frozen=True)
class TxInput:
    source_tx: bytes
    source_index: int
    public_key: bytes
    signature: bytes

    @property
    def outpoint(self) -> Outpoint:
        return (self.source_tx, self.source_index)

    def serialize(self, zero_signature: bool = False) -> bytes:
        sig = b"" if zero_signature else self.signature
        return b"".join(
            (
                self.source_tx,
                struct.pack(">I", self.source_index),
                struct.pack(">I", len(self.public_key)),
                self.public_key,
                struct.pack(">I", len(sig)),
                sig,
            )
        )


@dataclass(frozen=True)
class Transaction:
    kind: TxKind
    inputs: tuple[TxInput, ...]
    outputs: tuple[TxOutput, ...]
    payload: bytes = b""

    def serialize(self, zero_signatures: bool = False) -> bytes:
        parts = [bytes([self.kind]), struct.pack(">I", len(self.inputs))]
        parts += [i.serialize(zero_signatures) for i in self.inputs]
        parts.append(struct.pack(">I", len(self.outputs)))
        parts += [o.serialize() for o in self.outputs]
        parts.append(struct.pack(">I", len(self.payload)))
        parts.append(self.payload)
        return b"".join(parts)

    @property
    def tx_id(self) -> bytes:
        """sha256 of the canonical bytes with all signatures zeroed."""
        return sha256(self.serialize(zero_signatures=True))

    @property
    def output_value(self) -> int:
        return sum(o.amount for o in self.outputs)


def _read(buf: bytes, offset: int, n: int) -> tuple[bytes, int]:
    if offset + n > len(buf):
        raise ValueError(f"transaction truncated at byte {offset}")
    return buf[offset : offset + n], offset + n


def deserialize_transaction(buf: bytes, offset: int = 0) -> tuple[Transaction, int]:
    """Parse one canonical transaction; returns (tx, next offset)."""
    raw, offset = _read(buf, offset, 1)
    try:
        kind = TxKind(raw[0])
    except ValueError:
        raise ValueError(f"unknown transaction kind {raw[0]}") from None
    raw, offset = _read(buf, offset, 4)
    inputs = []
    for _ in range(struct.unpack(">I", raw)[0]):
        source_tx, offset = _read(buf, offset, 32)
        raw, offset = _read(buf, offset, 4)
        index = struct.unpack(">I", raw)[0]
        raw, offset = _read(buf, offset, 4)
        public_key, offset = _read(buf, offset, struct.unpack(">I", raw)[0])
        raw, offset = _read(buf, offset, 4)
        signature, offset = _read(buf, offset, struct.unpack(">I", raw)[0])
        inputs.append(TxInput(source_tx, index, public_key, signature))
    raw, offset = _read(buf, offset, 4)
    outputs = []
    for _ in range(struct.unpack(">I", raw)[0]):
        raw, offset = _read(buf, offset, 8)
        amount = struct.unpack(">Q", raw)[0]
        addr, offset = _read(buf, offset, ADDRESS_SIZE)
        outputs.append(TxOutput(amount, Address.from_bytes(addr)))
    raw, offset = _read(buf, offset, 4)
    payload, offset = _read(buf, offset, struct.unpack(">I", raw)[0])
    return Transaction(kind, tuple(inputs), tuple(outputs), payload), offset


# ---------------------------------------------------------------------------
# UTXO set
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UtxoEntry:
    output: TxOutput
    locked: bool
    created_height: int
    spent_height: int | None = None

    @property
    def live(self) -> bool:
        return self.spent_height is None


class UtxoSet:
    """Map from outpoint to entry; spending marks, never deletes, so the
    history needed to revert a block is always present."""

    def __init__(self, entries: dict[Outpoint, UtxoEntry] | None = None):
        self._entries: dict[Outpoint, UtxoEntry] = dict(entries or {})

    def copy(self) -> "UtxoSet":
        return UtxoSet(self._entries)

    def get(self, outpoint: Outpoint) -> UtxoEntry | None:
        return self._entries.get(outpoint)

    def add(self, outpoint: Outpoint, output: TxOutput, locked: bool, height: int) -> None:
        if outpoint in self._entries:
            raise ValueError("outpoint already present")
        self._entries[outpoint] = UtxoEntry(output, locked, height)

    def spend(self, outpoint: Outpoint, height: int) -> None:
        entry = self._entries[outpoint]
        if not entry.live:
            raise ValueError("outpoint already spent")
        self._entries[outpoint] = replace(entry, spent_height=height)

    def unspend(self, outpoint: Outpoint) -> None:
        self._entries[outpoint] = replace(self._entries[outpoint], spent_height=None)

    def remove(self, outpoint: Outpoint) -> None:
        del self._entries[outpoint]

    def live_entries(self) -> Iterable[tuple[Outpoint, UtxoEntry]]:
        return ((op, e) for op, e in self._entries.items() if e.live)

    def total_live(self) -> int:
        return sum(e.output.amount for _, e in self.live_entries())

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, UtxoSet) and self._entries == other._entries

    def digest(self) -> bytes:
        """Order-independent state digest over live and spent entries."""
        lines = []
        for (txid, idx), e in sorted(self._entries.items()):
            spent = -1 if e.spent_height is None else e.spent_height
            lines.append(
                txid
                + struct.pack(">IQ", idx, e.output.amount)
                + e.output.recipient.to_bytes()
                + struct.pack(">?qq", e.locked, e.created_height, spent)
            )
        return sha256(b"".join(lines))


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Validity:
    ok: bool
    reason: str | None = None
    detail: str = ""

    def __bool__(self) -> bool:
        return self.ok


VALID = Validity(True)


def _invalid(reason: str, detail: str = "") -> Validity:
    return Validity(False, reason, detail)


def _format_check(tx: Transaction) -> Validity:
    for out in tx.outputs:
        if not 0 <= out.amount <= MAX_SUPPLY:
            return _invalid("BadFormat", "output amount out of range")
    if tx.kind == TxKind.COINBASE:
        if tx.inputs:
            return _invalid("BadFormat", "coinbase must have no inputs")
    elif not tx.inputs:
        return _invalid("BadFormat", "non-coinbase needs at least one input")
    if tx.kind == TxKind.STAKE and not tx.outputs:
        return _invalid("BadFormat", "stake needs a locked output")
    if tx.kind == TxKind.CONTRACT_DEPLOY and not tx.payload:
        return _invalid("BadFormat", "deploy needs bytecode payload")
    if tx.kind == TxKind.CONTRACT_CALL:
        if not tx.outputs:
            return _invalid("BadFormat", "call needs a contract-address output")
        if tx.outputs[0].recipient.version != CONTRACT_ADDRESS_VERSION:
            return _invalid("BadFormat", "call output 0 must target a contract address")
    return VALID


def validate_transaction(tx: Transaction, utxo: UtxoSet, allow_locked: bool = False) -> Validity:
    """Check one transaction against a UTXO snapshot.

    Rule order is fixed: format, input existence/lock/spent state, signature,
    owner match, value conservation, duplicate outpoints.  allow_locked is the
    unstake path used when the active consensus model holds no stake.
    """
    v = _format_check(tx)
    if not v:
        return v
    for inp in tx.inputs:
        entry = utxo.get(inp.outpoint)
        if entry is None:
            return _invalid("UnknownInput", f"{inp.source_tx.hex()[:16]}:{inp.source_index}")
        if entry.locked and not allow_locked:
            return _invalid("LockedInput", f"{inp.source_tx.hex()[:16]}:{inp.source_index}")
        if not entry.live:
            return _invalid("SpentInput", f"{inp.source_tx.hex()[:16]}:{inp.source_index}")
    tx_id = tx.tx_id
    for inp in tx.inputs:
        if not verify(inp.public_key, tx_id, inp.signature):
            return _invalid("BadSignature")
    for inp in tx.inputs:
        entry = utxo.get(inp.outpoint)
        if derive_address(inp.public_key) != entry.output.recipient:
            return _invalid("WrongOwner")
    if tx.kind != TxKind.COINBASE:
        value_in = sum(utxo.get(i.outpoint).output.amount for i in tx.inputs)
        if value_in < tx.output_value:
            return _invalid("ValueCreated", f"in {value_in} < out {tx.output_value}")
    seen: set[Outpoint] = set()
    for inp in tx.inputs:
        if inp.outpoint in seen:
            return _invalid("DuplicateOutpoint")
        seen.add(inp.outpoint)
    return VALID


def transaction_fee(tx: Transaction, utxo: UtxoSet) -> int:
    """Resolved input value minus output value; coinbase fee is zero."""
    if tx.kind == TxKind.COINBASE:
        return 0
    value_in = 0
    for inp in tx.inputs:
        entry = utxo.get(inp.outpoint)
        if entry is None:
            raise TxBuildError(f"unknown outpoint {inp.source_tx.hex()[:16]}:{inp.source_index}")
        value_in += entry.output.amount
    return value_in - tx.output_value


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------


def build_transaction(
    spend: list[Outpoint],
    pay: list[tuple[Address, int]],
    fee: int,
    keys: list[KeyPair],
    utxo: UtxoSet,
    kind: TxKind = TxKind.TRANSFER,
    payload: bytes = b"",
) -> Transaction:
    """Assemble and sign a transaction spending the given outpoints.

    Any surplus beyond payments and fee goes back to the first spender's
    address as an appended change output.
    """
    if fee < 0:
        raise TxBuildError("negative fee")
    by_address = {derive_address(k.public_key): k for k in keys}
    resolved: list[tuple[Outpoint, KeyPair, int]] = []
    for outpoint in spend:
        entry = utxo.get(outpoint)
        if entry is None or not entry.live:
            raise TxBuildError(f"unknown outpoint {outpoint[0].hex()[:16]}:{outpoint[1]}")
        key = by_address.get(entry.output.recipient)
        if key is None:
            raise TxBuildError(f"key mismatch for {entry.output.recipient.hex()}")
        resolved.append((outpoint, key, entry.output.amount))
    total_in = sum(amount for _, _, amount in resolved)
    total_out = sum(amount for _, amount in pay)
    if total_in < total_out + fee:
        raise TxBuildError(f"insufficient funds: {total_in} < {total_out} + {fee}")
    outputs = [TxOutput(amount, addr) for addr, amount in pay]
    change = total_in - total_out - fee
    if change > 0:
        first_spender = utxo.get(spend[0]).output.recipient
        outputs.append(TxOutput(change, first_spender))
    unsigned = Transaction(
        kind,
        tuple(TxInput(op[0], op[1], key.public_key, b"") for op, key, _ in resolved),
        tuple(outputs),
        payload,
    )
    tx_id = unsigned.tx_id
    signed_inputs = tuple(
        TxInput(op[0], op[1], key.public_key, sign(key, tx_id)) for op, key, _ in resolved
    )
    return Transaction(kind, signed_inputs, tuple(outputs), payload)


def make_coinbase(recipients: list[tuple[Address, int]], height: int) -> Transaction:
    """Reward transaction: no inputs; payload carries the height so coinbase
    ids differ across blocks with identical outputs."""
    outputs = tuple(TxOutput(amount, addr) for addr, amount in recipients)
    return Transaction(TxKind.COINBASE, (), outputs, struct.pack(">Q", height))


# ---------------------------------------------------------------------------
# Block-level application
# ---------------------------------------------------------------------------


class BlockApplyError(Exception):
    def __init__(self, index: int, validity: Validity):
        self.index = index
        self.validity = validity
        super().__init__(f"transaction {index}: {validity.reason} {validity.detail}".strip())


def apply_transactions(
    txs: Iterable[Transaction],
    utxo: UtxoSet,
    height: int,
    allow_locked: bool = False,
) -> UtxoSet:
    """Apply a block's transactions in order; atomic, the input set is
    untouched on failure.  Later transactions may spend earlier ones' outputs."""
    new = utxo.copy()
    for index, tx in enumerate(txs):
        v = validate_transaction(tx, new, allow_locked)
        if not v:
            raise BlockApplyError(index, v)
        tx_id = tx.tx_id
        for inp in tx.inputs:
            new.spend(inp.outpoint, height)
        for i, out in enumerate(tx.outputs):
            locked = tx.kind == TxKind.STAKE and i == 0
            new.add((tx_id, i), out, locked, height)
    return new


def revert_transactions(txs: Iterable[Transaction], utxo: UtxoSet) -> UtxoSet:
    """Exact inverse of apply_transactions for the most recently applied block."""
    new = utxo.copy()
    for tx in reversed(list(txs)):
        tx_id = tx.tx_id
        for i in range(len(tx.outputs)):
            new.remove((tx_id, i))
        for inp in tx.inputs:
            new.unspend(inp.outpoint)
    return new


class Balance(NamedTuple):
    unlocked: int
    locked_stake: int


def balance(address: Address, utxo: UtxoSet) -> Balance:
    unlocked = locked = 0
    for _, entry in utxo.live_entries():
        if entry.output.recipient == address:
            if entry.locked:
                locked += entry.output.amount
            else:
                unlocked += entry.output.amount
    return Balance(unlocked, locked)


# ---------------------------------------------------------------------------
# Mempool
# ---------------------------------------------------------------------------


@dataclass
class _PoolEntry:
    seq: int
    tx: Transaction


class Mempool:
    """Validated pending transactions, iterated in insertion order with tx_id
    as the tiebreak so block assembly is deterministic."""

    def __init__(self) -> None:
        self._entries: dict[bytes, _PoolEntry] = {}
        self._claimed: set[Outpoint] = set()
        self._seq = 0

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, tx_id: bytes) -> bool:
        return tx_id in self._entries

    def add(self, tx: Transaction, utxo: UtxoSet, allow_locked: bool = False) -> Validity:
        if tx.kind == TxKind.COINBASE:
            return _invalid("Coinbase", "coinbase never enters the pool")
        tx_id = tx.tx_id
        if tx_id in self._entries:
            return _invalid("Duplicate")
        v = validate_transaction(tx, utxo, allow_locked)
        if not v:
            return v
        for inp in tx.inputs:
            if inp.outpoint in self._claimed:
                return _invalid("Conflict", "outpoint claimed by a pooled transaction")
        self._entries[tx_id] = _PoolEntry(self._seq, tx)
        self._seq += 1
        self._claimed.update(inp.outpoint for inp in tx.inputs)
        return VALID

    def _drop(self, tx_id: bytes) -> None:
        entry = self._entries.pop(tx_id, None)
        if entry is not None:
            self._claimed.difference_update(i.outpoint for i in entry.tx.inputs)

    def remove_confirmed(self, txs: Iterable[Transaction]) -> None:
        for tx in txs:
            self._drop(tx.tx_id)

    def drop_conflicting(self, utxo: UtxoSet, allow_locked: bool = False) -> None:
        """Evict entries no longer valid against a new chain state."""
        for tx_id in [t for t, e in self._entries.items()
                      if not validate_transaction(e.tx, utxo, allow_locked)]:
            self._drop(tx_id)

    def reinsert(
        self,
        orphaned: Iterable[Transaction],
        utxo: UtxoSet,
        confirmed_ids: set[bytes],
        allow_locked: bool = False,
    ) -> list[bytes]:
        """Return orphaned transactions to the pool after a reorganization.

        Coinbases are dropped, as is anything already confirmed on the adopted
        branch or no longer valid against its state.  Candidates enter in
        tx_id order (the batch shares one arrival)."""
        returned = []
        candidates = [t for t in orphaned
                      if t.kind != TxKind.COINBASE and t.tx_id not in confirmed_ids]
        for tx in sorted(candidates, key=lambda t: t.tx_id):
            if self.add(tx, utxo, allow_locked):
                returned.append(tx.tx_id)
        return returned

    def ordered(self) -> list[Transaction]:
        entries = sorted(self._entries.items(), key=lambda kv: (kv[1].seq, kv[0]))
        return [e.tx for _, e in entries]

    def take(self, max_bytes: int, utxo: UtxoSet, allow_locked: bool = False) -> list[Transaction]:
        """Select transactions for a block, respecting a serialized-size budget
        and sequential validity (pool entries may chain off each other)."""
        view = utxo.copy()
        picked: list[Transaction] = []
        budget = max_bytes
        for tx in self.ordered():
            size = len(tx.serialize())
            if size > budget:
                continue
            if not validate_transaction(tx, view, allow_locked):
                continue
            tx_id = tx.tx_id
            for inp in tx.inputs:
                view.spend(inp.outpoint, 0)
            for i, out in enumerate(tx.outputs):
                view.add((tx_id, i), out, tx.kind == TxKind.STAKE and i == 0, 0)
            picked.append(tx)
            budget -= size
        return picked
