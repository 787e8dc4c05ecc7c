"""Seeded discrete-event simulator of a blockchain network.

One global integer tick clock drives a single event loop; simultaneous events
are ordered by (tick, kind rank, node address, sequence number), so a config
replays to a byte-identical event log.  Proof-of-work production is an
exponential race (next find drawn per publisher with rate proportional to
hash share and the current target) rather than literal hashing; hash attempts
are accrued analytically as rate x elapsed online time.  All other models
produce on a fixed slot cadence through the consensus module's selection.
"""

from __future__ import annotations

import heapq
import struct
from dataclasses import dataclass, field, replace

from . import consensus as cons
from .chain import (
    Block,
    BlockHeader,
    ChainParams,
    ChainStore,
    NEW_SIDE_BRANCH,
    REJECTED,
    REORGANIZED,
    header_hash,
    make_genesis,
)
from .crypto import HashStream, KeyPair, derive_address, keypair_generate, sha256
from .ledger import (
    Mempool,
    Transaction,
    TxBuildError,
    TxKind,
    UtxoSet,
    Validity,
    build_transaction,
    make_coinbase,
)
from .merkle import merkle_proof, verify_proof

FULL = "full"
PUBLISHING = "publishing"
LIGHTWEIGHT = "lightweight"

SOFT = "soft"
HARD = "hard"

MAJORITY_REORG = "majority_reorg"
WITHHOLDING = "withholding"
CENSORSHIP = "censorship"

# event ranks: transaction gossip, then block gossip, then production, then
# workload generation, then sampling
_RANK_TX = 0
_RANK_BLOCK = 1
_RANK_PRODUCE = 2
_RANK_WORKLOAD = 3
_RANK_SAMPLE = 4


@dataclass(frozen=True)
class NodeSpec:
    name: str
    role: str = FULL
    hash_share: float = 0.0
    stake: int = 0
    balance: int = 0
    rule_version: int = 0
    online: tuple[tuple[int, int], ...] = ()  # up intervals; empty means always up


@dataclass(frozen=True)
class PartitionSpec:
    start: int
    end: int
    groups: tuple[tuple[str, ...], ...]


@dataclass(frozen=True)
class TopologySpec:
    latency: int = 1
    jitter: int = 0
    partitions: tuple[PartitionSpec, ...] = ()


@dataclass(frozen=True)
class ForkSchedule:
    kind: str  # soft | hard
    activation_height: int
    adopters: tuple[str, ...]
    new_rule_version: int = 1


@dataclass(frozen=True)
class AdversarySpec:
    kind: str
    node: str
    secret_depth: int = 3
    delay_ticks: int = 0
    victim: str = ""


@dataclass(frozen=True)
class WorkloadSpec:
    tx_interval: int = 0  # 0 disables the payment generator
    tx_amount: int = 5
    tx_fee: int = 1
    submit_via: str = ""  # node name; empty picks a random funded node


@dataclass(frozen=True)
class SimConfig:
    seed: int
    duration: int
    nodes: tuple[NodeSpec, ...]
    chain: ChainParams
    topology: TopologySpec = TopologySpec()
    fork: ForkSchedule | None = None
    adversary: AdversarySpec | None = None
    workload: WorkloadSpec = WorkloadSpec()
    block_interval: int = 10  # slot cadence for non-PoW models
    production_stop: int | None = None  # quiesce the network before the run ends
    agreement_interval: int = 10


@dataclass
class Metrics:
    seed: int
    orphan_count: int = 0
    reorg_events: list[tuple[int, str, int]] = field(default_factory=list)
    confirmation_latencies: dict[bytes, int] = field(default_factory=dict)
    hash_attempts: dict[str, float] = field(default_factory=dict)
    agreement_series: list[tuple[int, float]] = field(default_factory=list)
    fork_split: bool = False
    tip_history: dict[str, list[tuple[int, str]]] = field(default_factory=dict)

    @property
    def max_reorg_depth(self) -> int:
        return max((d for _, _, d in self.reorg_events), default=0)

    @property
    def mean_confirmation_latency(self) -> float:
        if not self.confirmation_latencies:
            return 0.0
        return sum(self.confirmation_latencies.values()) / len(self.confirmation_latencies)


@dataclass
class SimResult:
    config: SimConfig
    metrics: Metrics
    event_log: list[str]
    nodes: dict[str, "SimNode"]

    def event_log_digest(self) -> bytes:
        return sha256("\n".join(self.event_log).encode())


def node_keypair(seed: int, name: str) -> KeyPair:
    return keypair_generate(sha256(b"node-key" + struct.pack(">Q", seed) + name.encode()))


def is_online(spec: NodeSpec, tick: int) -> bool:
    if not spec.online:
        return True
    return any(start <= tick < end for start, end in spec.online)


def online_overlap(spec: NodeSpec, a: int, b: int) -> int:
    """Ticks in [a, b) during which the node is up."""
    if b <= a:
        return 0
    if not spec.online:
        return b - a
    return sum(max(0, min(b, end) - max(a, start)) for start, end in spec.online)


class SimNode:
    """A network participant: key material, chain store (or header chain for
    lightweight nodes), mempool, and gossip bookkeeping."""

    def __init__(self, spec: NodeSpec, keypair: KeyPair, params: ChainParams, genesis: Block):
        self.spec = spec
        self.name = spec.name
        self.keypair = keypair
        self.address = derive_address(keypair.public_key)
        self.role = spec.role
        self.params = params
        if spec.role == LIGHTWEIGHT:
            self.store = None
            self.headers: dict[bytes, BlockHeader] = {}
            self.header_tip = header_hash(genesis.header)
            self.headers[self.header_tip] = genesis.header
            self._header_buffer: dict[bytes, list[BlockHeader]] = {}
        else:
            self.store = ChainStore(params, genesis, Mempool())
            self.headers = None
        self.relayed: set[bytes] = set()
        self.tx_relayed: set[bytes] = set()
        self.orphan_buffer: dict[bytes, list[tuple[Block, str]]] = {}
        self.pulled: set[bytes] = set()
        self.pending_txs: list[tuple[bytes, int]] = []  # (tx_id, submit tick)
        self.queued_txs: list[Transaction] = []  # lightweight, no full peer yet
        # producers
        self.mine_gen = 0
        self.mining_parent: bytes | None = None
        self.draw_index = 0
        self.hash_rate = 0.0
        self.attempts = 0.0
        self._last_accrual = 0
        # adversary state
        self.attack_active = False
        self.secret_tip: bytes | None = None
        self.secret_blocks: list[Block] = []

    # -- queries -------------------------------------------------------------

    def online(self, tick: int) -> bool:
        return is_online(self.spec, tick)

    def tip_hash(self) -> bytes:
        return self.store.tip_hash if self.store else self.header_tip

    def tip_height(self) -> int:
        if self.store:
            return self.store.tip_height
        return self.headers[self.header_tip].height

    # -- lightweight header chain ---------------------------------------------

    def accept_header(self, header: BlockHeader) -> None:
        h = header_hash(header)
        if h in self.headers:
            return
        if header.prev_header_hash not in self.headers:
            self._header_buffer.setdefault(header.prev_header_hash, []).append(header)
            return
        self.headers[h] = header
        if header.height > self.headers[self.header_tip].height:
            self.header_tip = h
        for child in self._header_buffer.pop(h, []):
            self.accept_header(child)

    def lightweight_confirmed(self, tx_id: bytes, full_peer: "SimNode") -> bool:
        """Header-depth confirmation backed by a Merkle proof from a full node."""
        height = full_peer.store.confirmation_height(tx_id)
        if height is None:
            return False
        block_hash = full_peer.store.ancestor_at(full_peer.store.tip_hash, height)
        block = full_peer.store.get_block(block_hash)
        header = self.headers.get(block_hash)
        if header is None:
            return False
        leaves = [t.tx_id for t in block.transactions]
        try:
            index = leaves.index(tx_id)
        except ValueError:
            return False
        proof = merkle_proof(leaves, index)
        if not verify_proof(header.data_hash, tx_id, index, proof):
            return False
        return self.headers[self.header_tip].height - height >= self.params.confirmation_depth


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


class Simulation:
    def __init__(self, config: SimConfig):
        self.config = config
        self.params = config.chain
        self.model = config.chain.consensus
        self.seed = config.seed
        self.now = 0
        self._queue: list = []
        self._seq = 0
        self.log: list[str] = []
        self.metrics = Metrics(seed=config.seed)
        self.produced: dict[bytes, str] = {}  # block hash -> producer name

        keys = {spec.name: node_keypair(config.seed, spec.name) for spec in config.nodes}
        genesis = build_genesis(config, keys)
        self.genesis = genesis
        self.nodes: dict[str, SimNode] = {}
        for spec in config.nodes:
            node = SimNode(spec, keys[spec.name], self.params, genesis)
            self.nodes[spec.name] = node
            self.metrics.tip_history[spec.name] = [(0, node.tip_hash().hex())]
        self.order = [spec.name for spec in config.nodes]
        self.publishers = [n for n in self.order if self.nodes[n].role == PUBLISHING]
        self.full_nodes = [n for n in self.order if self.nodes[n].role != LIGHTWEIGHT]

        self.adversary = config.adversary
        self.adversary_node = self.nodes[config.adversary.node] if config.adversary else None

        self._gossip_stream = HashStream(config.seed, "gossip")
        self._workload_stream = HashStream(config.seed, "workload")
        self._mine_streams = {
            name: HashStream(config.seed, f"mine:{name}") for name in self.publishers
        }

        if isinstance(self.model, cons.PowParams):
            p0 = self.model.target / 2.0**256
            # calibrate so the whole network finds one block per target_spacing
            total_rate = 1.0 / (p0 * self.model.target_spacing)
            for name in self.publishers:
                self.nodes[name].hash_rate = self.nodes[name].spec.hash_share * total_rate

        self._apply_fork_policies()

    # -- event plumbing -------------------------------------------------------

    def _push(self, tick: int, rank: int, addr: bytes, kind: str, payload: tuple) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (tick, rank, addr, self._seq, kind, payload))

    def _emit(self, line: str) -> None:
        self.log.append(line)

    def production_allowed(self, tick: int) -> bool:
        stop = self.config.production_stop
        return stop is None or tick < stop

    # -- topology -------------------------------------------------------------

    def _group_of(self, name: str, tick: int) -> int:
        for pi, part in enumerate(self.config.topology.partitions):
            if part.start <= tick < part.end:
                for gi, group in enumerate(part.groups):
                    if name in group:
                        return pi * 100 + gi
                return -1  # unlisted nodes are isolated during the partition
        return 0

    def reachable(self, a: str, b: str, tick: int) -> bool:
        return self._group_of(a, tick) == self._group_of(b, tick)

    def _latency(self) -> int:
        lat = self.config.topology.latency
        if self.config.topology.jitter:
            lat += self._gossip_stream.randrange(self.config.topology.jitter + 1)
        return max(1, lat)

    def peers_of(self, name: str, tick: int) -> list[str]:
        return [
            other
            for other in self.order
            if other != name and self.reachable(name, other, tick)
        ]

    # -- fork schedules ---------------------------------------------------------

    def _apply_fork_policies(self) -> None:
        fork = self.config.fork
        if fork is None:
            return
        for name in self.order:
            node = self.nodes[name]
            if node.store is None:
                continue
            adopter = name in fork.adopters
            node.store.policy = self._fork_policy(fork, adopter)

    def _fork_policy(self, fork: ForkSchedule, adopter: bool):
        base_limit = self.params.max_block_data_bytes

        def policy(block: Block) -> Validity:
            height = block.header.height
            version = block.header.rule_version
            if fork.kind == SOFT:
                if adopter and height >= fork.activation_height:
                    if len(block.data_bytes()) > base_limit // 2:
                        return Validity(False, "Oversize", "tightened rule")
                return Validity(True)
            # hard fork: adopters require the new version after activation,
            # everyone else rejects versions they do not know
            if adopter:
                if height >= fork.activation_height and version != fork.new_rule_version:
                    return Validity(False, "RuleVersion", "old version after activation")
                if height < fork.activation_height and version != 0:
                    return Validity(False, "RuleVersion", "new version before activation")
            elif version != 0:
                return Validity(False, "RuleVersion", f"unknown version {version}")
            return Validity(True)

        return policy

    def _rule_version_for(self, node: SimNode, height: int) -> int:
        fork = self.config.fork
        if (
            fork is not None
            and fork.kind == HARD
            and node.name in fork.adopters
            and height >= fork.activation_height
        ):
            return fork.new_rule_version
        return 0

    def _size_budget(self, node: SimNode, height: int) -> int:
        limit = self.params.max_block_data_bytes
        fork = self.config.fork
        if (
            fork is not None
            and fork.kind == SOFT
            and node.name in fork.adopters
            and height >= fork.activation_height
        ):
            limit //= 2
        return limit

    # -- run --------------------------------------------------------------------

    def run(self) -> SimResult:
        self._schedule_initial()
        while self._queue:
            tick, rank, addr, seq, kind, payload = heapq.heappop(self._queue)
            if tick > self.config.duration:
                break
            self.now = tick
            handler = getattr(self, f"_on_{kind}")
            handler(*payload)
        self._finalize()
        return SimResult(self.config, self.metrics, self.log, self.nodes)

    def _schedule_initial(self) -> None:
        if isinstance(self.model, cons.PowParams):
            for name in self.publishers:
                self._schedule_find(self.nodes[name], 0)
        else:
            self._push(self.config.block_interval, _RANK_PRODUCE, b"", "slot", ())
        if self.config.workload.tx_interval:
            self._push(self.config.workload.tx_interval, _RANK_WORKLOAD, b"", "workload", ())
        self._push(0, _RANK_SAMPLE, b"", "sample", ())
        # catch-up syncs: nodes returning from downtime and partition heals
        for spec in self.config.nodes:
            for start, _end in spec.online:
                if 0 < start <= self.config.duration:
                    addr = self.nodes[spec.name].address.to_bytes()
                    self._push(start, _RANK_BLOCK, addr, "rejoin", (spec.name,))
        for part in self.config.topology.partitions:
            if part.end <= self.config.duration:
                self._push(part.end, _RANK_BLOCK, b"", "heal", ())

    def _on_rejoin(self, name: str) -> None:
        """A node back from downtime asks its peers for their adopted chains."""
        node = self.nodes[name]
        if not node.online(self.now):
            return
        for peer_name in self.peers_of(name, self.now):
            peer = self.nodes[peer_name]
            if peer.role == LIGHTWEIGHT or not peer.online(self.now):
                continue
            delay = self._latency()
            if node.role == LIGHTWEIGHT:
                for bh in peer.store.adopted_path():
                    self._push(
                        self.now + delay,
                        _RANK_BLOCK,
                        node.address.to_bytes(),
                        "deliver_header",
                        (name, peer.store.blocks[bh].header),
                    )
            else:
                self._push(
                    self.now + delay,
                    _RANK_BLOCK,
                    node.address.to_bytes(),
                    "deliver_block",
                    (name, peer.store.tip, peer_name),
                )

    def _on_heal(self) -> None:
        for name in self.order:
            self._on_rejoin(name)

    # -- PoW race ---------------------------------------------------------------

    def _mining_parent(self, node: SimNode) -> bytes:
        if node.attack_active:
            return node.secret_tip
        return node.store.tip_hash

    def _accrue_attempts(self, node: SimNode) -> None:
        node.attempts += node.hash_rate * online_overlap(node.spec, node._last_accrual, self.now)
        node._last_accrual = self.now

    def _schedule_find(self, node: SimNode, tick: int) -> None:
        if node.hash_rate <= 0:
            return
        node.mine_gen += 1
        parent = self._mining_parent(node)
        node.mining_parent = parent
        state = node.store.states[parent]
        target = state.pow_params.target if state.pow_params else self.model.target
        rate = node.hash_rate * (target / 2.0**256)
        if rate <= 0:
            return
        wait = max(1, round(self._mine_streams[node.name].expovariate(1.0 / rate)))
        self._push(tick + wait, _RANK_PRODUCE, node.address.to_bytes(), "find", (node.name, node.mine_gen))

    def _on_find(self, name: str, gen: int) -> None:
        node = self.nodes[name]
        self._accrue_attempts(node)
        if gen != node.mine_gen:
            return
        if not self.production_allowed(self.now) or not node.online(self.now):
            self._schedule_find(node, self.now)
            return
        parent = node.mining_parent
        block = self._produce_block(node, parent)
        if block is not None:
            self._handle_own_block(node, block)
        self._schedule_find(node, self.now)

    # -- slotted production --------------------------------------------------------

    def _on_slot(self) -> None:
        interval = self.config.block_interval
        if self.production_allowed(self.now):
            if isinstance(self.model, cons.PoetParams):
                self._poet_round()
            else:
                for name in self.publishers:
                    node = self.nodes[name]
                    if not node.online(self.now):
                        continue
                    if self._selected_for_slot(node):
                        block = self._produce_block(node, node.store.tip_hash)
                        if block is not None:
                            self._handle_own_block(node, block)
        self._push(self.now + interval, _RANK_PRODUCE, b"", "slot", ())

    def _selected_for_slot(self, node: SimNode) -> bool:
        tip = node.store.tip_hash
        height = node.store.tip_height + 1
        if isinstance(self.model, cons.RoundRobinParams):
            live = {
                self.nodes[n].address
                for n in self.publishers
                if self.nodes[n].online(self.now) and self.reachable(node.name, n, self.now)
            }
            return cons.round_robin_publisher(self.model, height, live) == node.address
        state = node.store.states[tip]
        stakes = cons.stake_view(state.utxo, height, state.stake_resets)
        expected = cons.expected_publisher(self.model, tip, height, stakes)
        return expected == node.address

    def _poet_round(self) -> None:
        by_group: dict[int, list[SimNode]] = {}
        for name in self.publishers:
            node = self.nodes[name]
            if not node.online(self.now):
                continue
            by_group.setdefault(self._group_of(name, self.now), []).append(node)
        for group in sorted(by_group):
            members = by_group[group]
            certs = []
            for node in members:
                cert = cons.poet_draw(
                    node.address, node.draw_index, self.model.seed, self.model.mean_wait
                )
                node.draw_index += 1
                certs.append((node, cert))
            winner_addr = cons.poet_winner([c for _, c in certs])
            for node, cert in certs:
                if node.address == winner_addr:
                    wait = max(1, round(cert.draw))
                    self._push(
                        self.now + wait,
                        _RANK_PRODUCE,
                        node.address.to_bytes(),
                        "poet_fire",
                        (node.name, cert.draw_index, node.store.tip_hash),
                    )
                    break

    def _on_poet_fire(self, name: str, draw_index: int, tip: bytes) -> None:
        node = self.nodes[name]
        if node.store.tip_hash != tip:
            return  # a block arrived while waiting; stop idling
        if not self.production_allowed(self.now) or not node.online(self.now):
            return
        cert = cons.poet_draw(node.address, draw_index, self.model.seed, self.model.mean_wait)
        block = self._produce_block(node, tip, poet_cert=cert)
        if block is not None:
            self._handle_own_block(node, block)

    # -- block production --------------------------------------------------------

    def _mempool_selection(self, node: SimNode, parent: bytes, budget: int) -> list[Transaction]:
        state = node.store.states[parent]
        allow_locked = not isinstance(self.model, (cons.PosChainParams, cons.PosCoinAgeParams))
        txs = node.store.mempool.take(budget, state.utxo, allow_locked)
        if (
            self.adversary
            and self.adversary.kind == CENSORSHIP
            and node is self.adversary_node
            and self.adversary.victim
        ):
            victim = self.nodes[self.adversary.victim].address
            txs = [
                t
                for t in txs
                if all(derive_address(i.public_key) != victim for i in t.inputs)
            ]
        return txs

    def _produce_block(
        self, node: SimNode, parent: bytes, poet_cert: cons.PoetCertificate | None = None
    ) -> Block | None:
        height = node.store.blocks[parent].header.height + 1
        budget = self._size_budget(node, height) - 160  # leave room for the coinbase
        txs = self._mempool_selection(node, parent, budget)
        candidate = node.store.make_candidate(
            node.address,
            txs,
            timestamp=self.now,
            rule_version=self._rule_version_for(node, height),
            parent_hash=parent,
        )
        state = node.store.states[parent]
        target = state.pow_params.target if state.pow_params else None
        block = cons.attach_proof(
            candidate, self.model, keypair=node.keypair, target=target, poet_cert=poet_cert
        )
        return block

    def _handle_own_block(self, node: SimNode, block: Block) -> None:
        h = header_hash(block.header)
        self.produced[h] = node.name
        result = node.store.append_block(block)
        if result.status == REJECTED:
            self._emit(
                f"t={self.now} stale node={node.name} b={h.hex()[:12]} r={result.reason}"
            )
            return
        self._emit(
            f"t={self.now} produce node={node.name} h={block.header.height}"
            f" b={h.hex()[:12]} txs={len(block.transactions) - 1}"
        )
        if node.attack_active:
            node.secret_tip = h
            node.secret_blocks.append(block)
            self._after_accept(node, result, h)
            self._maybe_release(node)
        elif self.adversary and self.adversary.kind == WITHHOLDING and node is self.adversary_node:
            self._after_accept(node, result, h)
            self._gossip_block(node, block, extra_delay=self.adversary.delay_ticks)
        else:
            self._after_accept(node, result, h)
            self._gossip_block(node, block)

    # -- adversary: majority reorg -------------------------------------------------

    def _honest_tip_height(self) -> int:
        best = 0
        for name in self.full_nodes:
            node = self.nodes[name]
            if node is self.adversary_node:
                continue
            best = max(best, node.store.tip_height)
        return best

    def _maybe_start_attack(self, node: SimNode) -> None:
        depth = self.adversary.secret_depth
        tip = node.store.tip_hash
        tip_height = node.store.tip_height
        if tip_height < depth:
            return
        fork_hash = node.store.ancestor_at(tip, tip_height - depth)
        if fork_hash is None:
            return
        node.attack_active = True
        node.secret_tip = fork_hash
        node.secret_blocks = []
        self._schedule_find(node, self.now)
        self._emit(
            f"t={self.now} attack_start node={node.name} fork_h={tip_height - depth}"
            f" b={fork_hash.hex()[:12]}"
        )

    def _maybe_release(self, node: SimNode) -> None:
        secret_height = node.store.blocks[node.secret_tip].header.height
        if secret_height <= self._honest_tip_height():
            return
        self._emit(
            f"t={self.now} attack_release node={node.name}"
            f" blocks={len(node.secret_blocks)} h={secret_height}"
        )
        released = node.secret_blocks
        node.attack_active = False
        node.secret_tip = None
        node.secret_blocks = []
        for block in released:
            self._gossip_block(node, block)
        self._maybe_start_attack(node)

    # -- gossip ---------------------------------------------------------------------

    def _gossip_block(self, node: SimNode, block: Block, extra_delay: int = 0) -> None:
        h = header_hash(block.header)
        if h in node.relayed:
            return
        node.relayed.add(h)
        for peer_name in self.peers_of(node.name, self.now):
            peer = self.nodes[peer_name]
            delay = self._latency() + extra_delay
            if peer.role == LIGHTWEIGHT:
                if node.role != LIGHTWEIGHT:
                    self._push(
                        self.now + delay,
                        _RANK_BLOCK,
                        peer.address.to_bytes(),
                        "deliver_header",
                        (peer_name, block.header),
                    )
            else:
                self._push(
                    self.now + delay,
                    _RANK_BLOCK,
                    peer.address.to_bytes(),
                    "deliver_block",
                    (peer_name, block, node.name),
                )

    def _on_deliver_header(self, name: str, header: BlockHeader) -> None:
        node = self.nodes[name]
        if node.online(self.now):
            node.accept_header(header)

    def _on_deliver_block(self, name: str, block: Block, sender: str) -> None:
        node = self.nodes[name]
        if not node.online(self.now):
            return
        self._ingest_block(node, block, sender)

    def _ingest_block(self, node: SimNode, block: Block, sender: str) -> None:
        h = header_hash(block.header)
        result = node.store.append_block(block)
        if result.status == REJECTED:
            if result.reason == "Duplicate":
                return
            if result.reason == "UnknownParent":
                node.orphan_buffer.setdefault(block.header.prev_header_hash, []).append(
                    (block, sender)
                )
                self._request_missing(node, block.header.prev_header_hash, sender)
                return
            self._emit(
                f"t={self.now} reject node={node.name} b={h.hex()[:12]} r={result.reason}"
            )
            return
        self._emit(
            f"t={self.now} deliver node={node.name} b={h.hex()[:12]}"
            f" from={sender} r={result.status}"
        )
        self._after_accept(node, result, h)
        self._gossip_block(node, block)
        for child, child_sender in node.orphan_buffer.pop(h, []):
            self._ingest_block(node, child, child_sender)

    def _request_missing(self, node: SimNode, missing: bytes, sender: str) -> None:
        """Full-chain pull: the peer answers with every block on its adopted
        path that the requester has not seen."""
        if missing in node.pulled:
            return
        node.pulled.add(missing)
        peer = self.nodes.get(sender)
        if peer is None or peer.store is None:
            return
        delay = self._latency()
        for bh in peer.store.adopted_path():
            if node.store.get_block(bh) is None:
                self._push(
                    self.now + delay,
                    _RANK_BLOCK,
                    node.address.to_bytes(),
                    "deliver_block",
                    (node.name, peer.store.blocks[bh], sender),
                )

    def _after_accept(self, node: SimNode, result, block_hash: bytes) -> None:
        if result.status == REORGANIZED:
            depth = len(result.orphaned)
            self.metrics.reorg_events.append((self.now, node.name, depth))
            self._emit(f"t={self.now} reorg node={node.name} depth={depth}")
        if result.status != NEW_SIDE_BRANCH:
            self.metrics.tip_history[node.name].append((self.now, node.store.tip_hash.hex()))
            if (
                isinstance(self.model, cons.PowParams)
                and node.hash_rate > 0
                and not node.attack_active
            ):
                self._schedule_find(node, self.now)
            self._check_confirmations(node)
        if (
            self.adversary is not None
            and self.adversary.kind == MAJORITY_REORG
            and node is self.adversary_node
            and not node.attack_active
        ):
            self._maybe_start_attack(node)

    # -- transactions -----------------------------------------------------------------

    def submit_transaction(self, via: str, tx: Transaction) -> None:
        """Entry point for workload ticks and tests: hand a signed transaction
        to one node, which validates and gossips it."""
        node = self.nodes[via]
        tx_id = tx.tx_id
        self._emit(f"t={self.now} tx node={via} id={tx_id.hex()[:12]}")
        node.pending_txs.append((tx_id, self.now))
        if node.role == LIGHTWEIGHT:
            full_peers = [
                p for p in self.peers_of(via, self.now) if self.nodes[p].role != LIGHTWEIGHT
            ]
            if not full_peers:
                node.queued_txs.append(tx)
                return
            for peer_name in full_peers:
                self._push(
                    self.now + self._latency(),
                    _RANK_TX,
                    self.nodes[peer_name].address.to_bytes(),
                    "deliver_tx",
                    (peer_name, tx, via),
                )
            return
        self._deliver_tx_to(node, tx, via)

    def _deliver_tx_to(self, node: SimNode, tx: Transaction, sender: str) -> None:
        tx_id = tx.tx_id
        if tx_id in node.tx_relayed:
            return
        node.tx_relayed.add(tx_id)
        allow_locked = not isinstance(self.model, (cons.PosChainParams, cons.PosCoinAgeParams))
        node.store.mempool.add(tx, node.store.tip_state().utxo, allow_locked)
        for peer_name in self.peers_of(node.name, self.now):
            peer = self.nodes[peer_name]
            if peer.role == LIGHTWEIGHT:
                continue
            self._push(
                self.now + self._latency(),
                _RANK_TX,
                peer.address.to_bytes(),
                "deliver_tx",
                (peer_name, tx, node.name),
            )

    def _on_deliver_tx(self, name: str, tx: Transaction, sender: str) -> None:
        node = self.nodes[name]
        if node.online(self.now):
            self._deliver_tx_to(node, tx, sender)

    def _check_confirmations(self, node: SimNode) -> None:
        still_pending = []
        for tx_id, submitted in node.pending_txs:
            if tx_id in self.metrics.confirmation_latencies:
                continue
            confirmed = node.store.is_confirmed(tx_id) if node.store else False
            if confirmed:
                latency = self.now - submitted
                self.metrics.confirmation_latencies[tx_id] = latency
                self._emit(
                    f"t={self.now} confirm node={node.name} id={tx_id.hex()[:12]}"
                    f" latency={latency}"
                )
            else:
                still_pending.append((tx_id, submitted))
        node.pending_txs = still_pending

    # -- workload ------------------------------------------------------------------

    def _on_workload(self) -> None:
        wl = self.config.workload
        if self.production_allowed(self.now):
            self._generate_payment(wl)
        self._push(self.now + wl.tx_interval, _RANK_WORKLOAD, b"", "workload", ())

    def _spendable_outpoint(self, node: SimNode, view_node: SimNode, needed: int):
        utxo = view_node.store.tip_state().utxo
        options = [
            (outpoint, entry)
            for outpoint, entry in utxo.live_entries()
            if not entry.locked
            and entry.output.recipient == node.address
            and entry.output.amount >= needed
        ]
        options.sort(key=lambda oe: oe[0])
        return (options[0][0], utxo) if options else (None, utxo)

    def _generate_payment(self, wl: WorkloadSpec) -> None:
        candidates = [wl.submit_via] if wl.submit_via else list(self.order)
        needed = wl.tx_amount + wl.tx_fee
        viable = []
        for name in candidates:
            node = self.nodes[name]
            if not node.online(self.now):
                continue
            view = node if node.store else self._first_full_peer(node)
            if view is None:
                continue
            outpoint, utxo = self._spendable_outpoint(node, view, needed)
            if outpoint is not None:
                viable.append((name, outpoint, utxo))
        if not viable:
            return
        name, outpoint, utxo = viable[self._workload_stream.randrange(len(viable))]
        others = [n for n in self.order if n != name]
        recipient = self.nodes[others[self._workload_stream.randrange(len(others))]].address
        node = self.nodes[name]
        try:
            tx = build_transaction(
                [outpoint], [(recipient, wl.tx_amount)], wl.tx_fee, [node.keypair], utxo
            )
        except TxBuildError:
            return
        self.submit_transaction(name, tx)

    def _first_full_peer(self, node: SimNode) -> SimNode | None:
        for peer_name in self.peers_of(node.name, self.now):
            peer = self.nodes[peer_name]
            if peer.role != LIGHTWEIGHT and peer.online(self.now):
                return peer
        return None

    # -- sampling --------------------------------------------------------------------

    def chain_agreement(self) -> float:
        """Fraction of full-node pairs whose adopted tips are prefix-compatible
        at the lower of the two heights."""
        names = self.full_nodes
        if len(names) < 2:
            return 1.0
        agreeing = 0
        total = 0
        for i, a in enumerate(names):
            for b in names[i + 1 :]:
                total += 1
                sa, sb = self.nodes[a].store, self.nodes[b].store
                h = min(sa.tip_height, sb.tip_height)
                if sa.ancestor_at(sa.tip_hash, h) == sb.ancestor_at(sb.tip_hash, h):
                    agreeing += 1
        return agreeing / total

    def _on_sample(self) -> None:
        self.metrics.agreement_series.append((self.now, self.chain_agreement()))
        nxt = self.now + self.config.agreement_interval
        if nxt <= self.config.duration:
            self._push(nxt, _RANK_SAMPLE, b"", "sample", ())

    # -- finalization -------------------------------------------------------------------

    def _finalize(self) -> None:
        self.now = self.config.duration
        for name in self.publishers:
            node = self.nodes[name]
            self._accrue_attempts(node)
            self.metrics.hash_attempts[name] = node.attempts
        for name in self.full_nodes:
            self._check_confirmations(self.nodes[name])
        adopted_union: set[bytes] = set()
        for name in self.full_nodes:
            adopted_union.update(self.nodes[name].store.adopted_path())
        self.metrics.orphan_count = sum(1 for h in self.produced if h not in adopted_union)
        self.metrics.fork_split = self._fork_split()
        tips = ",".join(
            f"{name}:{self.nodes[name].tip_hash().hex()[:12]}" for name in self.full_nodes
        )
        self._emit(f"t={self.config.duration} end tips={tips}")

    def _fork_split(self) -> bool:
        tips = {self.nodes[name].store.tip_hash for name in self.full_nodes}
        if len(tips) < 2:
            return False
        # diverged if some pair's common prefix sits strictly below both tips
        names = self.full_nodes
        for i, a in enumerate(names):
            for b in names[i + 1 :]:
                sa, sb = self.nodes[a].store, self.nodes[b].store
                if sa.tip_hash == sb.tip_hash:
                    continue
                h = min(sa.tip_height, sb.tip_height)
                if sa.ancestor_at(sa.tip_hash, h) != sb.ancestor_at(sb.tip_hash, h):
                    return True
        return False


def build_genesis(config: SimConfig, keys: dict[str, KeyPair] | None = None) -> Block:
    """Genesis carrying each node's allocation, with stake locked through
    signed STAKE transactions that spend the allocation inside the block."""
    keys = keys or {spec.name: node_keypair(config.seed, spec.name) for spec in config.nodes}
    allocation = []
    funded = []
    for spec in config.nodes:
        total = spec.balance + spec.stake
        if total > 0:
            addr = derive_address(keys[spec.name].public_key)
            allocation.append((addr, total))
            funded.append((spec, addr, total))
    params = replace(config.chain, genesis_allocation=tuple(allocation))
    coinbase = make_coinbase(allocation, 0)
    view = UtxoSet()
    for i, out in enumerate(coinbase.outputs):
        view.add((coinbase.tx_id, i), out, False, 0)
    stake_txs = []
    for i, (spec, addr, total) in enumerate(funded):
        if spec.stake <= 0:
            continue
        tx = build_transaction(
            [(coinbase.tx_id, i)],
            [(addr, spec.stake)],
            0,
            [keys[spec.name]],
            view,
            kind=TxKind.STAKE,
        )
        stake_txs.append(tx)
    return make_genesis(params, tuple(stake_txs))


def effective_params(config: SimConfig) -> ChainParams:
    """Chain params with the genesis allocation implied by the node specs."""
    keys = {spec.name: node_keypair(config.seed, spec.name) for spec in config.nodes}
    allocation = tuple(
        (derive_address(keys[spec.name].public_key), spec.balance + spec.stake)
        for spec in config.nodes
        if spec.balance + spec.stake > 0
    )
    return replace(config.chain, genesis_allocation=allocation)


def run_scenario(config: SimConfig) -> SimResult:
    sim = Simulation(prepare_config(config))
    return sim.run()


def prepare_config(config: SimConfig) -> SimConfig:
    return replace(config, chain=effective_params(config))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def summary_row(result: SimResult) -> dict:
    m = result.metrics
    return {
        "seed": m.seed,
        "orphans": m.orphan_count,
        "max_reorg_depth": m.max_reorg_depth,
        "mean_confirmation_latency": round(m.mean_confirmation_latency, 3),
        "fork_split": str(m.fork_split).lower(),
    }


def write_reports(result: SimResult, out_dir: str) -> None:
    import csv
    import os

    os.makedirs(out_dir, exist_ok=True)
    row = summary_row(result)
    with open(os.path.join(out_dir, "metrics_summary.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(row))
        writer.writeheader()
        writer.writerow(row)
    with open(os.path.join(out_dir, "agreement_timeseries.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tick", "agreement_fraction"])
        for tick, fraction in result.metrics.agreement_series:
            writer.writerow([tick, f"{fraction:.4f}"])
    with open(os.path.join(out_dir, "node_resources.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node", "hash_attempts"])
        for name, attempts in result.metrics.hash_attempts.items():
            writer.writerow([name, f"{attempts:.1f}"])
    with open(os.path.join(out_dir, "events.log"), "w") as fh:
        fh.write("\n".join(result.event_log) + "\n")
