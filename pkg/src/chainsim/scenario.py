"""Scenario configuration: YAML files describing a network run.

Every error is reported with the key path that caused it, and all errors in a
file are collected before raising, so a bad config surfaces its full damage in
one pass.
"""

from __future__ import annotations

import math

import yaml

from . import consensus as cons
from .chain import ChainParams
from .crypto import derive_address
from .netsim import (
    FULL,
    LIGHTWEIGHT,
    PUBLISHING,
    AdversarySpec,
    CENSORSHIP,
    ForkSchedule,
    HARD,
    MAJORITY_REORG,
    NodeSpec,
    PartitionSpec,
    SimConfig,
    SOFT,
    TopologySpec,
    WITHHOLDING,
    WorkloadSpec,
    node_keypair,
)

ROLES = (FULL, PUBLISHING, LIGHTWEIGHT)
FORK_KINDS = (SOFT, HARD)
ADVERSARY_KINDS = (MAJORITY_REORG, WITHHOLDING, CENSORSHIP)
MODELS = ("pow", "pos_chain", "pos_coinage", "round_robin", "poa", "poet")

_TOP_KEYS = {
    "seed",
    "duration",
    "production_stop",
    "block_interval",
    "agreement_interval",
    "chain",
    "consensus",
    "nodes",
    "topology",
    "fork",
    "adversary",
    "workload",
}


class ScenarioError(Exception):
    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("; ".join(errors))


class _Checker:
    def __init__(self) -> None:
        self.errors: list[str] = []

    def fail(self, path: str, message: str) -> None:
        self.errors.append(f"{path}: {message}")

    def require(self, mapping: dict, path: str, key: str, kind, default=None):
        name = f"{path}.{key}" if path else key
        if key not in mapping:
            if default is not None:
                return default
            self.fail(name, "required key is missing")
            return None
        return self.typed(mapping[key], name, kind)

    def optional(self, mapping: dict, path: str, key: str, kind, default):
        name = f"{path}.{key}" if path else key
        if key not in mapping or mapping[key] is None:
            return default
        return self.typed(mapping[key], name, kind)

    def typed(self, value, name: str, kind):
        if kind is int:
            if isinstance(value, bool) or not isinstance(value, int):
                self.fail(name, f"expected an integer, got {value!r}")
                return None
            return value
        if kind is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                self.fail(name, f"expected a number, got {value!r}")
                return None
            return float(value)
        if kind is str:
            if not isinstance(value, str):
                self.fail(name, f"expected a string, got {value!r}")
                return None
            return value
        if kind is dict:
            if not isinstance(value, dict):
                self.fail(name, f"expected a mapping, got {value!r}")
                return None
            return value
        if kind is list:
            if not isinstance(value, list):
                self.fail(name, f"expected a list, got {value!r}")
                return None
            return value
        raise AssertionError(kind)


def load_scenario(path: str) -> SimConfig:
    with open(path, "r") as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ScenarioError(["top level: expected a mapping"])
    return parse_scenario(raw)


def parse_scenario(raw: dict) -> SimConfig:
    c = _Checker()
    for key in raw:
        if key not in _TOP_KEYS:
            c.fail(key, "unknown key")

    seed = c.require(raw, "", "seed", int)
    duration = c.require(raw, "", "duration", int)
    if duration is not None and duration <= 0:
        c.fail("duration", "must be positive")
    production_stop = c.optional(raw, "", "production_stop", int, None)
    block_interval = c.optional(raw, "", "block_interval", int, 10)
    agreement_interval = c.optional(raw, "", "agreement_interval", int, 10)
    if block_interval is not None and block_interval <= 0:
        c.fail("block_interval", "must be positive")
    if agreement_interval is not None and agreement_interval <= 0:
        c.fail("agreement_interval", "must be positive")

    nodes = _parse_nodes(c, raw.get("nodes"))
    names = [spec.name for spec in nodes]
    topology = _parse_topology(c, raw.get("topology"), names, duration)
    fork = _parse_fork(c, raw.get("fork"), names)
    adversary = _parse_adversary(c, raw.get("adversary"), names)
    workload = _parse_workload(c, raw.get("workload"), names)
    consensus = _parse_consensus(c, raw.get("consensus"), nodes, seed)
    chain = _parse_chain(c, raw.get("chain"), consensus)

    if c.errors:
        raise ScenarioError(c.errors)
    return SimConfig(
        seed=seed,
        duration=duration,
        nodes=tuple(nodes),
        chain=chain,
        topology=topology,
        fork=fork,
        adversary=adversary,
        workload=workload,
        block_interval=block_interval,
        production_stop=production_stop,
        agreement_interval=agreement_interval,
    )


def _parse_nodes(c: _Checker, raw) -> list[NodeSpec]:
    if raw is None:
        c.fail("nodes", "required key is missing")
        return []
    raw = c.typed(raw, "nodes", list)
    if not raw:
        c.fail("nodes", "at least one node is required")
        return []
    specs: list[NodeSpec] = []
    seen: set[str] = set()
    for i, item in enumerate(raw):
        path = f"nodes[{i}]"
        item = c.typed(item, path, dict)
        if item is None:
            continue
        for key in item:
            if key not in {"name", "role", "hash_share", "stake", "balance", "online"}:
                c.fail(f"{path}.{key}", "unknown key")
        name = c.require(item, path, "name", str)
        if name is None:
            continue
        if name in seen:
            c.fail(f"{path}.name", f"duplicate node name {name!r}")
        seen.add(name)
        role = c.optional(item, path, "role", str, FULL)
        if role not in ROLES:
            c.fail(f"{path}.role", f"must be one of {ROLES}")
            role = FULL
        share = c.optional(item, path, "hash_share", float, 0.0)
        stake = c.optional(item, path, "stake", int, 0)
        balance = c.optional(item, path, "balance", int, 0)
        if share is None or share < 0:
            c.fail(f"{path}.hash_share", "must be non-negative")
            share = 0.0
        if stake is not None and stake < 0:
            c.fail(f"{path}.stake", "must be non-negative")
        if balance is not None and balance < 0:
            c.fail(f"{path}.balance", "must be non-negative")
        online = _parse_intervals(c, item.get("online"), f"{path}.online")
        specs.append(
            NodeSpec(
                name=name,
                role=role,
                hash_share=share or 0.0,
                stake=stake or 0,
                balance=balance or 0,
                online=online,
            )
        )
    return specs


def _parse_intervals(c: _Checker, raw, path: str) -> tuple[tuple[int, int], ...]:
    if raw is None:
        return ()
    raw = c.typed(raw, path, list)
    if raw is None:
        return ()
    out = []
    for i, pair in enumerate(raw):
        if (
            not isinstance(pair, list)
            or len(pair) != 2
            or not all(isinstance(v, int) and not isinstance(v, bool) for v in pair)
        ):
            c.fail(f"{path}[{i}]", "expected [start, end] integers")
            continue
        if pair[0] >= pair[1]:
            c.fail(f"{path}[{i}]", "start must be below end")
            continue
        out.append((pair[0], pair[1]))
    return tuple(out)


def _parse_topology(c: _Checker, raw, names: list[str], duration) -> TopologySpec:
    if raw is None:
        return TopologySpec()
    raw = c.typed(raw, "topology", dict)
    if raw is None:
        return TopologySpec()
    for key in raw:
        if key not in {"latency", "jitter", "partitions"}:
            c.fail(f"topology.{key}", "unknown key")
    latency = c.optional(raw, "topology", "latency", int, 1)
    jitter = c.optional(raw, "topology", "jitter", int, 0)
    if latency is not None and latency < 1:
        c.fail("topology.latency", "must be at least 1")
    if jitter is not None and jitter < 0:
        c.fail("topology.jitter", "must be non-negative")
    partitions = []
    for i, item in enumerate(c.optional(raw, "topology", "partitions", list, []) or []):
        path = f"topology.partitions[{i}]"
        item = c.typed(item, path, dict)
        if item is None:
            continue
        start = c.require(item, path, "start", int)
        end = c.require(item, path, "end", int)
        groups_raw = c.require(item, path, "groups", list)
        if None in (start, end, groups_raw):
            continue
        if start >= end:
            c.fail(path, "start must be below end")
        groups = []
        for gi, group in enumerate(groups_raw):
            gpath = f"{path}.groups[{gi}]"
            group = c.typed(group, gpath, list)
            if group is None:
                continue
            for member in group:
                if member not in names:
                    c.fail(gpath, f"unknown node {member!r}")
            groups.append(tuple(group))
        partitions.append(PartitionSpec(start=start, end=end, groups=tuple(groups)))
    return TopologySpec(latency=latency or 1, jitter=jitter or 0, partitions=tuple(partitions))


def _parse_fork(c: _Checker, raw, names: list[str]) -> ForkSchedule | None:
    if raw is None:
        return None
    raw = c.typed(raw, "fork", dict)
    if raw is None:
        return None
    for key in raw:
        if key not in {"kind", "activation_height", "adopters", "new_rule_version"}:
            c.fail(f"fork.{key}", "unknown key")
    kind = c.require(raw, "fork", "kind", str)
    if kind is not None and kind not in FORK_KINDS:
        c.fail("fork.kind", f"must be one of {FORK_KINDS}")
    height = c.require(raw, "fork", "activation_height", int)
    if height is not None and height < 1:
        c.fail("fork.activation_height", "must be at least 1")
    adopters = c.require(raw, "fork", "adopters", list)
    version = c.optional(raw, "fork", "new_rule_version", int, 1)
    if adopters is None:
        return None
    for name in adopters:
        if name not in names:
            c.fail("fork.adopters", f"unknown node {name!r}")
    return ForkSchedule(
        kind=kind or SOFT,
        activation_height=height or 1,
        adopters=tuple(adopters),
        new_rule_version=version if version is not None else 1,
    )


def _parse_adversary(c: _Checker, raw, names: list[str]) -> AdversarySpec | None:
    if raw is None:
        return None
    raw = c.typed(raw, "adversary", dict)
    if raw is None:
        return None
    for key in raw:
        if key not in {"kind", "node", "secret_depth", "delay_ticks", "victim"}:
            c.fail(f"adversary.{key}", "unknown key")
    kind = c.require(raw, "adversary", "kind", str)
    if kind is not None and kind not in ADVERSARY_KINDS:
        c.fail("adversary.kind", f"must be one of {ADVERSARY_KINDS}")
    node = c.require(raw, "adversary", "node", str)
    if node is not None and node not in names:
        c.fail("adversary.node", f"unknown node {node!r}")
    depth = c.optional(raw, "adversary", "secret_depth", int, 3)
    delay = c.optional(raw, "adversary", "delay_ticks", int, 0)
    victim = c.optional(raw, "adversary", "victim", str, "")
    if kind == CENSORSHIP and not victim:
        c.fail("adversary.victim", "censorship needs a victim node")
    if victim and victim not in names:
        c.fail("adversary.victim", f"unknown node {victim!r}")
    return AdversarySpec(
        kind=kind or WITHHOLDING,
        node=node or "",
        secret_depth=depth if depth is not None else 3,
        delay_ticks=delay or 0,
        victim=victim or "",
    )


def _parse_workload(c: _Checker, raw, names: list[str]) -> WorkloadSpec:
    if raw is None:
        return WorkloadSpec()
    raw = c.typed(raw, "workload", dict)
    if raw is None:
        return WorkloadSpec()
    for key in raw:
        if key not in {"tx_interval", "tx_amount", "tx_fee", "submit_via"}:
            c.fail(f"workload.{key}", "unknown key")
    interval = c.optional(raw, "workload", "tx_interval", int, 0)
    amount = c.optional(raw, "workload", "tx_amount", int, 5)
    fee = c.optional(raw, "workload", "tx_fee", int, 1)
    via = c.optional(raw, "workload", "submit_via", str, "")
    if interval is not None and interval < 0:
        c.fail("workload.tx_interval", "must be non-negative")
    if amount is not None and amount <= 0:
        c.fail("workload.tx_amount", "must be positive")
    if fee is not None and fee < 0:
        c.fail("workload.tx_fee", "must be non-negative")
    if via and via not in names:
        c.fail("workload.submit_via", f"unknown node {via!r}")
    return WorkloadSpec(
        tx_interval=interval or 0,
        tx_amount=amount or 5,
        tx_fee=fee if fee is not None else 1,
        submit_via=via or "",
    )


def _parse_consensus(c: _Checker, raw, nodes: list[NodeSpec], seed) -> object:
    if raw is None:
        c.fail("consensus", "required key is missing")
        return None
    raw = c.typed(raw, "consensus", dict)
    if raw is None:
        return None
    model = c.require(raw, "consensus", "model", str)
    if model is None:
        return None
    if model not in MODELS:
        c.fail("consensus.model", f"must be one of {MODELS}")
        return None

    publishers = [spec for spec in nodes if spec.role == PUBLISHING]
    pub_addrs = {
        spec.name: derive_address(node_keypair(seed or 0, spec.name).public_key)
        for spec in publishers
    }

    known = {"model"}
    params: object = None
    if model == "pow":
        known |= {"target_bits", "retarget_interval", "target_spacing"}
        bits = c.optional(raw, "consensus", "target_bits", int, 250)
        interval = c.optional(raw, "consensus", "retarget_interval", int, 16)
        spacing = c.optional(raw, "consensus", "target_spacing", int, 10)
        if bits is not None and not 8 <= bits <= 255:
            c.fail("consensus.target_bits", "must be between 8 and 255")
            bits = 250
        total = math.fsum(spec.hash_share for spec in publishers)
        if publishers and abs(total - 1.0) > 1e-9:
            c.fail("nodes", f"publishing hash_share values must sum to 1, got {total}")
        params = cons.PowParams(
            target=1 << (bits or 250),
            retarget_interval=interval or 16,
            target_spacing=spacing or 10,
            simulated=True,
        )
    elif model in ("pos_chain", "pos_coinage"):
        staked = [spec for spec in nodes if spec.stake > 0]
        if not staked:
            c.fail("nodes", f"{model} needs at least one node with stake")
        if model == "pos_chain":
            params = cons.PosChainParams()
        else:
            known |= {"age_threshold", "weight_cap"}
            threshold = c.optional(raw, "consensus", "age_threshold", int, 1)
            cap = c.optional(raw, "consensus", "weight_cap", int, cons.PosCoinAgeParams().weight_cap)
            params = cons.PosCoinAgeParams(
                age_threshold=threshold if threshold is not None else 1,
                weight_cap=cap or cons.PosCoinAgeParams().weight_cap,
            )
    elif model == "round_robin":
        known |= {"timeout"}
        timeout = c.optional(raw, "consensus", "timeout", int, 10)
        if not publishers:
            c.fail("nodes", "round_robin needs publishing nodes")
            return None
        params = cons.RoundRobinParams(
            publishers=tuple(pub_addrs[spec.name] for spec in publishers),
            timeout=timeout or 10,
        )
    elif model == "poa":
        known |= {"reputations", "r_max"}
        reps = c.require(raw, "consensus", "reputations", dict)
        r_max = c.optional(raw, "consensus", "r_max", int, 100)
        if reps is None:
            return None
        authorities = {}
        for name, rep in reps.items():
            if name not in pub_addrs:
                c.fail(f"consensus.reputations.{name}", "not a publishing node")
                continue
            rep = c.typed(rep, f"consensus.reputations.{name}", int)
            if rep is None:
                continue
            authorities[pub_addrs[name]] = rep
        if not authorities:
            c.fail("consensus.reputations", "needs at least one authority")
            return None
        params = cons.PoaParams(authorities=authorities, r_max=r_max or 100)
    elif model == "poet":
        known |= {"mean_wait"}
        mean_wait = c.optional(raw, "consensus", "mean_wait", float, 10.0)
        if not publishers:
            c.fail("nodes", "poet needs publishing nodes")
            return None
        params = cons.PoetParams(
            publishers=tuple(pub_addrs[spec.name] for spec in publishers),
            mean_wait=mean_wait or 10.0,
            seed=seed or 0,
        )

    for key in raw:
        if key not in known:
            c.fail(f"consensus.{key}", f"unknown key for model {model!r}")
    return params


def _parse_chain(c: _Checker, raw, consensus) -> ChainParams:
    raw = raw if raw is not None else {}
    raw = c.typed(raw, "chain", dict)
    if raw is None:
        raw = {}
    for key in raw:
        if key not in {"block_subsidy", "max_block_data_bytes", "confirmation_depth"}:
            c.fail(f"chain.{key}", "unknown key")
    subsidy = c.optional(raw, "chain", "block_subsidy", int, 50)
    max_bytes = c.optional(raw, "chain", "max_block_data_bytes", int, 65536)
    depth = c.optional(raw, "chain", "confirmation_depth", int, 6)
    if subsidy is not None and subsidy < 0:
        c.fail("chain.block_subsidy", "must be non-negative")
    if max_bytes is not None and max_bytes < 256:
        c.fail("chain.max_block_data_bytes", "must be at least 256")
    if depth is not None and depth < 1:
        c.fail("chain.confirmation_depth", "must be at least 1")
    return ChainParams(
        consensus=consensus,
        block_subsidy=subsidy if subsidy is not None else 50,
        max_block_data_bytes=max_bytes or 65536,
        confirmation_depth=depth or 6,
    )
