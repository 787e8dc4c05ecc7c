"""Merkle trees over ordered byte strings, with inclusion proofs.

Leaf and internal hashes are domain-separated (0x00 / 0x01 prefixes) so an
internal node can never be replayed as a leaf.  An odd node at any level is
paired with itself.
"""

from __future__ import annotations

from .crypto import sha256

_LEAF_PREFIX = b"\x00"
_NODE_PREFIX = b"\x01"


def leaf_hash(leaf: bytes) -> bytes:
    return sha256(_LEAF_PREFIX + leaf)


def _node_hash(left: bytes, right: bytes) -> bytes:
    return sha256(_NODE_PREFIX + left + right)


def _levels(leaves: list[bytes]) -> list[list[bytes]]:
    if not leaves:
        raise ValueError("merkle tree needs at least one leaf")
    level = [leaf_hash(leaf) for leaf in leaves]
    levels = [level]
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level), 2):
            left = level[i]
            right = level[i + 1] if i + 1 < len(level) else left
            nxt.append(_node_hash(left, right))
        levels.append(nxt)
        level = nxt
    return levels


def merkle_root(leaves: list[bytes]) -> bytes:
    """Root digest; a single leaf's root is its own leaf hash."""
    return _levels(leaves)[-1][0]


def merkle_proof(leaves: list[bytes], index: int) -> list[bytes]:
    """Sibling path from ``leaves[index]`` up to (excluding) the root."""
    if not 0 <= index < len(leaves):
        raise IndexError("leaf index out of range")
    path = []
    for level in _levels(leaves)[:-1]:
        sibling = index ^ 1
        path.append(level[sibling] if sibling < len(level) else level[index])
        index //= 2
    return path


def verify_proof(root: bytes, leaf: bytes, index: int, path: list[bytes]) -> bool:
    """Recompute the root from a leaf and its sibling path."""
    node = leaf_hash(leaf)
    for sibling in path:
        if index % 2 == 0:
            node = _node_hash(node, sibling)
        else:
            node = _node_hash(sibling, node)
        index //= 2
    return node == root
