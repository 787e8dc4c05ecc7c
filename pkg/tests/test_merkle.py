import pytest
from hypothesis import given
from hypothesis import strategies as st

from chainsim.crypto import sha256
from chainsim.merkle import leaf_hash, merkle_proof, merkle_root, verify_proof

LEAVES = st.lists(st.binary(min_size=0, max_size=40), min_size=1, max_size=16)


def test_single_leaf_root_is_leaf_hash():
    assert merkle_root([b"L"]) == sha256(b"\x00" + b"L")
    assert leaf_hash(b"L") == sha256(b"\x00" + b"L")


def test_four_leaf_root_matches_hand_composition():
    leaves = [b"a", b"b", b"c", b"d"]
    l0, l1, l2, l3 = (sha256(b"\x00" + x) for x in leaves)
    left = sha256(b"\x01" + l0 + l1)
    right = sha256(b"\x01" + l2 + l3)
    assert merkle_root(leaves) == sha256(b"\x01" + left + right)


def test_odd_leaf_is_paired_with_itself():
    leaves = [b"a", b"b", b"c"]
    l0, l1, l2 = (sha256(b"\x00" + x) for x in leaves)
    left = sha256(b"\x01" + l0 + l1)
    right = sha256(b"\x01" + l2 + l2)
    assert merkle_root(leaves) == sha256(b"\x01" + left + right)


def test_empty_leaves_rejected():
    with pytest.raises(ValueError):
        merkle_root([])
    with pytest.raises(IndexError):
        merkle_proof([], 0)


def test_proof_index_bounds():
    with pytest.raises(IndexError):
        merkle_proof([b"a", b"b"], 2)


def test_proof_for_leaf_2_of_4_verifies_and_binds_leaf():
    leaves = [b"a", b"b", b"c", b"d"]
    root = merkle_root(leaves)
    proof = merkle_proof(leaves, 2)
    assert verify_proof(root, b"c", 2, proof)
    assert not verify_proof(root, b"x", 2, proof)
    assert not verify_proof(root, b"c", 1, proof)


@given(LEAVES)
def test_every_leaf_has_a_verifying_proof(leaves):
    root = merkle_root(leaves)
    for i, leaf in enumerate(leaves):
        proof = merkle_proof(leaves, i)
        assert verify_proof(root, leaf, i, proof)


@given(LEAVES, st.integers(min_value=0, max_value=15), st.integers(min_value=1, max_value=255))
def test_root_changes_for_any_single_leaf_mutation(leaves, which, delta):
    which %= len(leaves)
    mutated = list(leaves)
    original = bytearray(mutated[which])
    if not original:
        original = bytearray(b"\x00")
    original[0] = (original[0] + delta) % 256
    mutated[which] = bytes(original)
    if mutated[which] != leaves[which]:
        assert merkle_root(mutated) != merkle_root(leaves)


def test_mutation_exhaustive_at_small_sizes():
    for n in range(1, 17):
        leaves = [bytes([i]) for i in range(n)]
        root = merkle_root(leaves)
        for i in range(n):
            mutated = list(leaves)
            mutated[i] = bytes([leaves[i][0] ^ 0xFF])
            assert merkle_root(mutated) != root


def test_leaf_and_node_domains_are_separated():
    # a two-leaf tree's root must not equal the leaf hash of the concatenation
    leaves = [b"a", b"b"]
    assert merkle_root(leaves) != leaf_hash(leaf_hash(b"a") + leaf_hash(b"b"))
