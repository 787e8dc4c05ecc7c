"""Operator CLI: one line of machine-readable stdout per command, diagnostics
on stderr, and the documented exit codes (0 ok, 1 not found, 2 verification
failure, 3 I/O or corruption, 4 configuration error)."""

import re
import struct
import subprocess

import pytest

from pathlib import Path

from chainsim.chain import Block, deserialize_block
from chainsim.cli import main
from chainsim.contracts import derive_contract_address
from chainsim.crypto import derive_address, keypair_generate, sha256
from chainsim.ledger import Transaction, TxOutput

REPO = Path(__file__).resolve().parent.parent
SEED_HEX = "11" * 32
COUNTER_ASM = """\
# bump the counter in slot 0 and emit the new value
PUSH 0
LOAD
PUSH 1
ADD
DUP
PUSH 0
STORE
EMIT
"""


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture
def data_dir(tmp_path):
    return tmp_path / "state"


def keygen(capsys, data_dir, label: str, seed: str = SEED_HEX) -> str:
    code, out, _ = run_cli(
        capsys, "--data-dir", data_dir, "keygen", "--seed", seed, "--label", label
    )
    assert code == 0
    return out.split("address=")[1].strip()


def write_params(tmp_path, address_hex: str, amount: int = 500) -> str:
    path = tmp_path / "params.yaml"
    path.write_text(
        "confirmation_depth: 2\n"
        "block_subsidy: 50\n"
        f"allocation:\n  - [{address_hex}, {amount}]\n"
    )
    return str(path)


def init_funded_chain(capsys, tmp_path, data_dir) -> str:
    """keygen + chain init with the key's allocation; returns the address."""
    address = keygen(capsys, data_dir, "op")
    params = write_params(tmp_path, address)
    code, out, _ = run_cli(capsys, "--data-dir", data_dir, "chain", "init", "--params", params)
    assert code == 0
    assert out.startswith("height=0 tip=")
    return address


def test_installed_console_script():
    proc = subprocess.run(["chainsim", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "usage: chainsim" in proc.stdout


# -- keygen ------------------------------------------------------------------------


def test_keygen_deterministic_from_seed(capsys, tmp_path):
    a = keygen(capsys, tmp_path / "one", "k")
    b = keygen(capsys, tmp_path / "two", "k")
    assert a == b
    assert re.fullmatch(r"[0-9a-f]+", a)
    expected = derive_address(keypair_generate(bytes.fromhex(SEED_HEX)).public_key)
    assert a == expected.hex()


def test_keygen_default_labels_count_up(capsys, data_dir):
    code, out, _ = run_cli(capsys, "--data-dir", data_dir, "keygen")
    assert code == 0 and out.startswith("label=key0 ")
    code, out, _ = run_cli(capsys, "--data-dir", data_dir, "keygen")
    assert code == 0 and out.startswith("label=key1 ")


def test_keygen_rejects_duplicate_label(capsys, data_dir):
    keygen(capsys, data_dir, "same")
    code, _, err = run_cli(
        capsys, "--data-dir", data_dir, "keygen", "--seed", "22" * 32, "--label", "same"
    )
    assert code == 4
    assert "already exists" in err


def test_keygen_rejects_bad_seed(capsys, data_dir):
    code, _, err = run_cli(capsys, "--data-dir", data_dir, "keygen", "--seed", "zz")
    assert code == 4 and "hex" in err
    code, _, err = run_cli(capsys, "--data-dir", data_dir, "keygen", "--seed", "ab" * 8)
    assert code == 4 and "32 bytes" in err


# -- balance -----------------------------------------------------------------------


def test_balance_without_chain_is_zero(capsys, data_dir):
    address = keygen(capsys, data_dir, "k")
    code, out, _ = run_cli(capsys, "--data-dir", data_dir, "balance", address)
    assert code == 0
    assert out == "0 0\n"


def test_balance_rejects_malformed_address(capsys, data_dir):
    code, _, err = run_cli(capsys, "--data-dir", data_dir, "balance", "not-hex")
    assert code == 4
    assert "bad address" in err


def test_balance_sees_genesis_allocation(capsys, tmp_path, data_dir):
    address = init_funded_chain(capsys, tmp_path, data_dir)
    code, out, _ = run_cli(capsys, "--data-dir", data_dir, "balance", address)
    assert code == 0
    assert out == "500 0\n"


# -- puzzle ------------------------------------------------------------------------


def test_puzzle_solves_and_reports_attempts(capsys):
    code, out, _ = run_cli(capsys, "puzzle", "blockchain", 2, 0)
    assert code == 0
    fields = dict(part.split("=") for part in out.split())
    digest = bytes.fromhex(fields["digest"])
    assert digest == sha256(b"blockchain" + fields["nonce"].encode())
    assert digest.hex().startswith("00")
    assert int(fields["attempts"]) == int(fields["nonce"]) + 1


def test_puzzle_exhausted_range_exits_not_found(capsys):
    code, out, err = run_cli(capsys, "puzzle", "blockchain", 6, 0, 10)
    assert code == 1
    assert out == ""
    assert "not found" in err


def test_puzzle_rejects_impossible_difficulty(capsys):
    code, _, err = run_cli(capsys, "puzzle", "x", 65, 0)
    assert code == 4 and "error:" in err


# -- chain management ----------------------------------------------------------------


def test_chain_init_tip_verify_inspect(capsys, tmp_path, data_dir):
    init_funded_chain(capsys, tmp_path, data_dir)
    assert (data_dir / "chain.dat").exists()
    assert (data_dir / "params.yaml").exists()

    code, out, _ = run_cli(capsys, "--data-dir", data_dir, "chain", "tip")
    assert code == 0
    assert re.fullmatch(r"height=0 tip=[0-9a-f]{64}\n", out)

    code, out, _ = run_cli(capsys, "--data-dir", data_dir, "chain", "verify")
    assert code == 0 and out == "Ok\n"

    code, out, _ = run_cli(capsys, "--data-dir", data_dir, "chain", "inspect")
    assert code == 0
    lines = out.splitlines()
    assert len(lines) == 1
    assert lines[0].startswith("height=0 hash=")


def test_chain_commands_require_chain_file(capsys, data_dir):
    code, _, err = run_cli(capsys, "--data-dir", data_dir, "chain", "tip")
    assert code == 3
    assert "no chain file" in err


def test_chain_init_rejects_bad_params(capsys, tmp_path, data_dir):
    bad = tmp_path / "bad.yaml"
    bad.write_text("allocation:\n  - [xyz, 5]\n")
    code, _, err = run_cli(capsys, "--data-dir", data_dir, "chain", "init", "--params", bad)
    assert code == 4
    assert "allocation[0]" in err


def test_unknown_flag_maps_to_config_error(capsys):
    code, _, _ = run_cli(capsys, "chain", "--bogus")
    assert code == 4


# -- contracts on the local chain ------------------------------------------------------


def deploy_counter(capsys, tmp_path, data_dir) -> str:
    init_funded_chain(capsys, tmp_path, data_dir)
    source = tmp_path / "counter.asm"
    source.write_text(COUNTER_ASM)
    code, out, _ = run_cli(capsys, "asm", source)
    assert code == 0
    assert out.startswith("bytes=") and "out=" in out
    binary = out.split("out=")[1].strip()
    code, out, _ = run_cli(capsys, "--data-dir", data_dir, "deploy", binary, "--fee", 2)
    assert code == 0
    match = re.fullmatch(r"contract=([0-9a-f]+) height=1\n", out)
    assert match
    return match.group(1)


def test_asm_deploy_call_roundtrip(capsys, tmp_path, data_dir):
    contract = deploy_counter(capsys, tmp_path, data_dir)

    code, out, _ = run_cli(capsys, "--data-dir", data_dir, "call", contract, "--fee", 2)
    assert code == 0
    assert out == "status=Ok output=1 gas_used=12\n"

    code, out, _ = run_cli(capsys, "--data-dir", data_dir, "call", contract, "--fee", 2)
    assert code == 0
    assert out == "status=Ok output=2 gas_used=12\n"

    code, out, _ = run_cli(capsys, "--data-dir", data_dir, "chain", "verify")
    assert code == 0 and out == "Ok\n"
    code, out, _ = run_cli(capsys, "--data-dir", data_dir, "chain", "tip")
    assert out.startswith("height=3 ")


def test_call_with_starved_fee_runs_out_of_gas(capsys, tmp_path, data_dir):
    contract = deploy_counter(capsys, tmp_path, data_dir)
    code, out, _ = run_cli(capsys, "--data-dir", data_dir, "call", contract, "--fee", 1)
    assert code == 0
    assert out.startswith("status=OutOfGas output= gas_used=10")
    # the failed call burned its gas but left the counter untouched
    code, out, _ = run_cli(capsys, "--data-dir", data_dir, "call", contract, "--fee", 2)
    assert out == "status=Ok output=1 gas_used=12\n"


def test_call_unknown_contract_not_found(capsys, tmp_path, data_dir):
    address = init_funded_chain(capsys, tmp_path, data_dir)
    ghost = derive_contract_address(
        derive_address(keypair_generate(bytes.fromhex(SEED_HEX)).public_key), 9
    )
    code, _, err = run_cli(capsys, "--data-dir", data_dir, "call", ghost.hex(), "--fee", 2)
    assert code == 1
    assert "unknown contract" in err


def test_asm_reports_source_line_on_error(capsys, tmp_path):
    source = tmp_path / "bad.asm"
    source.write_text("PUSH 1\nFROB\n")
    code, _, err = run_cli(capsys, "asm", source)
    assert code == 4
    assert "line 2" in err


def test_deploy_without_keys_exits_not_found(capsys, tmp_path, data_dir):
    address = keygen(capsys, tmp_path / "elsewhere", "k")
    params = write_params(tmp_path, address)
    code, _, _ = run_cli(capsys, "--data-dir", data_dir, "chain", "init", "--params", params)
    assert code == 0
    source = tmp_path / "c.asm"
    source.write_text(COUNTER_ASM)
    run_cli(capsys, "asm", source)
    code, _, err = run_cli(
        capsys, "--data-dir", data_dir, "deploy", tmp_path / "c.bin", "--fee", 1
    )
    assert code == 1
    assert "key store is empty" in err


# -- chain file damage ------------------------------------------------------------------


def test_framing_corruption_is_io_error(capsys, tmp_path, data_dir):
    init_funded_chain(capsys, tmp_path, data_dir)
    path = data_dir / "chain.dat"
    raw = bytearray(path.read_bytes())
    raw[20] ^= 0xFF
    path.write_bytes(bytes(raw))
    code, _, err = run_cli(capsys, "--data-dir", data_dir, "chain", "verify")
    assert code == 3
    assert "checksum mismatch" in err


def test_semantic_tamper_is_verification_failure(capsys, tmp_path, data_dir):
    contract = deploy_counter(capsys, tmp_path, data_dir)
    path = data_dir / "chain.dat"
    raw = path.read_bytes()
    offset = 6
    records = []
    while offset < len(raw):
        (length,) = struct.unpack_from(">I", raw, offset)
        records.append(raw[offset + 4 : offset + 4 + length])
        offset += 4 + length + 4
    block, _ = deserialize_block(records[1])
    coin = block.transactions[0]
    fattened = Transaction(
        coin.kind,
        coin.inputs,
        (TxOutput(coin.outputs[0].amount + 1, coin.outputs[0].recipient),) + coin.outputs[1:],
        coin.payload,
    )
    records[1] = Block(block.header, (fattened,) + block.transactions[1:]).serialize()
    framed = raw[:6] + b"".join(
        struct.pack(">I", len(r)) + r + sha256(r)[:4] for r in records
    )
    path.write_bytes(framed)

    code, out, _ = run_cli(capsys, "--data-dir", data_dir, "chain", "verify")
    assert code == 2
    assert out == "Broken height=1 reason=DataHash\n"


def test_truncated_chain_file_loads_prefix_with_warning(capsys, tmp_path, data_dir):
    deploy_counter(capsys, tmp_path, data_dir)
    path = data_dir / "chain.dat"
    raw = path.read_bytes()
    path.write_bytes(raw[:-3])
    code, out, err = run_cli(capsys, "--data-dir", data_dir, "chain", "tip")
    assert code == 0
    assert "warning: trailing bytes" in err
    assert out.startswith("height=0 ")


# -- simulator --------------------------------------------------------------------------


def test_sim_writes_reports_and_summary(capsys, tmp_path):
    out_dir = tmp_path / "report"
    code, out, err = run_cli(
        capsys, "-v", "sim", REPO / "scenarios" / "round_robin.cfg", "--out", out_dir
    )
    assert code == 0
    assert re.fullmatch(
        r"seed=7 orphans=\d+ max_reorg_depth=\d+"
        r" mean_confirmation_latency=[\d.]+ fork_split=(true|false)\n",
        out,
    )
    assert re.search(r"event log hash [0-9a-f]{64}", err)
    for name in (
        "metrics_summary.csv",
        "agreement_timeseries.csv",
        "node_resources.csv",
        "events.log",
    ):
        assert (out_dir / name).exists()


def test_sim_is_repeatable_and_seed_overridable(capsys, tmp_path):
    _, first, err1 = run_cli(capsys, "-v", "sim", REPO / "scenarios" / "round_robin.cfg", "--out", tmp_path / "a")
    _, second, err2 = run_cli(capsys, "-v", "sim", REPO / "scenarios" / "round_robin.cfg", "--out", tmp_path / "b")
    assert first == second and err1 == err2
    _, other, _ = run_cli(
        capsys, "sim", REPO / "scenarios" / "round_robin.cfg", "--out", tmp_path / "c", "--seed", 9
    )
    assert other.startswith("seed=9 ")
    assert other != first


def test_sim_reports_every_scenario_problem(capsys, tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("seed: 1\nduration: -5\nbogus: 1\nnodes:\n  - {name: a, role: publishing, hash_share: 1.0}\nconsensus: {model: pow}\n")
    code, _, err = run_cli(capsys, "sim", bad, "--out", tmp_path / "r")
    assert code == 4
    assert "duration: must be positive" in err
    assert "bogus: unknown key" in err
    assert "error: 2 scenario error(s)" in err


def test_sim_missing_scenario_is_io_error(capsys, tmp_path):
    code, _, err = run_cli(capsys, "sim", tmp_path / "ghost.cfg", "--out", tmp_path / "r")
    assert code == 3
    assert "not found" in err
