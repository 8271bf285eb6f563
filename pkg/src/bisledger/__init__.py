"""Verifiable insurance ledger: transactions, chain, off-chain store and claim workflow."""
from .chain import Block, Ledger, append_block, find_policies, verify_chain, walk_contract_chain
from .crypto import KeyPair, KeyRing, digest, fresh_pk, generate_keypair, sign, verify
from .netsim import Network, spawn_network
from .parties import Party, Role
from .transactions import Verdict, canonical_bytes, compute_tid
from .validation import validate_tx

__version__ = "0.1.0"

__all__ = [
    "Block", "Ledger", "append_block", "find_policies", "verify_chain", "walk_contract_chain",
    "KeyPair", "KeyRing", "digest", "fresh_pk", "generate_keypair", "sign", "verify",
    "Network", "spawn_network", "Party", "Role", "Verdict", "canonical_bytes", "compute_tid",
    "validate_tx",
]
