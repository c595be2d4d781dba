"""Per-authority proof-of-authority ledger instances.

Each instance has exactly one authority, which alone seals its blocks and
validates transactions for the assets it issues. Transactions for assets of
a known peer are forwarded; everything else is rejected. Peers exchange
their own chains through ``sync`` and keep them as replicated sections that
are verified against the foreign authority's keys but never re-validated as
local business.
"""

from __future__ import annotations

import enum
import functools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .canonical import ZERO_HASH, canonical_hash, canonical_json
from .errors import CorruptLedger, NothingToSeal, SyncRejected
from .keys import Identity, KeyServer

FORMAT = "bcfl-ledger/1"
GENESIS_ASSET = "genesis"


class Kind:
    """Payload kinds carried in ``payload["kind"]``."""

    GENESIS = "genesis"
    STREAM_TRANSFER = "stream_transfer"
    MODEL_UPDATE = "model_update"
    MODEL_PUBLISH = "model_publish"
    CONTRACT_REGISTRATION = "contract_registration"
    ALERT = "alert"
    ROUND_ANNOUNCE = "round_announce"
    ROUND_VOID = "round_void"

    ALL = frozenset(
        {GENESIS, STREAM_TRANSFER, MODEL_UPDATE, MODEL_PUBLISH, CONTRACT_REGISTRATION, ALERT, ROUND_ANNOUNCE, ROUND_VOID}
    )


def _tx_id(payload_bytes: bytes, issuer_id: str, asset_id: str) -> bytes:
    return canonical_hash(payload_bytes + issuer_id.encode("utf-8") + asset_id.encode("utf-8"))


@dataclass(frozen=True)
class Transaction:
    tx_id: bytes
    asset_id: str
    payload: dict
    issuer_id: str
    signature: bytes

    @property
    def kind(self) -> str:
        return self.payload.get("kind", "")

    @property
    def payload_bytes(self) -> bytes:
        return canonical_json(self.payload)

    def computed_id(self) -> bytes:
        return _tx_id(self.payload_bytes, self.issuer_id, self.asset_id)

    def to_dict(self) -> dict:
        return {
            "asset_id": self.asset_id,
            "issuer_id": self.issuer_id,
            "payload": self.payload,
            "signature": self.signature.hex(),
            "tx_id": self.tx_id.hex(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Transaction":
        if not isinstance(d.get("payload"), dict):
            raise ValueError("payload must be an object")
        return cls(
            tx_id=bytes.fromhex(d["tx_id"]),
            asset_id=str(d["asset_id"]),
            payload=d["payload"],
            issuer_id=str(d["issuer_id"]),
            signature=bytes.fromhex(d["signature"]),
        )


def make_transaction(asset_id: str, payload: dict, issuer: Identity) -> Transaction:
    """Build and sign a transaction; ``payload`` is normalised through canonical JSON."""
    payload = json.loads(canonical_json(payload))
    body = canonical_json(payload)
    return Transaction(
        tx_id=_tx_id(body, issuer.participant_id, asset_id),
        asset_id=asset_id,
        payload=payload,
        issuer_id=issuer.participant_id,
        signature=issuer.sign(body),
    )


def tx_root(tx_ids: Iterable[bytes]) -> bytes:
    return canonical_hash(b"".join(tx_ids))


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: bytes
    tx_root: bytes
    validator_id: str
    tick: int
    transactions: tuple[Transaction, ...]
    validator_signature: bytes

    def header(self) -> dict:
        return {
            "height": self.height,
            "prev_hash": self.prev_hash.hex(),
            "tick": self.tick,
            "tx_root": self.tx_root.hex(),
            "validator_id": self.validator_id,
        }

    @functools.cached_property
    def _header_bytes(self) -> bytes:
        # every header field is immutable, so the encoding can be kept
        return canonical_json(self.header())

    def header_bytes(self) -> bytes:
        return self._header_bytes

    @property
    def block_hash(self) -> bytes:
        return canonical_hash(self.header_bytes())

    def to_dict(self) -> dict:
        d = self.header()
        d["transactions"] = [t.to_dict() for t in self.transactions]
        d["validator_signature"] = self.validator_signature.hex()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Block":
        height, tick = d["height"], d["tick"]
        if type(height) is not int or type(tick) is not int:
            raise ValueError("height and tick must be integers")
        return cls(
            height=height,
            prev_hash=bytes.fromhex(d["prev_hash"]),
            tx_root=bytes.fromhex(d["tx_root"]),
            validator_id=str(d["validator_id"]),
            tick=tick,
            transactions=tuple(Transaction.from_dict(t) for t in d["transactions"]),
            validator_signature=bytes.fromhex(d["validator_signature"]),
        )


def _make_block(height: int, prev_hash: bytes, txs, validator: Identity, tick: int) -> Block:
    unsigned = Block(height, prev_hash, tx_root(t.tx_id for t in txs), validator.participant_id, tick, tuple(txs), b"")
    return Block(
        unsigned.height,
        unsigned.prev_hash,
        unsigned.tx_root,
        unsigned.validator_id,
        unsigned.tick,
        unsigned.transactions,
        validator.sign(unsigned.header_bytes()),
    )


class Status(enum.Enum):
    ACCEPTED = "accepted"
    REJECTED = "rejected"
    FORWARDED = "forwarded"


@dataclass(frozen=True)
class SubmitResult:
    status: Status
    reason: str | None = None
    target: str | None = None

    @property
    def accepted(self) -> bool:
        return self.status is Status.ACCEPTED


@dataclass(frozen=True)
class ChainVerdict:
    valid: bool
    height: int | None = None
    reason: str | None = None
    section: str | None = None

    def __bool__(self) -> bool:
        return self.valid

    def __str__(self) -> str:
        if self.valid:
            return "Valid"
        return f"Invalid({self.height}, {self.reason}) in section {self.section}"


VALID = ChainVerdict(True)


def _genesis_payload(authority_id: str, assets: Mapping[str, Iterable[str]], directory: Mapping[str, str], peers) -> dict:
    return {
        "kind": Kind.GENESIS,
        "authority": authority_id,
        "assets": {a: sorted(set(issuers)) for a, issuers in assets.items()},
        "directory": dict(directory),
        "peers": sorted(peers),
    }


class LedgerInstance:
    """One authority's ledger: its own chain, pending queue and replicas of its peers."""

    def __init__(self, authority_id: str, keyserver: KeyServer, assets, directory, peers, identity: Identity | None = None):
        if identity is not None and identity.participant_id != authority_id:
            raise ValueError("identity does not belong to this authority")
        self.authority_id = authority_id
        self.keyserver = keyserver
        self.identity = identity
        # asset -> delegated issuers (the authority itself is always an issuer)
        self.assets: dict[str, tuple[str, ...]] = {a: tuple(sorted(set(i))) for a, i in sorted(assets.items())}
        # asset -> issuing authority, for every asset known to this instance
        self.directory: dict[str, str] = dict(sorted(directory.items()))
        for a in self.assets:
            self.directory[a] = authority_id
        self.peers: tuple[str, ...] = tuple(sorted(set(peers) - {authority_id}))
        self.chain: list[Block] = []
        self.replicas: dict[str, list[Block]] = {}
        self.pending: list[Transaction] = []
        self._seen: set[bytes] = set()

    @classmethod
    def create(cls, identity: Identity, keyserver: KeyServer, assets, directory=None, peers=(), tick: int = 0):
        inst = cls(identity.participant_id, keyserver, assets, directory or {}, peers, identity)
        genesis_tx = make_transaction(
            GENESIS_ASSET, _genesis_payload(inst.authority_id, inst.assets, inst.directory, inst.peers), identity
        )
        inst.chain.append(_make_block(0, ZERO_HASH, [genesis_tx], identity, tick))
        inst._seen.add(genesis_tx.tx_id)
        return inst

    @property
    def issued_assets(self) -> frozenset[str]:
        return frozenset(self.assets)

    @property
    def height(self) -> int:
        return self.chain[-1].height

    def is_issuer(self, participant_id: str, asset_id: str) -> bool:
        return participant_id == self.authority_id or participant_id in self.assets.get(asset_id, ())

    # -- mutation ------------------------------------------------------------

    def submit(self, tx: Transaction) -> SubmitResult:
        if tx.asset_id not in self.assets:
            owner = self.directory.get(tx.asset_id)
            if owner is not None and owner in self.peers:
                return SubmitResult(Status.FORWARDED, target=owner)
            return SubmitResult(Status.REJECTED, "UnknownAsset")
        if tx.computed_id() != tx.tx_id:
            return SubmitResult(Status.REJECTED, "TxIdMismatch")
        if not self.keyserver.verify_from(tx.issuer_id, tx.payload_bytes, tx.signature):
            return SubmitResult(Status.REJECTED, "BadSignature")
        if not self.is_issuer(tx.issuer_id, tx.asset_id):
            return SubmitResult(Status.REJECTED, "NotAssetIssuer")
        if tx.tx_id in self._seen:
            return SubmitResult(Status.REJECTED, "DuplicateTransaction")
        self._seen.add(tx.tx_id)
        self.pending.append(tx)
        return SubmitResult(Status.ACCEPTED)

    def seal(self, tick: int | None = None) -> Block:
        if self.identity is None:
            raise PermissionError("read-only instance has no signing identity")
        if not self.pending:
            raise NothingToSeal(self.authority_id)
        prev = self.chain[-1]
        block = _make_block(prev.height + 1, prev.block_hash, self.pending, self.identity, prev.tick if tick is None else tick)
        self.chain.append(block)
        self.pending = []
        return block

    # -- audit ---------------------------------------------------------------

    def _verify_section(self, blocks: list[Block], authority_id: str, section: str) -> ChainVerdict:
        def bad(h, reason):
            return ChainVerdict(False, h, reason, section)

        if not blocks:
            return bad(0, "MissingGenesis")
        rules = None
        prev_hash = ZERO_HASH
        for expected_h, block in enumerate(blocks):
            h = block.height
            if h != expected_h:
                return bad(expected_h, "HeightMismatch")
            if block.prev_hash != prev_hash:
                return bad(h, "PrevHashMismatch")
            if block.validator_id != authority_id:
                return bad(h, "WrongValidator")
            for tx in block.transactions:
                if tx.computed_id() != tx.tx_id:
                    return bad(h, "TxIdMismatch")
            if tx_root(t.tx_id for t in block.transactions) != block.tx_root:
                return bad(h, "TxRootMismatch")
            for tx in block.transactions:
                if not self.keyserver.verify_from(tx.issuer_id, tx.payload_bytes, tx.signature):
                    return bad(h, "BadTxSignature")
            if h == 0:
                if len(block.transactions) != 1:
                    return bad(0, "BadGenesis")
                g = block.transactions[0]
                if g.kind != Kind.GENESIS or g.asset_id != GENESIS_ASSET or g.issuer_id != authority_id:
                    return bad(0, "BadGenesis")
                if g.payload.get("authority") != authority_id:
                    return bad(0, "BadGenesis")
                rules = g.payload.get("assets", {})
                if section == "local":
                    expected = _genesis_payload(self.authority_id, self.assets, self.directory, self.peers)
                    if canonical_json(g.payload) != canonical_json(expected):
                        return bad(0, "HeaderMismatch")
            else:
                for tx in block.transactions:
                    if tx.asset_id not in rules:
                        return bad(h, "ForeignAsset")
                    if tx.issuer_id != authority_id and tx.issuer_id not in rules[tx.asset_id]:
                        return bad(h, "NotAssetIssuer")
            if not self.keyserver.verify_from(authority_id, block.header_bytes(), block.validator_signature):
                return bad(h, "BadValidatorSignature")
            prev_hash = block.block_hash
        return VALID

    def verify_local(self) -> ChainVerdict:
        return self._verify_section(self.chain, self.authority_id, "local")

    def verify(self) -> ChainVerdict:
        verdict = self.verify_local()
        if not verdict:
            return verdict
        for peer in sorted(self.replicas):
            if peer not in self.peers:
                return ChainVerdict(False, 0, "UnknownPeer", peer)
            verdict = self._verify_section(self.replicas[peer], peer, peer)
            if not verdict:
                return verdict
        return VALID

    # -- reads ---------------------------------------------------------------

    def sections(self):
        yield self.authority_id, self.chain
        for peer in sorted(self.replicas):
            yield peer, self.replicas[peer]

    def query(
        self,
        asset_id: str | None = None,
        kind: str | None = None,
        min_height: int | None = None,
        max_height: int | None = None,
        include_replicas: bool = True,
    ) -> list[Transaction]:
        out = []
        for owner, blocks in self.sections():
            if owner != self.authority_id and not include_replicas:
                continue
            for block in blocks:
                if min_height is not None and block.height < min_height:
                    continue
                if max_height is not None and block.height > max_height:
                    continue
                for tx in block.transactions:
                    if asset_id is not None and tx.asset_id != asset_id:
                        continue
                    if kind is not None and tx.kind != kind:
                        continue
                    out.append(tx)
        return out

    def tx_ids(self) -> set[bytes]:
        return {tx.tx_id for _, blocks in self.sections() for b in blocks for tx in b.transactions}

    # -- persistence ---------------------------------------------------------

    def header_record(self) -> dict:
        return {
            "authority_id": self.authority_id,
            "directory": self.directory,
            "format": FORMAT,
            "issued_assets": {a: list(i) for a, i in self.assets.items()},
            "peers": list(self.peers),
        }

    def to_bytes(self) -> bytes:
        lines = [canonical_json(self.header_record())]
        for owner, blocks in self.sections():
            origin = "local" if owner == self.authority_id else "replica"
            for block in blocks:
                d = block.to_dict()
                d["origin"] = origin
                lines.append(canonical_json(d))
        return b"\n".join(lines) + b"\n"

    def persist(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def from_bytes(cls, data: bytes, keyserver: KeyServer, identity: Identity | None = None) -> "LedgerInstance":
        lines = data.split(b"\n")
        if lines and lines[-1] == b"":
            lines.pop()
        if not lines:
            raise CorruptLedger(0, "EmptyFile")
        try:
            head = json.loads(lines[0])
            if head.get("format") != FORMAT:
                raise ValueError("unknown format")
            inst = cls(head["authority_id"], keyserver, head["issued_assets"], head["directory"], head["peers"], identity)
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            raise CorruptLedger(0, f"Malformed header: {exc}") from exc
        for lineno, raw in enumerate(lines[1:], start=1):
            try:
                d = json.loads(raw)
                origin = d.pop("origin")
                block = Block.from_dict(d)
            except (ValueError, KeyError, TypeError, AttributeError) as exc:
                raise CorruptLedger(lineno - 1, f"Malformed block line {lineno}: {exc}") from exc
            if origin == "local":
                if inst.replicas:
                    raise CorruptLedger(block.height, "local block after replica section")
                inst.chain.append(block)
            elif origin == "replica":
                inst.replicas.setdefault(block.validator_id, []).append(block)
            else:
                raise CorruptLedger(block.height, f"unknown origin {origin!r}")
        inst._seen = {t.tx_id for b in inst.chain for t in b.transactions}
        return inst

    @classmethod
    def load(cls, path: str | Path, keyserver: KeyServer, identity: Identity | None = None) -> "LedgerInstance":
        return cls.from_bytes(Path(path).read_bytes(), keyserver, identity)


def verify_chain(instance: LedgerInstance) -> ChainVerdict:
    return instance.verify()


def verify_bytes(data: bytes, keyserver: KeyServer) -> ChainVerdict:
    """Full integrity audit of a persisted ledger.

    Besides the chain rules this requires the bytes to be exactly the
    canonical rendering of what they parse to, so no edit can hide behind an
    equivalent JSON spelling.
    """
    try:
        inst = LedgerInstance.from_bytes(data, keyserver)
    except CorruptLedger as exc:
        return ChainVerdict(False, exc.height, exc.reason, "file")
    canon = inst.to_bytes()
    if canon != data:
        got, want = data.split(b"\n"), canon.split(b"\n")
        for i, (a, b) in enumerate(zip(got, want)):
            if a != b:
                height = 0 if i == 0 else json.loads(b)["height"]
                return ChainVerdict(False, height, "NonCanonical", "file")
        return ChainVerdict(False, inst.height, "NonCanonical", "file")
    return inst.verify()


def verify_file(path: str | Path, keyserver: KeyServer) -> ChainVerdict:
    return verify_bytes(Path(path).read_bytes(), keyserver)


def submit_routed(instances: Mapping[str, LedgerInstance], entry: str, tx: Transaction) -> tuple[SubmitResult, str]:
    """Submit at ``entry`` and follow forwards until accepted or rejected."""
    at = entry
    for _ in range(len(instances) + 1):
        result = instances[at].submit(tx)
        if result.status is not Status.FORWARDED:
            return result, at
        if result.target not in instances:
            return SubmitResult(Status.REJECTED, "UnreachableAuthority"), at
        at = result.target
    return SubmitResult(Status.REJECTED, "ForwardLoop"), at


def _plan(dest: LedgerInstance, src: LedgerInstance) -> list[Block]:
    if src.authority_id not in dest.peers or dest.authority_id not in src.peers:
        raise ValueError(f"{dest.authority_id} and {src.authority_id} are not peers")
    verdict = src.verify_local()
    if not verdict:
        raise SyncRejected(verdict.height, verdict.reason)
    have = dest.replicas.get(src.authority_id, [])
    if len(have) > len(src.chain):
        raise SyncRejected(len(src.chain), "ForkDetected")
    for mine, theirs in zip(have, src.chain):
        if mine.block_hash != theirs.block_hash or mine.validator_signature != theirs.validator_signature:
            raise SyncRejected(mine.height, "ForkDetected")
    return src.chain[len(have):]


def sync(a: LedgerInstance, b: LedgerInstance) -> int:
    """Exchange missing suffixes in both directions; returns blocks replicated.

    Both directions are planned (and verified) before either instance is
    touched, so a rejection leaves both unchanged.
    """
    into_a = _plan(a, b)
    into_b = _plan(b, a)
    if into_a:
        a.replicas.setdefault(b.authority_id, []).extend(into_a)
    if into_b:
        b.replicas.setdefault(a.authority_id, []).extend(into_b)
    return len(into_a) + len(into_b)
