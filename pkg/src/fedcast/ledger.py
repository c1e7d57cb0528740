"""Content-addressed model store and hash-linked anchor chain.

In-process stand-ins for the distributed pieces of the publication flow:
blobs live in a content-addressed store keyed by SHA-256 (the ``cid``),
and each round's model snapshot is anchored in an append-only chain of
hash-linked blocks.  A gas meter prices the chain's transactions under
bundled per-platform tariffs so deployment costs can be compared without
touching a live network.

The chain serializes to line-delimited JSON (one block per line) and the
store persists blobs as ``cas/<first-2-hex>/<full-hex>`` files, so a run's
artifacts can be re-verified offline by ``fedcast verify``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from importlib import resources

GENESIS_PREV_HASH = "0" * 64

GWEI_PER_ETH = 1e9

# Shared transaction count that reproduces every "overall cost" figure of the
# bundled tariff table (least-squares fit across platforms; residuals < 0.1%).
TABLE_TX_COUNT = 716.52

# Cost multiplier for deployments with incentive/reputation extensions.
COMPLEX_SCENARIO_FACTOR = 5.0


class LedgerError(Exception):
    """Base class for ledger failures."""


class NotFound(LedgerError):
    """Requested CID is not present in the store."""


class NonMonotoneRound(LedgerError):
    """Anchored rounds must be strictly increasing."""


class NonMonotoneTimestamp(LedgerError):
    """Block timestamps must be non-decreasing."""


class RoundNotAnchored(LedgerError):
    """No block anchors the requested round."""


class AlertInconsistency(LedgerError):
    """A delivered model does not match its anchored CID."""


def cid_of(blob: bytes) -> str:
    """Content identifier of *blob*: SHA-256 hex digest."""
    return hashlib.sha256(blob).hexdigest()


class ContentStore:
    """Content-addressed blob store, optionally persisted to a directory.

    ``put`` is idempotent: identical bytes map to the same CID and are
    stored once.  With a *root* directory, blobs are written to
    ``root/<cid[:2]>/<cid>`` and ``get`` falls back to disk, so a store
    opened on an existing directory serves previously persisted blobs.
    """

    def __init__(self, root: Path | str | None = None):
        self.root = Path(root) if root is not None else None
        self._blobs: dict[str, bytes] = {}

    def put(self, blob: bytes) -> str:
        cid = cid_of(blob)
        if cid not in self._blobs:
            self._blobs[cid] = bytes(blob)
            if self.root is not None:
                path = self.root / cid[:2] / cid
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_bytes(blob)
        return cid

    def get(self, cid: str) -> bytes:
        if cid in self._blobs:
            return self._blobs[cid]
        if self.root is not None:
            path = self.root / cid[:2] / cid
            if path.exists():
                blob = path.read_bytes()
                self._blobs[cid] = blob
                return blob
        raise NotFound(f"no blob stored under cid {cid}")

    def __contains__(self, cid: str) -> bool:
        try:
            self.get(cid)
        except NotFound:
            return False
        return True

    def __len__(self) -> int:
        return len(self._blobs)


def _payload_bytes(cid: str, round_no: int, timestamp: int, meta: str) -> bytes:
    payload = {"cid": cid, "meta": meta, "round": round_no, "timestamp": timestamp}
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _block_hash(height: int, prev_hash: str, payload: bytes) -> str:
    h = hashlib.sha256()
    h.update(str(height).encode("ascii"))
    h.update(b"|")
    h.update(prev_hash.encode("ascii"))
    h.update(b"|")
    h.update(payload)
    return h.hexdigest()


@dataclass
class Block:
    """One anchor: a model CID bound to a round, hash-linked to its parent."""

    height: int
    prev_hash: str
    cid: str
    round: int
    timestamp: int
    meta: str
    block_hash: str

    def recompute_hash(self) -> str:
        return _block_hash(
            self.height,
            self.prev_hash,
            _payload_bytes(self.cid, self.round, self.timestamp, self.meta),
        )

    def to_record(self) -> dict:
        return {
            "height": self.height,
            "prev_hash": self.prev_hash,
            "cid": self.cid,
            "round": self.round,
            "timestamp": self.timestamp,
            "meta": self.meta,
            "block_hash": self.block_hash,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Block":
        return cls(
            height=int(rec["height"]),
            prev_hash=str(rec["prev_hash"]),
            cid=str(rec["cid"]),
            round=int(rec["round"]),
            timestamp=int(rec["timestamp"]),
            meta=str(rec["meta"]),
            block_hash=str(rec["block_hash"]),
        )


class Chain:
    """Append-only chain of anchors with logical (monotone) timestamps.

    Appends are strictly ordered: each new block must carry a round greater
    than every previously anchored round and a timestamp no older than its
    parent's.  The chain counts appended transactions for gas pricing.
    """

    def __init__(self, blocks: list[Block] | None = None):
        self.blocks: list[Block] = list(blocks) if blocks else []

    @property
    def n_tx(self) -> int:
        return len(self.blocks)

    def head_hash(self) -> str:
        return self.blocks[-1].block_hash if self.blocks else GENESIS_PREV_HASH

    def append_block(
        self,
        cid: str,
        round_no: int,
        timestamp: int | None = None,
        meta: str = "",
    ) -> Block:
        if self.blocks:
            last = self.blocks[-1]
            if round_no <= last.round:
                raise NonMonotoneRound(
                    f"round {round_no} already anchored (head round {last.round})"
                )
            if timestamp is None:
                timestamp = last.timestamp + 1
            elif timestamp < last.timestamp:
                raise NonMonotoneTimestamp(
                    f"timestamp {timestamp} precedes head timestamp {last.timestamp}"
                )
        elif timestamp is None:
            timestamp = 0

        height = len(self.blocks)
        prev_hash = self.head_hash()
        payload = _payload_bytes(cid, round_no, timestamp, meta)
        block = Block(
            height=height,
            prev_hash=prev_hash,
            cid=cid,
            round=round_no,
            timestamp=timestamp,
            meta=meta,
            block_hash=_block_hash(height, prev_hash, payload),
        )
        self.blocks.append(block)
        return block

    def anchor_for_round(self, round_no: int) -> Block:
        for block in self.blocks:
            if block.round == round_no:
                return block
        raise RoundNotAnchored(f"round {round_no} has no anchor")

    # -- persistence ------------------------------------------------------

    def dump(self, path: Path | str) -> None:
        lines = [
            json.dumps(b.to_record(), sort_keys=True, separators=(",", ":"))
            for b in self.blocks
        ]
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")

    @classmethod
    def load(cls, path: Path | str) -> "Chain":
        blocks = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                blocks.append(Block.from_record(json.loads(line)))
        return cls(blocks)


def verify_chain(chain: Chain) -> int | None:
    """Recompute every block hash and link; return the first corrupt height.

    Returns ``None`` when the whole chain checks out.  Corruption is a
    result, not an exception, so callers can report it.
    """
    prev_hash = GENESIS_PREV_HASH
    for i, block in enumerate(chain.blocks):
        if block.height != i:
            return i
        if block.prev_hash != prev_hash:
            return i
        if block.recompute_hash() != block.block_hash:
            return i
        prev_hash = block.block_hash
    return None


def verify_model(blob: bytes, round_no: int, chain: Chain) -> bool:
    """Check a delivered model against its round anchor.

    True iff the blob's recomputed CID equals the anchored one.  Raises
    :class:`RoundNotAnchored` when the chain has no entry for *round_no*.
    """
    anchor = chain.anchor_for_round(round_no)
    return cid_of(blob) == anchor.cid


# ---------------------------------------------------------------------------
# Gas pricing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GasTariff:
    """Per-operation prices (Gwei) for one blockchain platform."""

    name: str
    deploy_cost: float
    tx_cost: float
    validation_cost: float
    policy: str = "PoS"
    network: str = ""

    def __post_init__(self):
        if min(self.deploy_cost, self.tx_cost, self.validation_cost) < 0:
            raise ValueError("tariff costs must be nonnegative")


@dataclass(frozen=True)
class CostEstimate:
    """Total price of a run under one tariff."""

    total_gwei: float

    @property
    def total_eth(self) -> float:
        return self.total_gwei / GWEI_PER_ETH


def estimate_cost(
    tariff: GasTariff,
    n_tx: float,
    n_deploys: int = 1,
    n_validations: int = 1,
) -> CostEstimate:
    """Price a run: deployments + transactions + validations, linearly."""
    if n_tx < 0 or n_deploys < 0 or n_validations < 0:
        raise ValueError("counts must be nonnegative")
    total = (
        n_deploys * tariff.deploy_cost
        + n_tx * tariff.tx_cost
        + n_validations * tariff.validation_cost
    )
    return CostEstimate(total_gwei=total)


def load_tariffs() -> list[GasTariff]:
    """Bundled per-platform tariff presets."""
    text = resources.files("fedcast").joinpath("data/tariffs.json").read_text("utf-8")
    raw = json.loads(text)
    return [
        GasTariff(
            name=p["name"],
            deploy_cost=p["deploy_gwei"],
            tx_cost=p["tx_gwei"],
            validation_cost=p["validation_gwei"],
            policy=p.get("policy", "PoS"),
            network=p.get("network", ""),
        )
        for p in raw["platforms"]
    ]


def fit_table_tx_count(rows: list[tuple[GasTariff, float]]) -> float:
    """Least-squares shared transaction count from (tariff, total_eth) rows.

    Solves ``total = deploy + n * tx + validation`` for the single ``n``
    minimizing squared residuals across all rows.
    """
    num = 0.0
    den = 0.0
    for tariff, total_eth in rows:
        residual = total_eth * GWEI_PER_ETH - tariff.deploy_cost - tariff.validation_cost
        num += tariff.tx_cost * residual
        den += tariff.tx_cost * tariff.tx_cost
    if den == 0:
        raise ValueError("need at least one row with nonzero tx cost")
    return num / den


def gas_report(
    n_tx: float,
    tariffs: list[GasTariff] | None = None,
    complex_factor: float = COMPLEX_SCENARIO_FACTOR,
) -> list[dict]:
    """Price the same transaction count under every tariff.

    Gas usage is identical across platforms; only per-unit prices differ.
    Each row carries the baseline estimate and a "complex deployment"
    scenario scaling the whole bill by *complex_factor*.
    """
    tariffs = tariffs if tariffs is not None else load_tariffs()
    report = []
    for tariff in tariffs:
        base = estimate_cost(tariff, n_tx)
        report.append(
            {
                "platform": tariff.name,
                "policy": tariff.policy,
                "network": tariff.network,
                "n_tx": n_tx,
                "baseline_gwei": base.total_gwei,
                "baseline_eth": base.total_eth,
                "complex_eth": base.total_eth * complex_factor,
            }
        )
    return report
