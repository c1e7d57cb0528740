"""Privacy layer: gradient clipping, Gaussian noise, and secure aggregation.

The aggregation protocol hides individual client updates behind pairwise
additive masks over a sparse neighbor graph (ring plus chords, degree at
most six).  Each edge owns a seed; the lower-id endpoint adds the derived
mask, the higher-id endpoint subtracts it, so the masks cancel in the sum
and the aggregator only ever sees the total.  Every edge seed is secret
shared among all participants, so masks of clients that drop mid-round can
be regenerated from surviving holders and removed — provided at least
``threshold`` survivors remain.

Noise can be injected per client before aggregation or once into the
aggregate; both points are supported and selected by configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fixedpoint import FixedPointCodec
from .shamir import SeedShare, InsufficientShares, shamir_reconstruct, shamir_share

NOISE_GLOBAL = "global"
NOISE_PER_CLIENT = "per_client"

CLIP_ELEMENT = "element"
CLIP_NORM = "norm"

# Neighbor graph degree cap; threshold follows as degree // 2 + 1.
DEFAULT_MAX_DEGREE = 6


class PrivacyError(Exception):
    pass


class MissingSeed(PrivacyError):
    """Client has no agreed seed for one of its graph neighbors."""


class UnrecoverableDropout(PrivacyError):
    """Too few surviving shareholders to rebuild a dropped client's masks."""


@dataclass(frozen=True)
class DPConfig:
    """Differential-privacy knobs.

    ``clip_threshold`` may be ``inf`` to disable clipping entirely (used by
    the unprotected baselines).  ``noise_std`` of zero is the identity.
    """

    clip_threshold: float = 1.0
    noise_std: float = 0.01
    noise_point: str = NOISE_GLOBAL
    clip_mode: str = CLIP_ELEMENT

    def __post_init__(self):
        if self.clip_threshold <= 0:
            raise ValueError("clip_threshold must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        if self.noise_point not in (NOISE_GLOBAL, NOISE_PER_CLIENT):
            raise ValueError(f"unknown noise_point {self.noise_point!r}")
        if self.clip_mode not in (CLIP_ELEMENT, CLIP_NORM):
            raise ValueError(f"unknown clip_mode {self.clip_mode!r}")

    def describe(self) -> dict:
        return {
            "clip_threshold": self.clip_threshold,
            "noise_std": self.noise_std,
            "noise_point": self.noise_point,
            "clip_mode": self.clip_mode,
        }


def clip_gradient(grad: np.ndarray, c: float, mode: str = CLIP_ELEMENT) -> np.ndarray:
    """Clamp an update into the clipping region.

    Element mode clamps every coordinate into [-c, c]; norm mode rescales
    the whole vector onto the L2 ball of radius c when it falls outside.
    """
    if c <= 0:
        raise ValueError("clip threshold must be positive")
    grad = np.asarray(grad, dtype=np.float64)
    if mode == CLIP_ELEMENT:
        return np.clip(grad, -c, c)
    if mode == CLIP_NORM:
        norm = float(np.linalg.norm(grad))
        if norm > c:
            return grad * (c / norm)
        return grad.copy()
    raise ValueError(f"unknown clip mode {mode!r}")


def add_gaussian_noise(vec: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Add i.i.d. N(0, sigma^2) per coordinate; sigma = 0 returns a copy."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    vec = np.asarray(vec, dtype=np.float64)
    if sigma == 0.0:
        return vec.copy()
    return vec + rng.normal(0.0, sigma, size=vec.shape)


@dataclass(frozen=True)
class MaskedUpdate:
    """A client's fixed-point update plus its share of the round's masks."""

    client_id: int
    round: int
    masked: np.ndarray
    n_k: int
    weight: float = 1.0


def derive_pairwise_mask(
    seed: int,
    round_no: int,
    length: int,
    codec: FixedPointCodec,
) -> np.ndarray:
    """Deterministic pseudorandom field vector for one edge and round.

    Keyed counter-mode generator: the seed keys a Philox stream and the
    round selects a disjoint counter block, so coordinate i of a given
    (seed, round) is a pure function of (seed, round, i).  Output is
    uniform over [0, p): raw 64-bit words are masked to 61 bits and then
    reduced mod p, which only aliases the single value p itself.
    """
    bitgen = np.random.Philox(key=seed & ((1 << 64) - 1),
                              counter=[0, 0, 0, round_no & ((1 << 64) - 1)])
    raw = np.random.Generator(bitgen).bytes(8 * length)
    words = np.frombuffer(raw, dtype="<u8")
    masked = (words & np.uint64((1 << 61) - 1)).astype(np.int64)
    return np.mod(masked, codec.modulus)


def mask_update(
    client_id: int,
    update: np.ndarray,
    neighbor_seeds: dict[int, int],
    round_no: int,
    codec: FixedPointCodec,
    n_k: int = 1,
    weight: float = 1.0,
    active_neighbors: set[int] | None = None,
) -> MaskedUpdate:
    """Encode a real update and blind it with this client's edge masks.

    For each active neighbor j: the mask of edge (i, j) is added when
    i < j and subtracted when i > j, so summing all clients' outputs
    cancels every mask.  *active_neighbors* restricts masking to neighbors
    participating this round; masking against an absent peer would leave
    an uncancelable residue.
    """
    masked = codec.encode(np.asarray(update, dtype=np.float64) * weight)
    length = masked.shape[0]
    neighbors = set(neighbor_seeds) if active_neighbors is None \
        else set(neighbor_seeds) & set(active_neighbors)
    if active_neighbors is not None:
        missing = set(active_neighbors) - set(neighbor_seeds)
        if missing:
            raise MissingSeed(f"client {client_id} has no seed for {sorted(missing)}")
    for j in sorted(neighbors):
        if j == client_id:
            continue
        mask = derive_pairwise_mask(neighbor_seeds[j], round_no, length, codec)
        if client_id < j:
            masked = codec.add(masked, mask)
        else:
            masked = codec.sub(masked, mask)
    return MaskedUpdate(client_id=client_id, round=round_no, masked=masked,
                        n_k=n_k, weight=weight)


def unmask_aggregate(
    masked_updates: list[MaskedUpdate],
    surviving_set: set[int],
    recovered_seeds: dict[tuple[int, int], int],
    codec: FixedPointCodec,
) -> np.ndarray:
    """Sum survivors' masked updates and strip dropped clients' residues.

    *recovered_seeds* maps each edge (dropped, survivor) — keyed as a
    sorted id pair — to its reconstructed seed.  The survivor applied that
    edge's mask expecting the dropped peer to cancel it, so the aggregator
    re-derives the mask and reverses the survivor's contribution.
    Returns the real-valued sum of the surviving updates.
    """
    updates = [u for u in masked_updates if u.client_id in surviving_set]
    if not updates:
        raise PrivacyError("no surviving updates to aggregate")
    round_no = updates[0].round
    length = updates[0].masked.shape[0]

    total = np.zeros(length, dtype=np.int64)
    for u in updates:
        total = codec.add(total, u.masked)

    for (a, b), seed in sorted(recovered_seeds.items()):
        survivor, dropped = (a, b) if a in surviving_set else (b, a)
        if survivor not in surviving_set or dropped in surviving_set:
            continue
        mask = derive_pairwise_mask(seed, round_no, length, codec)
        if survivor < dropped:
            total = codec.sub(total, mask)  # survivor added it
        else:
            total = codec.add(total, mask)  # survivor subtracted it

    return codec.decode(total, n_summands=max(len(updates), 1))


def build_neighbor_graph(client_ids: list[int], max_degree: int = DEFAULT_MAX_DEGREE) -> dict[int, set[int]]:
    """Ring-plus-chords neighbor graph of degree min(n-1, max_degree).

    Clients are placed on a ring in sorted-id order and connected to the
    nearest ``degree/2`` peers on each side, giving a circulant graph; for
    n small enough this degenerates to the complete graph.
    """
    ids = sorted(client_ids)
    n = len(ids)
    graph: dict[int, set[int]] = {i: set() for i in ids}
    if n < 2:
        return graph
    degree = min(n - 1, max_degree)
    span = max(1, (degree + 1) // 2)
    for pos, cid in enumerate(ids):
        for step in range(1, span + 1):
            peer = ids[(pos + step) % n]
            if peer != cid:
                graph[cid].add(peer)
                graph[peer].add(cid)
    return graph


def graph_degree(graph: dict[int, set[int]]) -> int:
    return max((len(v) for v in graph.values()), default=0)


@dataclass
class SecAggSession:
    """Shared state for secure aggregation across rounds.

    The orchestrator plays the trusted setup: it builds the neighbor
    graph, draws one seed per edge, and distributes Shamir shares of every
    seed to all participants (threshold ``degree // 2 + 1``).  Clients
    then mask independently; the aggregator unmasks at the round barrier,
    reconstructing dropped clients' seeds from survivors' shares.
    """

    client_ids: list[int]
    codec: FixedPointCodec = field(default_factory=FixedPointCodec)
    max_degree: int = DEFAULT_MAX_DEGREE

    def __post_init__(self):
        self.client_ids = sorted(self.client_ids)
        self.graph = build_neighbor_graph(self.client_ids, self.max_degree)
        self.degree = graph_degree(self.graph)
        self.threshold = self.degree // 2 + 1
        self._edge_seeds: dict[tuple[int, int], int] = {}
        self._shares: dict[tuple[int, int], dict[int, SeedShare]] = {}

    def setup(self, rng: np.random.Generator) -> None:
        """Draw edge seeds and deal their shares to every participant."""
        n = len(self.client_ids)
        for i in self.client_ids:
            for j in sorted(self.graph[i]):
                if i < j:
                    edge = (i, j)
                    seed = int(rng.integers(0, self.codec.modulus))
                    self._edge_seeds[edge] = seed
                    shares = shamir_share(
                        seed, n, self.threshold, rng,
                        issuer_id=i, holder_ids=self.client_ids,
                        modulus=self.codec.modulus,
                    )
                    self._shares[edge] = {s.holder_id: s for s in shares}

    def seeds_for(self, client_id: int) -> dict[int, int]:
        if client_id not in self.graph:
            raise PrivacyError(f"unknown client {client_id}")
        seeds = {}
        for j in self.graph[client_id]:
            edge = (min(client_id, j), max(client_id, j))
            if edge not in self._edge_seeds:
                raise MissingSeed(f"edge {edge} has no seed; call setup() first")
            seeds[j] = self._edge_seeds[edge]
        return seeds

    def mask(
        self,
        client_id: int,
        update: np.ndarray,
        round_no: int,
        active_set: set[int],
        n_k: int = 1,
        weight: float = 1.0,
    ) -> MaskedUpdate:
        seeds = self.seeds_for(client_id)
        active_neighbors = set(self.graph[client_id]) & set(active_set)
        return mask_update(
            client_id, update,
            {j: seeds[j] for j in active_neighbors},
            round_no, self.codec, n_k=n_k, weight=weight,
        )

    def aggregate(
        self,
        masked_updates: list[MaskedUpdate],
        active_set: set[int],
        surviving_set: set[int] | None = None,
    ) -> np.ndarray:
        """Unmask the round's sum, recovering seeds for any dropouts.

        *active_set* is who was asked to participate (and therefore whom
        survivors masked against); *surviving_set* is whose updates
        actually arrived.  Shares are collected from survivors only, so a
        round with fewer than ``threshold`` survivors is unrecoverable.
        """
        survivors = set(surviving_set) if surviving_set is not None \
            else {u.client_id for u in masked_updates}
        dropped = set(active_set) - survivors

        recovered: dict[tuple[int, int], int] = {}
        for d in sorted(dropped):
            for j in sorted(self.graph[d] & survivors):
                edge = (min(d, j), max(d, j))
                if edge in recovered:
                    continue
                holder_shares = [
                    self._shares[edge][h]
                    for h in sorted(survivors)
                    if h in self._shares.get(edge, {})
                ]
                if len(holder_shares) < self.threshold:
                    raise UnrecoverableDropout(
                        f"edge {edge}: {len(holder_shares)} shares from survivors, "
                        f"need {self.threshold}"
                    )
                recovered[edge] = shamir_reconstruct(holder_shares[: self.threshold])

        return unmask_aggregate(
            [u for u in masked_updates if u.client_id in survivors],
            survivors, recovered, self.codec,
        )
