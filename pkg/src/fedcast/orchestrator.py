"""Round-based federated training plus the standalone/centralized baselines.

Each round the server samples clients, collects their clipped (optionally
noised, optionally masked) model deltas, averages them, applies the step,
and anchors the new global snapshot in the ledger for clients to verify.
The two baselines reuse the same per-round training loop so a single
client's federated run degenerates to exactly its centralized run.

All randomness flows through streams keyed by (seed, purpose, round,
participant), so results are bit-reproducible and independent of client
execution order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import ledger as ledger_mod
from .data import ClientDataset, DataConfig, FeatureRow, Normalizer, PooledDataset, rows_to_arrays
from .fixedpoint import FixedPointCodec
from .ledger import AlertInconsistency, Chain, ContentStore, GasTariff
from .model import (
    Gradient,
    HyperParams,
    MLPParams,
    flatten,
    forward,
    init_params,
    mse_loss,
    serialize_params,
    sgd_step,
    train,
)
from .privacy import (
    DPConfig,
    NOISE_GLOBAL,
    NOISE_PER_CLIENT,
    SecAggSession,
    add_gaussian_noise,
    clip_gradient,
)

MODE_STANDALONE = "standalone"
MODE_CENTRALIZED = "centralized"
MODE_FEDERATED = "federated"
MODES = (MODE_STANDALONE, MODE_CENTRALIZED, MODE_FEDERATED)

WEIGHT_UNIFORM = "uniform"
WEIGHT_SAMPLES = "sample_weighted"

# Stream tags keep the purpose-specific rng streams disjoint.
_TAG_TRAIN = 1
_TAG_NOISE = 2
_TAG_SAMPLE = 3
_TAG_SECAGG = 4
_TAG_INIT = 5


class OrchestratorError(Exception):
    pass


class EmptyClientData(OrchestratorError):
    pass


class EmptyAggregation(OrchestratorError):
    pass


class EmptyInput(OrchestratorError):
    pass


class ZeroDemand(OrchestratorError):
    pass


class ZeroBaseline(OrchestratorError):
    pass


@dataclass
class ExperimentConfig:
    mode: str = MODE_FEDERATED
    rounds: int = 100
    client_fraction: float = 1.0
    dp: DPConfig = field(default_factory=DPConfig)
    secagg_enabled: bool = True
    weighting: str = WEIGHT_UNIFORM
    hyper: HyperParams = field(default_factory=HyperParams)
    seed: int = 0
    ledger_enabled: bool = True
    tariff: str = "Ethereum"
    hidden_layers: tuple[int, ...] = (32, 16)
    data: DataConfig = field(default_factory=DataConfig)
    codec: FixedPointCodec = field(default_factory=FixedPointCodec)
    dataset_path: str | None = None
    # Simulated mid-round client failures: round -> store ids that drop
    # after masking but before upload.
    dropout_schedule: dict[int, set[int]] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not 0 < self.client_fraction <= 1:
            raise ValueError("client_fraction must be in (0, 1]")
        if self.weighting not in (WEIGHT_UNIFORM, WEIGHT_SAMPLES):
            raise ValueError(f"unknown weighting {self.weighting!r}")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")

    def describe(self) -> dict:
        return {
            "mode": self.mode,
            "rounds": self.rounds,
            "client_fraction": self.client_fraction,
            "dp": self.dp.describe(),
            "secagg_enabled": self.secagg_enabled,
            "weighting": self.weighting,
            "hyper": self.hyper.describe(),
            "seed": self.seed,
            "ledger_enabled": self.ledger_enabled,
            "tariff": self.tariff,
            "hidden_layers": list(self.hidden_layers),
            "data": self.data.describe(),
            "codec": self.codec.describe(),
            "dataset_path": self.dataset_path,
            "dropout_schedule": {
                str(r): sorted(ids) for r, ids in sorted(self.dropout_schedule.items())
            },
        }


@dataclass
class RoundReport:
    round: int
    participants: list[int]
    cid: str | None
    client_losses: dict[int, float]
    update_norm: float
    dp_applied: bool
    gas_charged_gwei: float
    codec: dict | None = None

    def to_record(self) -> dict:
        return {
            "round": self.round,
            "participants": self.participants,
            "cid": self.cid,
            "client_losses": {str(k): v for k, v in sorted(self.client_losses.items())},
            "update_norm": self.update_norm,
            "dp_applied": self.dp_applied,
            "gas_charged_gwei": self.gas_charged_gwei,
            "codec": self.codec,
        }


@dataclass
class ModeResult:
    mode: str
    per_store_mse: dict[int, float]
    per_store_oe: dict[int, float]
    pooled_mse: float | None = None

    @property
    def mean_mse(self) -> float:
        return float(np.mean(list(self.per_store_mse.values())))

    @property
    def mean_oe(self) -> float:
        return float(np.mean(list(self.per_store_oe.values())))

    def to_record(self) -> dict:
        rec = {
            "mode": self.mode,
            "per_store_mse": {str(k): v for k, v in sorted(self.per_store_mse.items())},
            "per_store_oe": {str(k): v for k, v in sorted(self.per_store_oe.items())},
            "mean_mse": self.mean_mse,
            "mean_oe": self.mean_oe,
        }
        if self.pooled_mse is not None:
            rec["pooled_mse"] = self.pooled_mse
        return rec


@dataclass
class ExperimentReport:
    results: dict[str, ModeResult]
    waste_reduction_overall: float | None
    waste_reduction_per_store: dict[int, float]
    gas_table: list[dict]
    config: dict
    note: str = "mse is reported per store in units of that store's training-split target variance"

    def to_record(self) -> dict:
        return {
            "note": self.note,
            "results": {m: r.to_record() for m, r in sorted(self.results.items())},
            "waste_reduction_overall": self.waste_reduction_overall,
            "waste_reduction_per_store": {
                str(k): v for k, v in sorted(self.waste_reduction_per_store.items())
            },
            "gas_table": self.gas_table,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        lines = ["mode,store_id,mse,oe"]
        for mode in sorted(self.results):
            result = self.results[mode]
            for sid in sorted(result.per_store_mse):
                lines.append(
                    f"{mode},{sid},{result.per_store_mse[sid]!r},{result.per_store_oe[sid]!r}"
                )
            lines.append(f"{mode},mean,{result.mean_mse!r},{result.mean_oe!r}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# rng plumbing
# ---------------------------------------------------------------------------


def _stream(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(tuple(int(k) for k in key)))


def _train_rng(seed: int, round_no: int, store_key: tuple[int, ...]) -> np.random.Generator:
    return _stream(seed, _TAG_TRAIN, round_no, *store_key)


def _noise_rng(seed: int, round_no: int, client_id: int) -> np.random.Generator:
    return _stream(seed, _TAG_NOISE, round_no, client_id)


def _sample_rng(seed: int, round_no: int) -> np.random.Generator:
    return _stream(seed, _TAG_SAMPLE, round_no)


# ---------------------------------------------------------------------------
# Protocol pieces
# ---------------------------------------------------------------------------


def sample_clients(client_ids: list[int], fraction: float, rng: np.random.Generator) -> list[int]:
    """Uniform sample without replacement, size max(1, half-up round)."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    ids = sorted(client_ids)
    size = max(1, int(math.floor(fraction * len(ids) + 0.5)))
    size = min(size, len(ids))
    picked = rng.permutation(len(ids))[:size]
    return sorted(ids[i] for i in picked)


def local_update(
    client: ClientDataset,
    global_params: MLPParams,
    hyper: HyperParams,
    rng: np.random.Generator,
) -> Gradient:
    """Local epochs of SGD; report (global - local) / lr as the update."""
    if not client.train:
        raise EmptyClientData(f"store {client.store_id} has no training rows")
    x, y = rows_to_arrays(client.train)
    local = train(global_params, x, y, hyper, rng)
    delta = (flatten(global_params) - flatten(local)) / hyper.learning_rate
    return Gradient(values=delta, n_k=len(client.train))


def aggregate(updates: list[Gradient], weighting: str = WEIGHT_UNIFORM) -> np.ndarray:
    """Combine client updates: plain mean or sample-count weighted mean."""
    if not updates:
        raise EmptyAggregation("no updates to aggregate")
    vectors = np.stack([u.values for u in updates])
    if weighting == WEIGHT_UNIFORM:
        return vectors.mean(axis=0)
    if weighting == WEIGHT_SAMPLES:
        counts = np.array([u.n_k for u in updates], dtype=np.float64)
        return (vectors * (counts / counts.sum())[:, None]).sum(axis=0)
    raise ValueError(f"unknown weighting {weighting!r}")


def compute_oe(preds: np.ndarray, actuals: np.ndarray) -> float:
    """Over-provisioning: positive forecast excess relative to total demand."""
    preds = np.asarray(preds, dtype=np.float64)
    actuals = np.asarray(actuals, dtype=np.float64)
    if preds.shape != actuals.shape or preds.size == 0:
        raise EmptyInput("need equal-length non-empty prediction/actual vectors")
    total = float(actuals.sum())
    if total <= 0:
        raise ZeroDemand("actual demand sums to zero")
    excess = np.maximum(preds - actuals, 0.0)
    return float(excess.sum() / total)


def waste_reduction(oe_baseline: float, oe_treatment: float) -> float:
    if oe_baseline <= 0:
        raise ZeroBaseline("baseline over-provisioning must be positive")
    return (oe_baseline - oe_treatment) / oe_baseline


def _evaluate_rows(
    params: MLPParams,
    rows: list[FeatureRow],
    rows_normalizer: Normalizer,
    store_std: float,
    slope: float,
) -> tuple[float, float]:
    """Per-store (mse, oe): mse in store-train-std units, oe in sales units."""
    x, y = rows_to_arrays(rows)
    preds = forward(params, x, slope=slope)
    pred_sales = rows_normalizer.invert(preds)
    actual_sales = rows_normalizer.invert(y)
    mse = float(np.mean((pred_sales - actual_sales) ** 2)) / (store_std**2)
    oe = compute_oe(pred_sales, actual_sales)
    return mse, oe


def _store_stds(clients: list[ClientDataset]) -> dict[int, float]:
    return {c.store_id: c.target_normalizer.std for c in clients}


def _architecture(clients: list[ClientDataset], hidden: tuple[int, ...]) -> list[int]:
    input_dim = clients[0].train[0].x.shape[0]
    return [input_dim, *hidden, 1]


def _init_global(config: ExperimentConfig, clients: list[ClientDataset]) -> MLPParams:
    arch = _architecture(clients, config.hidden_layers)
    init_seed = int(_stream(config.seed, _TAG_INIT).integers(0, 2**63))
    return init_params(arch, init_seed)


# ---------------------------------------------------------------------------
# Mode runs
# ---------------------------------------------------------------------------


def run_standalone(
    config: ExperimentConfig, clients: list[ClientDataset]
) -> tuple[dict[int, MLPParams], ModeResult]:
    """Train one isolated model per store on its own history.

    The training budget mirrors the federated run: rounds * local_epochs
    passes over the store's own rows, with the same per-round rng streams.
    """
    stds = _store_stds(clients)
    models: dict[int, MLPParams] = {}
    per_mse: dict[int, float] = {}
    per_oe: dict[int, float] = {}
    for client in clients:
        if not client.train:
            raise EmptyClientData(f"store {client.store_id} has no training rows")
        params = _init_global(config, clients)
        x, y = rows_to_arrays(client.train)
        for round_no in range(1, config.rounds + 1):
            rng = _train_rng(config.seed, round_no, (client.store_id,))
            params = train(params, x, y, config.hyper, rng)
        models[client.store_id] = params
        per_mse[client.store_id], per_oe[client.store_id] = _evaluate_rows(
            params, client.test, client.target_normalizer,
            stds[client.store_id], config.hyper.leaky_slope,
        )
    return models, ModeResult(MODE_STANDALONE, per_mse, per_oe)


def run_centralized(
    config: ExperimentConfig,
    clients: list[ClientDataset],
    pooled: PooledDataset,
) -> tuple[MLPParams, ModeResult]:
    """Train a single model on the pooled rows under the shared normalizer."""
    stds = _store_stds(clients)
    params = _init_global(config, clients)
    x, y = rows_to_arrays(pooled.dataset.train)
    store_key = tuple(sorted(pooled.test_by_store))
    for round_no in range(1, config.rounds + 1):
        rng = _train_rng(config.seed, round_no, store_key)
        params = train(params, x, y, config.hyper, rng)
    extra = config.total_baseline_epochs - config.rounds * config.hyper.local_epochs
    if extra > 0:
        rng = _train_rng(config.seed, config.rounds + 1, store_key)
        params = train(params, x, y, config.hyper, rng, epochs=extra)

    per_mse: dict[int, float] = {}
    per_oe: dict[int, float] = {}
    for sid in sorted(pooled.test_by_store):
        per_mse[sid], per_oe[sid] = _evaluate_rows(
            params, pooled.test_by_store[sid], pooled.dataset.target_normalizer,
            stds[sid], config.hyper.leaky_slope,
        )
    px, py = rows_to_arrays(pooled.dataset.test)
    pooled_preds = forward(params, px, slope=config.hyper.leaky_slope)
    pooled_mse = mse_loss(pooled_preds, py)
    return params, ModeResult(MODE_CENTRALIZED, per_mse, per_oe, pooled_mse=pooled_mse)


@dataclass
class FederatedRun:
    params: MLPParams
    rounds: list[RoundReport]
    result: ModeResult
    chain: Chain | None
    store: ContentStore | None


def run_federated(
    config: ExperimentConfig,
    clients: list[ClientDataset],
    tariff: GasTariff | None = None,
    cas_root=None,
    serve_hook=None,
) -> FederatedRun:
    """Algorithm: sample, local-train, clip, (noise), (mask), average, step.

    With masking enabled the server only ever handles masked vectors and
    their unmasked sum; the per-client plain path below is the σ=0,
    masking-off special case of the same arithmetic.  Each round's new
    global model is content-addressed, anchored on the chain, and
    re-verified by every participant against the anchor (*serve_hook*
    lets tests corrupt the served bytes).  A client listed in the dropout
    schedule masks its update but never uploads it, exercising seed
    recovery.
    """
    if not clients:
        raise EmptyClientData("no clients")
    by_id = {c.store_id: c for c in clients}
    client_ids = sorted(by_id)
    stds = _store_stds(clients)
    dp = config.dp

    global_params = _init_global(config, clients)

    session = None
    if config.secagg_enabled:
        config.codec.check_capacity(len(client_ids))
        session = SecAggSession(client_ids, codec=config.codec)
        session.setup(_stream(config.seed, _TAG_SECAGG))

    chain = Chain() if config.ledger_enabled else None
    store = ContentStore(cas_root) if config.ledger_enabled else None

    reports: list[RoundReport] = []
    for round_no in range(1, config.rounds + 1):
        active = sample_clients(client_ids, config.client_fraction, _sample_rng(config.seed, round_no))
        dropped = set(config.dropout_schedule.get(round_no, set())) & set(active)
        survivors = [cid for cid in active if cid not in dropped]

        prepared = {}
        losses: dict[int, float] = {}
        for cid in active:
            client = by_id[cid]
            if not client.train:
                raise EmptyClientData(f"store {cid} has no training rows")
            rng = _train_rng(config.seed, round_no, (cid,))
            grad = local_update(client, global_params, config.hyper, rng)
            vec = grad.values
            if math.isfinite(dp.clip_threshold):
                vec = clip_gradient(vec, dp.clip_threshold, dp.clip_mode)
            if dp.noise_point == NOISE_PER_CLIENT and dp.noise_std > 0:
                vec = add_gaussian_noise(vec, dp.noise_std, _noise_rng(config.seed, round_no, cid))
            weight = float(grad.n_k) if config.weighting == WEIGHT_SAMPLES else 1.0
            prepared[cid] = (vec, grad.n_k, weight)

            x, y = rows_to_arrays(client.train)
            local = sgd_step(global_params, vec, config.hyper.learning_rate)
            losses[cid] = mse_loss(forward(local, x, slope=config.hyper.leaky_slope), y)

        total_weight = sum(prepared[cid][2] for cid in survivors)
        if total_weight == 0:
            raise EmptyAggregation(f"round {round_no}: no surviving updates")

        if session is not None:
            masked = [
                session.mask(cid, vec, round_no, set(active), n_k=n_k, weight=weight)
                for cid, (vec, n_k, weight) in sorted(prepared.items())
            ]
            received = [m for m in masked if m.client_id not in dropped]
            summed = session.aggregate(received, set(active), set(survivors))
        else:
            summed = np.zeros_like(flatten(global_params))
            for cid in survivors:
                vec, _, weight = prepared[cid]
                summed = summed + vec * weight

        delta = summed / total_weight
        if dp.noise_point == NOISE_GLOBAL and dp.noise_std > 0:
            delta = add_gaussian_noise(delta, dp.noise_std, _noise_rng(config.seed, round_no, 0))

        global_params = sgd_step(global_params, delta, config.hyper.learning_rate)

        cid_hex = None
        gas = 0.0
        if chain is not None and store is not None:
            blob = serialize_params(global_params)
            cid_hex = store.put(blob)
            chain.append_block(cid_hex, round_no, meta=f"clients={len(survivors)}")
            served = serve_hook(blob, round_no) if serve_hook is not None else blob
            for client_id in active:
                if not ledger_mod.verify_model(served, round_no, chain):
                    raise AlertInconsistency(
                        f"round {round_no}: client {client_id} saw cid "
                        f"{ledger_mod.cid_of(served)[:12]}.. but chain anchors {cid_hex[:12]}.."
                    )
            if tariff is not None:
                gas = tariff.tx_cost

        reports.append(
            RoundReport(
                round=round_no,
                participants=list(active),
                cid=cid_hex,
                client_losses=losses,
                update_norm=float(np.linalg.norm(delta)),
                dp_applied=dp.noise_std > 0 or math.isfinite(dp.clip_threshold),
                gas_charged_gwei=gas,
                codec=config.codec.describe() if session is not None else None,
            )
        )

    per_mse: dict[int, float] = {}
    per_oe: dict[int, float] = {}
    for cid in client_ids:
        client = by_id[cid]
        per_mse[cid], per_oe[cid] = _evaluate_rows(
            global_params, client.test, client.target_normalizer,
            stds[cid], config.hyper.leaky_slope,
        )
    result = ModeResult(MODE_FEDERATED, per_mse, per_oe)
    return FederatedRun(global_params, reports, result, chain, store)


def compare_modes(
    config: ExperimentConfig,
    clients: list[ClientDataset],
    pooled: PooledDataset,
    tariff: GasTariff | None = None,
    cas_root=None,
) -> tuple[ExperimentReport, FederatedRun]:
    """Run all three modes on shared partitions and seeds."""
    _, standalone = run_standalone(config, clients)
    _, centralized = run_centralized(config, clients, pooled)
    fed_run = run_federated(config, clients, tariff=tariff, cas_root=cas_root)
    federated = fed_run.result

    per_store_wr: dict[int, float] = {}
    for sid in standalone.per_store_oe:
        base = standalone.per_store_oe[sid]
        if base > 0:
            per_store_wr[sid] = waste_reduction(base, federated.per_store_oe[sid])
    overall = (
        waste_reduction(standalone.mean_oe, federated.mean_oe)
        if standalone.mean_oe > 0
        else None
    )

    n_tx = fed_run.chain.n_tx if fed_run.chain is not None else 0
    gas_table = ledger_mod.gas_report(n_tx)

    report = ExperimentReport(
        results={
            MODE_STANDALONE: standalone,
            MODE_CENTRALIZED: centralized,
            MODE_FEDERATED: federated,
        },
        waste_reduction_overall=overall,
        waste_reduction_per_store=per_store_wr,
        gas_table=gas_table,
        config=config.describe(),
    )
    return report, fed_run
