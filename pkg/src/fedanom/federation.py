"""Round-based federated orchestration.

Each round the server samples clients, distributes the global parameter
vector, collects locally trained updates (subject to a deterministic
latency model that can drop stragglers), and aggregates with one of three
strategies:

* fedavg: plain mean of the client parameter vectors (optionally
  n_k-weighted),
* qffl: fairness-reweighted dynamic averaging driven by each client's
  local loss raised to the power q,
* fairfedavg: qffl aggregation plus a relevance-score damping applied
  when round participation shrinks, tracked through a bounded
  gradient-history list of update summaries.

Aggregation always iterates updates in client-id order so floating-point
summation is independent of arrival order. With fewer than two arrived
updates the server carries the previous global model forward (single-client
federations lower that bar to one so they stay equivalent to centralized
training).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np

from .autoencoder import (
    AutoencoderConfig,
    TrainConfig,
    build,
    reconstruction_errors,
    train_epochs,
)
from .detector import (
    ConfusionMatrix,
    MetricsReport,
    ThresholdDetector,
    classify,
    compute_threshold,
    confusion,
    metrics,
    min_round_threshold,
)
from .errors import (
    ConfigError,
    DataError,
    DegenerateAggregationError,
    DegenerateLossError,
    DivergenceError,
    ShapeError,
)
from .numerics import (
    AdamState,
    LayerSpec,
    derive_rng,
    derive_seed,
    pack,
    unpack,
)

_STREAM_SAMPLE = 101
_STREAM_LATENCY = 102


class StrategyKind(str, Enum):
    FEDAVG = "fedavg"
    QFFL = "qffl"
    FAIR_FEDAVG = "fairfedavg"


@dataclass(frozen=True)
class StrategyConfig:
    """Aggregation strategy selector plus fairness knobs."""

    kind: StrategyKind = StrategyKind.FEDAVG
    q: float = 0.0
    lipschitz: float | None = None  # None resolves to 1/learning-rate
    client_weights: tuple[float, ...] | None = None
    sample_fraction: float = 1.0
    weighted_mean: bool = False
    relevance_window: int = 64

    def __post_init__(self):
        object.__setattr__(self, "kind", StrategyKind(self.kind))
        if self.q < 0.0:
            raise ConfigError(f"q must be nonnegative, got {self.q}")
        if self.lipschitz is not None and self.lipschitz <= 0.0:
            raise ConfigError(f"Lipschitz estimate must be positive, got {self.lipschitz}")
        if not 0.0 < self.sample_fraction <= 1.0:
            raise ConfigError(
                f"sample fraction must be in (0, 1], got {self.sample_fraction}")
        if self.relevance_window < 1:
            raise ConfigError("relevance window must hold at least one entry")
        if self.client_weights is not None:
            w = tuple(float(x) for x in self.client_weights)
            if any(x <= 0.0 for x in w) or abs(sum(w) - 1.0) > 1e-9:
                raise ConfigError("client weights must be positive and sum to 1")
            object.__setattr__(self, "client_weights", w)


@dataclass
class ClientState:
    """One simulated device: its local data slices and RNG identity.

    `train` holds the scaled normal rows used for local optimization;
    `val`/`attack` are the local evaluation slices (either may be empty).
    """

    client_id: int
    train: np.ndarray
    val: np.ndarray
    attack: np.ndarray
    rng_seed: int = 0
    params: np.ndarray | None = None
    optimizer: AdamState | None = None

    def __post_init__(self):
        self.train = np.asarray(self.train, dtype=np.float64)
        self.val = np.asarray(self.val, dtype=np.float64)
        self.attack = np.asarray(self.attack, dtype=np.float64)
        if self.train.ndim != 2 or self.train.shape[0] == 0:
            raise DataError(
                f"client {self.client_id} has no training rows")

    @property
    def n_samples(self) -> int:
        return self.train.shape[0]


@dataclass(frozen=True)
class ClientUpdate:
    """What a client sends back after one local round."""

    client_id: int
    round_index: int
    params: np.ndarray
    local_loss: float
    n_samples: int
    local_threshold: float

    def __post_init__(self):
        object.__setattr__(self, "params", np.asarray(self.params, dtype=np.float64))
        if not math.isfinite(self.local_loss):
            raise DataError(
                f"client {self.client_id} reported non-finite loss")


class GHEntry(NamedTuple):
    round_index: int
    summary: float


@dataclass
class ServerState:
    """Global model plus the FairFedAvg bookkeeping carried across rounds."""

    global_params: np.ndarray
    round_index: int = 0
    gradient_history: tuple[GHEntry, ...] = ()
    hs_accumulator: tuple[float, ...] = ()
    prev_participants: int = 0
    last_alpha: float = 1.0
    last_carried: bool = False

    def __post_init__(self):
        self.global_params = np.asarray(self.global_params, dtype=np.float64)


@dataclass(frozen=True)
class LatencyModel:
    """Deterministic virtual arrival delays, with an optional drop deadline.

    `delays` is the base per-client delay; `per_round` overrides it for
    specific (round, client) pairs; `jitter` adds a seeded uniform draw on
    top. Updates arriving after `drop_after` are excluded from that round's
    aggregation.
    """

    delays: dict[int, float] = field(default_factory=dict)
    per_round: dict[int, dict[int, float]] = field(default_factory=dict)
    jitter: float = 0.0
    drop_after: float | None = None


def sample_clients(all_ids: Sequence[int], fraction: float,
                   rng: np.random.Generator) -> list[int]:
    """ceil(fraction * K) distinct ids, uniform without replacement,
    sorted ascending."""
    ids = sorted(all_ids)
    if not ids:
        raise DataError("cannot sample from an empty client set")
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"sample fraction must be in (0, 1], got {fraction}")
    k = math.ceil(fraction * len(ids))
    chosen = rng.choice(len(ids), size=k, replace=False)
    return sorted(ids[int(i)] for i in chosen)


def assign_latencies(model: LatencyModel | None, client_ids: Sequence[int],
                     round_index: int, seed: int
                     ) -> tuple[list[tuple[int, float]], list[int]]:
    """Virtual arrival times for one round.

    Returns (arrival order as (client, time) pairs, active ids). All
    randomness comes from (seed, round), so replays are identical.
    """
    if model is None:
        model = LatencyModel()
    overrides = model.per_round.get(round_index, {})
    jit_rng = (derive_rng(seed, _STREAM_LATENCY, round_index)
               if model.jitter > 0.0 else None)
    times = []
    for cid in sorted(client_ids):
        t = float(overrides.get(cid, model.delays.get(cid, 0.0)))
        if jit_rng is not None:
            t += model.jitter * jit_rng.random()
        times.append((cid, t))
    order = sorted(times, key=lambda p: (p[1], p[0]))
    active = sorted(cid for cid, t in order
                    if model.drop_after is None or t <= model.drop_after)
    return order, active


def local_round(client: ClientState, global_params: np.ndarray,
                specs: Sequence[LayerSpec], epochs: int, tc: TrainConfig,
                round_index: int) -> ClientUpdate:
    """Load the global model, train locally, calibrate the local threshold.

    The optimizer state and the LR schedule restart every round; the
    shuffle/dropout stream is derived from (client seed, round) so runs
    replay exactly.
    """
    if epochs < 1:
        raise ConfigError(f"local epochs must be >= 1, got {epochs}")
    global_params = np.asarray(global_params, dtype=np.float64)
    params = unpack(global_params, specs)
    round_tc = replace(tc, epochs=epochs,
                       shuffle_seed=derive_seed(client.rng_seed, round_index))
    state = round_tc.adam_state(global_params.shape[0])
    try:
        trained, end_state, trace = train_epochs(params, client.train,
                                                 round_tc, state)
    except DivergenceError as err:
        err.client_id = client.client_id
        err.args = (f"client {client.client_id}: {err.args[0]}",)
        raise
    errors = reconstruction_errors(trained, client.train)
    threshold = compute_threshold(errors)
    flat = pack(trained)
    client.params = flat
    client.optimizer = end_state
    return ClientUpdate(client.client_id, round_index, flat,
                        float(trace[-1]), client.n_samples, float(threshold))


def _check_update_lengths(updates: Sequence[ClientUpdate]) -> None:
    lengths = {u.params.shape[0] for u in updates}
    if len(lengths) > 1:
        raise ShapeError(f"update vectors differ in length: {sorted(lengths)}")


def fedavg_aggregate(updates: Sequence[ClientUpdate],
                     cfg: StrategyConfig | None = None) -> np.ndarray:
    """Plain mean of the client parameter vectors, or the n_k-weighted
    mean when the weighted flag is set."""
    if not updates:
        raise DataError("cannot aggregate zero updates")
    ordered = sorted(updates, key=lambda u: u.client_id)
    _check_update_lengths(ordered)
    stack = np.stack([u.params for u in ordered])
    if cfg is not None and cfg.weighted_mean:
        weights = np.array([u.n_samples for u in ordered], dtype=np.float64)
        weights /= weights.sum()
        return weights @ stack
    return stack.mean(axis=0)


def qffl_deltas(global_params: np.ndarray, update: ClientUpdate, q: float,
                lipschitz: float) -> tuple[np.ndarray, float]:
    """Reweighted step and Lipschitz-bound term for one update:
    dw = L (w - w_k), delta = F^q dw, h = q F^(q-1) |dw|^2 + L F^q."""
    w = np.asarray(global_params, dtype=np.float64)
    wk = np.asarray(update.params, dtype=np.float64)
    if w.shape != wk.shape:
        raise ShapeError(
            f"update length {wk.shape} does not match global {w.shape}")
    if lipschitz <= 0.0:
        raise ConfigError(f"Lipschitz estimate must be positive, got {lipschitz}")
    if q < 0.0:
        raise ConfigError(f"q must be nonnegative, got {q}")
    loss = float(update.local_loss)
    if q > 0.0 and loss <= 0.0:
        raise DegenerateLossError(
            f"client {update.client_id} has loss {loss}; q = {q} needs a "
            f"positive local loss")
    dw = lipschitz * (w - wk)
    delta = (loss ** q) * dw
    curvature = q * loss ** (q - 1.0) * float(dw @ dw) if q > 0.0 else 0.0
    h = curvature + lipschitz * loss ** q
    return delta, h


def qffl_aggregate(global_params: np.ndarray,
                   deltas: Sequence[tuple[np.ndarray, float]]) -> np.ndarray:
    """w' = w - sum(delta_k) / sum(h_k)."""
    if not deltas:
        raise DataError("cannot aggregate zero deltas")
    w = np.asarray(global_params, dtype=np.float64)
    total_delta = np.zeros_like(w)
    total_h = 0.0
    for delta, h in deltas:
        delta = np.asarray(delta, dtype=np.float64)
        if delta.shape != w.shape:
            raise ShapeError(
                f"delta length {delta.shape} does not match global {w.shape}")
        total_delta += delta
        total_h += h
    if total_h <= 0.0:
        raise DegenerateAggregationError(
            f"aggregation denominator is {total_h}")
    return w - total_delta / total_h


def qffl_objective(updates: Sequence[ClientUpdate], q: float,
                   weights: Sequence[float] | None = None) -> float:
    """Fairness objective sum_k p_k / (q+1) * F_k^(q+1); p_k defaults to
    the sample-count shares n_k / sum(n)."""
    if not updates:
        raise DataError("objective needs at least one update")
    ordered = sorted(updates, key=lambda u: u.client_id)
    if weights is None:
        total = sum(u.n_samples for u in ordered)
        p = [u.n_samples / total for u in ordered]
    else:
        p = [float(x) for x in weights]
        if len(p) != len(ordered):
            raise ShapeError(
                f"{len(p)} weights for {len(ordered)} updates")
    return sum(pk / (q + 1.0) * u.local_loss ** (q + 1.0)
               for pk, u in zip(p, ordered))


def rms_summary(v: np.ndarray) -> float:
    """Scalar summary of an update vector: ||v||_2 / sqrt(d)."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        return 0.0
    return float(np.linalg.norm(v) / math.sqrt(v.size))


def relevance_score(window: Sequence[float], current: float) -> float:
    """Softmax share of the current summary against the history window."""
    values = [float(s) for s in window] + [float(current)]
    peak = max(values)
    exps = [math.exp(v - peak) for v in values]
    return exps[-1] / sum(exps)


def apply_relevance(alpha: float, params: np.ndarray) -> np.ndarray:
    """Uniformly damp the aggregated vector by the relevance score."""
    if not 0.0 < alpha <= 1.0:
        raise ConfigError(f"relevance score must be in (0, 1], got {alpha}")
    return alpha * np.asarray(params, dtype=np.float64)


def fair_round(server: ServerState, updates: Sequence[ClientUpdate],
               cfg: StrategyConfig) -> ServerState:
    """One FairFedAvg aggregation step.

    Branches: stable (or grown) participation with at least two updates
    applies the plain reweighted update; shrunken participation follows it
    with the relevance damping, scored against the previous round's stored
    update summaries; fewer than two updates carries the global model
    forward unchanged. Summaries of every received update are appended to
    the gradient history either way (bounded by the configured window).
    """
    if cfg.lipschitz is None:
        raise ConfigError("fair_round needs a concrete Lipschitz estimate")
    ordered = sorted(updates, key=lambda u: u.client_id)
    _check_update_lengths(ordered)
    current_round = server.round_index + 1
    deltas = [qffl_deltas(server.global_params, u, cfg.q, cfg.lipschitz)
              for u in ordered]
    summaries = [rms_summary(d) for d, _ in deltas]
    history = list(server.gradient_history)
    history.extend(GHEntry(current_round, s) for s in summaries)
    history = history[-cfg.relevance_window:]
    count = len(ordered)
    alpha = 1.0
    if count < 2:
        new_global = server.global_params.copy()
        carried = True
    else:
        new_global = qffl_aggregate(server.global_params, deltas)
        carried = False
        if 0 < server.prev_participants and count < server.prev_participants:
            previous = [e.summary for e in history
                        if e.round_index == server.round_index]
            alpha = relevance_score(previous, rms_summary(new_global))
            new_global = apply_relevance(alpha, new_global)
    return ServerState(
        global_params=new_global,
        round_index=current_round,
        gradient_history=tuple(history),
        hs_accumulator=tuple(h for _, h in deltas),
        prev_participants=count,
        last_alpha=alpha,
        last_carried=carried,
    )


@dataclass(frozen=True)
class ClientRoundRecord:
    client_id: int
    sampled: bool
    participated: bool
    local_loss: float | None
    local_threshold: float | None


@dataclass
class RoundTrace:
    round_index: int
    records: list[ClientRoundRecord]
    alpha: float
    carried_forward: bool
    global_params: np.ndarray
    global_norm: float
    threshold_running_min: float | None
    pooled_confusion: ConfusionMatrix | None
    pooled_metrics: MetricsReport | None
    per_client_eval: dict[int, tuple[ConfusionMatrix, MetricsReport]]


@dataclass
class FederationResult:
    final_params: np.ndarray
    detector: ThresholdDetector
    rounds: list[RoundTrace]
    collected_thresholds: list[float]
    final_confusion: ConfusionMatrix | None
    final_metrics: MetricsReport | None
    final_per_client: dict[int, tuple[ConfusionMatrix, MetricsReport]]
    mean_round_accuracy: float | None


def _evaluate_global(global_params: np.ndarray, specs: Sequence[LayerSpec],
                     clients: Sequence[ClientState],
                     detector: ThresholdDetector):
    """Per-client confusion/metrics of the global model on local
    validation + attack rows, plus the pooled (summed) confusion."""
    params = unpack(global_params, specs)
    per_client: dict[int, tuple[ConfusionMatrix, MetricsReport]] = {}
    pooled = ConfusionMatrix(0, 0, 0, 0)
    for client in sorted(clients, key=lambda c: c.client_id):
        n_val, n_att = client.val.shape[0], client.attack.shape[0]
        if n_val + n_att == 0:
            continue
        data = np.vstack([client.val, client.attack])
        pred = classify(detector, reconstruction_errors(params, data))
        truth = np.concatenate([np.zeros(n_val, bool), np.ones(n_att, bool)])
        cm = confusion(pred, truth)
        per_client[client.client_id] = (cm, metrics(cm))
        pooled = pooled + cm
    if pooled.total == 0:
        return per_client, None, None
    return per_client, pooled, metrics(pooled)


def run_federated(clients: Sequence[ClientState],
                  model_cfg: AutoencoderConfig,
                  strategy: StrategyConfig,
                  rounds: int,
                  epochs_per_round: int,
                  base_train: TrainConfig | None = None,
                  latency: LatencyModel | None = None,
                  master_seed: int = 0,
                  min_participation: int | None = None) -> FederationResult:
    """Drive T federated rounds and evaluate the global model each round.

    Per-round evaluation classifies with the running minimum of every
    local threshold seen so far; the returned detector is the minimum over
    all (round, client) thresholds. Everything is deterministic given the
    master seed, the client seeds and the configs.
    """
    if rounds < 1:
        raise ConfigError(f"need at least one round, got {rounds}")
    if epochs_per_round < 1:
        raise ConfigError(
            f"need at least one local epoch, got {epochs_per_round}")
    if not clients:
        raise DataError("federation needs at least one client")
    ids = [c.client_id for c in clients]
    if len(set(ids)) != len(ids):
        raise DataError(f"duplicate client ids: {sorted(ids)}")
    by_id = {c.client_id: c for c in clients}
    if base_train is None:
        base_train = TrainConfig(epochs=epochs_per_round)
    lipschitz = (strategy.lipschitz if strategy.lipschitz is not None
                 else 1.0 / base_train.schedule.base_rate)
    strategy = replace(strategy, lipschitz=lipschitz)
    min_part = (min(2, len(clients)) if min_participation is None
                else min_participation)
    specs = model_cfg.layer_specs()
    server = ServerState(global_params=pack(build(model_cfg)))
    collected: list[float] = []
    traces: list[RoundTrace] = []
    for t in range(1, rounds + 1):
        sample_rng = derive_rng(master_seed, _STREAM_SAMPLE, t)
        sampled = sample_clients(ids, strategy.sample_fraction, sample_rng)
        _, active = assign_latencies(latency, sampled, t, master_seed)
        updates = [local_round(by_id[cid], server.global_params, specs,
                               epochs_per_round, base_train, t)
                   for cid in active]
        if strategy.kind is StrategyKind.FAIR_FEDAVG:
            server = fair_round(server, updates, strategy)
            alpha, carried = server.last_alpha, server.last_carried
        else:
            alpha = 1.0
            if len(updates) < max(min_part, 1):
                new_global = server.global_params.copy()
                carried = True
            else:
                carried = False
                if strategy.kind is StrategyKind.QFFL:
                    ordered = sorted(updates, key=lambda u: u.client_id)
                    deltas = [qffl_deltas(server.global_params, u,
                                          strategy.q, lipschitz)
                              for u in ordered]
                    new_global = qffl_aggregate(server.global_params, deltas)
                else:
                    new_global = fedavg_aggregate(updates, strategy)
            server = ServerState(new_global, t, server.gradient_history,
                                 tuple(), len(updates), alpha, carried)
        by_update = {u.client_id: u for u in updates}
        collected.extend(u.local_threshold
                         for u in sorted(updates, key=lambda u: u.client_id))
        detector = min_round_threshold(collected) if collected else None
        if detector is not None:
            per_client, pooled_cm, pooled_metrics = _evaluate_global(
                server.global_params, specs, clients, detector)
        else:
            per_client, pooled_cm, pooled_metrics = {}, None, None
        records = []
        for cid in sorted(ids):
            upd = by_update.get(cid)
            records.append(ClientRoundRecord(
                client_id=cid,
                sampled=cid in sampled,
                participated=upd is not None,
                local_loss=upd.local_loss if upd else None,
                local_threshold=upd.local_threshold if upd else None,
            ))
        traces.append(RoundTrace(
            round_index=t,
            records=records,
            alpha=alpha,
            carried_forward=carried,
            global_params=server.global_params.copy(),
            global_norm=float(np.linalg.norm(server.global_params)),
            threshold_running_min=(detector.threshold if detector else None),
            pooled_confusion=pooled_cm,
            pooled_metrics=pooled_metrics,
            per_client_eval=per_client,
        ))
    if not collected:
        raise DataError(
            "no client update ever arrived; cannot calibrate a detector")
    final_detector = min_round_threshold(collected)
    accuracies = [tr.pooled_metrics.accuracy for tr in traces
                  if tr.pooled_metrics is not None
                  and tr.pooled_metrics.accuracy is not None]
    last = traces[-1]
    return FederationResult(
        final_params=server.global_params.copy(),
        detector=final_detector,
        rounds=traces,
        collected_thresholds=collected,
        final_confusion=last.pooled_confusion,
        final_metrics=last.pooled_metrics,
        final_per_client=last.per_client_eval,
        mean_round_accuracy=(float(np.mean(accuracies)) if accuracies else None),
    )
