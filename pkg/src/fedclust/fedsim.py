"""Deterministic federated-learning orchestration.

Three topologies over the same per-device datasets:

- ``run_federated``: every dataset is its own FL client (flat, "no groups");
- ``run_three_tier``: devices are pooled per partition group into aggregator
  clients, which run the same round loop; the resulting single global model
  is what every device would receive for inference;
- ``run_centralized``: all training data pooled, one local training run.

Every source of randomness is derived from the experiment seed, the round
index and the client index, so results are reproducible regardless of how
client work is scheduled.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import DeviceDataset, pool_datasets
from .model import (
    AdamState,
    EvalReport,
    ModelParams,
    TrainConfig,
    evaluate_f1,
    init_mlp,
    mean_cross_entropy,
    save_params,
    train_local,
)
from .partition import Partition
from .seeding import derive_seed


class ClientTrainingError(RuntimeError):
    """Local training failed; carries the client identity and round."""

    def __init__(self, client_id: str, round_index: int, cause: Exception):
        super().__init__(f"client {client_id!r} failed in round {round_index}: {cause}")
        self.client_id = client_id
        self.round_index = round_index


@dataclass(frozen=True)
class FLConfig:
    rounds: int = 200
    local_epochs: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    early_stop: bool = False
    patience: int = 10
    min_delta: float = 1e-3
    persist_adam: bool = False
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not 1 <= self.local_epochs <= self.train.max_epochs:
            raise ValueError(
                f"local_epochs must be in [1, {self.train.max_epochs}]"
            )


@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    mean_f1: float
    std_f1: float
    client_losses: dict[str, float]


RoundHistory = list[RoundRecord]


def model_init_seed(seed: int) -> int:
    """Stream used for global model initialization."""
    return derive_seed(seed, 0)


def client_round_seed(seed: int, round_index: int, client_index: int) -> int:
    """Stream used for one client's local training in one round."""
    return derive_seed(seed, 1, round_index, client_index)


def fedavg(contributions: Sequence[tuple[ModelParams, int]]) -> ModelParams:
    """Sample-count-weighted average of client parameters.

    Computed as ``base + sum_i w_i * (params_i - base)`` with the first
    contribution as base, so averaging identical parameters returns them
    bit-for-bit. Contributions are reduced in list order, which callers keep
    fixed (client index order) for reproducibility.
    """
    if len(contributions) == 0:
        raise ValueError("fedavg needs at least one contribution")
    total = float(sum(weight for _, weight in contributions))
    if total <= 0 or any(weight <= 0 for _, weight in contributions):
        raise ValueError("contribution weights must be positive")
    base = contributions[0][0]
    base_tensors = base.tensors()
    shapes = {k: v.shape for k, v in base_tensors.items()}
    acc = {k: v.copy() for k, v in base_tensors.items()}
    for params, weight in contributions:
        tensors = params.tensors()
        for key, shape in shapes.items():
            if tensors[key].shape != shape:
                raise ValueError("contributions disagree on parameter shapes")
            acc[key] += (weight / total) * (tensors[key] - base_tensors[key])
    return ModelParams(**acc)


def _mean_val_f1(params: ModelParams, datasets: Sequence[DeviceDataset]) -> tuple[float, float]:
    scores = [evaluate_f1(params, d.val_x, d.val_y) for d in datasets]
    return float(np.mean(scores)), float(np.std(scores))


def run_federated(
    clients: Sequence[DeviceDataset],
    config: FLConfig,
    eval_datasets: Sequence[DeviceDataset] | None = None,
) -> tuple[ModelParams, RoundHistory]:
    """FedAvg round loop: broadcast, local training, weighted aggregation.

    Per-round history records the mean validation F1 over ``eval_datasets``
    (the clients themselves by default) and each client's post-training loss
    on its own train split. With ``early_stop`` the loop ends once the best
    mean validation F1 has not improved by ``min_delta`` for ``patience``
    consecutive rounds.
    """
    if len(clients) == 0:
        raise ValueError("need at least one client")
    eval_set = clients if eval_datasets is None else eval_datasets
    params = init_mlp(
        clients[0].feature_dim, clients[0].alphabet.size, model_init_seed(config.seed)
    )
    adam_states: dict[int, AdamState] = {}
    history: RoundHistory = []
    best_f1 = -math.inf
    stall = 0
    for round_index in range(config.rounds):
        contributions: list[tuple[ModelParams, int]] = []
        losses: dict[str, float] = {}
        for client_index, client in enumerate(clients):
            if config.persist_adam:
                state = adam_states.setdefault(client_index, AdamState(params))
            else:
                state = None
            try:
                local = train_local(
                    params,
                    client.train_x,
                    client.train_y,
                    config.train,
                    config.local_epochs,
                    seed=client_round_seed(config.seed, round_index, client_index),
                    adam_state=state,
                )
            except Exception as exc:
                raise ClientTrainingError(client.device_id, round_index, exc) from exc
            contributions.append((local, client.n_train))
            losses[client.device_id] = mean_cross_entropy(
                local, client.train_x, client.train_y
            )
        params = fedavg(contributions)
        mean_f1, std_f1 = _mean_val_f1(params, eval_set)
        history.append(RoundRecord(round_index, mean_f1, std_f1, losses))
        if config.checkpoint_every > 0 and config.checkpoint_dir is not None:
            if (round_index + 1) % config.checkpoint_every == 0:
                ckdir = Path(config.checkpoint_dir) / f"round_{round_index:04d}"
                ckdir.mkdir(parents=True, exist_ok=True)
                save_params(params, ckdir / "params.json")
        if config.early_stop:
            if mean_f1 > best_f1 + config.min_delta:
                best_f1 = mean_f1
                stall = 0
            else:
                stall += 1
                if stall >= config.patience:
                    break
    return params, history


def run_three_tier(
    devices: Sequence[DeviceDataset],
    partition: Partition,
    config: FLConfig,
) -> tuple[ModelParams, RoundHistory]:
    """Clustered topology: one aggregator client per partition group.

    Each aggregator trains on its member devices' pooled data; the round
    loop is the flat one with aggregators as clients. History is evaluated
    against the devices themselves, since they are what ultimately runs the
    model.
    """
    if partition.device_count != len(devices):
        raise ValueError(
            f"partition covers {partition.device_count} devices, got {len(devices)}"
        )
    aggregators = [
        pool_datasets([devices[i] for i in group]) for group in partition.groups
    ]
    return run_federated(aggregators, config, eval_datasets=devices)


def run_centralized(
    devices: Sequence[DeviceDataset],
    config: TrainConfig,
    epochs: int | None = None,
) -> ModelParams:
    """Baseline with all data pooled centrally: a single local training run
    of ``epochs`` (default: the configured cap) over the global dataset."""
    if len(devices) == 0:
        raise ValueError("need at least one device")
    pooled = pool_datasets(devices)
    params = init_mlp(
        pooled.feature_dim, pooled.alphabet.size, model_init_seed(config.seed)
    )
    return train_local(
        params,
        pooled.train_x,
        pooled.train_y,
        config,
        config.max_epochs if epochs is None else epochs,
    )


def evaluate_on_clients(
    params: ModelParams,
    devices: Sequence[DeviceDataset],
    averaging: str = "macro",
) -> EvalReport:
    """Per-device F1 on each test split, with the unweighted mean across
    devices (so a device with little traffic counts as much as a busy one)."""
    scores: dict[str, float] = {}
    for device in devices:
        if device.n_test == 0:
            raise ValueError(f"device {device.device_id!r} has an empty test split")
        scores[device.device_id] = evaluate_f1(
            params, device.test_x, device.test_y, averaging
        )
    return EvalReport(scores)


def evaluate_generalization(
    params: ModelParams,
    unseen_devices: Sequence[DeviceDataset],
    averaging: str = "macro",
) -> EvalReport:
    """Evaluation on devices that took no part in training.

    The held-out devices are expected to be standardized with their own
    train statistics, mirroring how a newly onboarded device would prepare
    its data before applying the shared model.
    """
    return evaluate_on_clients(params, unseen_devices, averaging)


def history_to_csv(history: RoundHistory, path: str | Path) -> None:
    """Round history as CSV: round, mean_f1, std_f1, then one loss column
    per client."""
    client_ids = list(history[0].client_losses) if history else []
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "mean_f1", "std_f1"] + [f"loss_{c}" for c in client_ids])
        for record in history:
            writer.writerow(
                [record.round_index, repr(record.mean_f1), repr(record.std_f1)]
                + [repr(record.client_losses[c]) for c in client_ids]
            )
