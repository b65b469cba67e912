"""Entropy-guided client clustering for federated intrusion-detection
simulation: label-distribution scoring, partition search, a from-scratch MLP
with FedAvg orchestration, and dataset tooling for flow CSVs and synthetic
non-iid benchmarks."""

from .statcore import (
    ClassAlphabet,
    distribution_from_counts,
    hellinger,
    normalized_entropy,
    pooled_distribution,
    similarity_score,
)
from .partition import (
    Partition,
    ScoredRealization,
    SearchConfig,
    enumerate_equal_partitions,
    equal_partition_count,
    exhaustive_best,
    random_equal_partition,
    score_partition,
    select_clusters,
)
from .dataset import (
    CsvSchema,
    DataError,
    DeviceDataset,
    ParseError,
    SchemaError,
    SynthSpec,
    ingest_flows,
    load_devices,
    pool_datasets,
    save_devices,
    standardize,
    synthesize_noniid,
    train_val_test_split,
)
from .model import (
    EvalReport,
    ModelParams,
    TrainConfig,
    evaluate_f1,
    forward,
    init_mlp,
    load_params,
    loss_and_grads,
    save_params,
    train_local,
)
from .fedsim import (
    FLConfig,
    RoundRecord,
    evaluate_generalization,
    evaluate_on_clients,
    fedavg,
    run_centralized,
    run_federated,
    run_three_tier,
)

__version__ = "0.1.0"
