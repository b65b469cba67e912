"""Per-device datasets: CSV flow ingestion, synthetic non-iid generation,
train/val/test splitting, standardization, pooling and (de)serialization.

A flow record is one numeric feature vector plus a class label; ingested
records additionally carry a binary direction flag (0 = received by the
device, 1 = sent by it) appended as the last feature column. Every device in
an experiment shares one class alphabet and one feature layout.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .seeding import derive_seed
from .statcore import ClassAlphabet

log = logging.getLogger(__name__)

SPLIT_RATIOS = (0.6, 0.2, 0.2)


class DataError(ValueError):
    """Problem with the data itself (as opposed to usage or configuration)."""


class SchemaError(DataError):
    """CSV header does not provide the configured columns."""


class ParseError(DataError):
    """A CSV cell could not be parsed; the message carries the line number."""


@dataclass(frozen=True)
class CsvSchema:
    """Column mapping for flow CSVs.

    Feature columns are every header column not named here. ``drop`` lists
    device-specific identifier columns to discard (timestamps, flow ids,
    redundant binary labels, ...). ``on_error`` selects whether malformed
    rows abort ingestion ("fatal") or are logged and skipped ("skip").
    """

    destination: str = "Dst IP"
    source: str = "Src IP"
    label: str = "Attack"
    drop: tuple[str, ...] = ("Flow ID", "Timestamp")
    on_error: str = "fatal"

    def __post_init__(self):
        if self.on_error not in ("fatal", "skip"):
            raise ValueError(f"on_error must be 'fatal' or 'skip', got {self.on_error!r}")


@dataclass(frozen=True)
class DeviceDataset:
    """One device's split dataset.

    Feature matrices are float64 with a fixed column layout; labels are
    indices into ``alphabet``. ``feature_means``/``feature_stds`` hold the
    affine transform applied by :func:`standardize` (fit on the train split
    only); they are ``None`` while the data is raw. ``raw`` keeps the
    pre-standardization snapshot so standardization can be re-derived.
    """

    device_id: str
    alphabet: ClassAlphabet
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    feature_means: np.ndarray | None = None
    feature_stds: np.ndarray | None = None
    direction_column: int | None = None
    raw: "DeviceDataset | None" = None

    def __post_init__(self):
        dims = {a.shape[1] for a in (self.train_x, self.val_x, self.test_x)}
        if len(dims) != 1:
            raise ValueError(f"{self.device_id}: splits disagree on feature count")
        for y in (self.train_y, self.val_y, self.test_y):
            if len(y) and (y.min() < 0 or y.max() >= self.alphabet.size):
                raise ValueError(f"{self.device_id}: label index outside alphabet")

    @property
    def feature_dim(self) -> int:
        return self.train_x.shape[1]

    @property
    def n_train(self) -> int:
        return len(self.train_y)

    @property
    def n_val(self) -> int:
        return len(self.val_y)

    @property
    def n_test(self) -> int:
        return len(self.test_y)

    @property
    def label_counts(self) -> np.ndarray:
        """Per-class sample counts of the train split."""
        return np.bincount(self.train_y, minlength=self.alphabet.size).astype(np.int64)


def split_sizes(n: int, ratios: Sequence[float] = SPLIT_RATIOS) -> tuple[int, ...]:
    """Split sizes under the floor-then-distribute rule: floor each ratio,
    hand leftover records to the earlier splits (train first, then val)."""
    if n < 1:
        raise ValueError("cannot split an empty record set")
    if abs(math.fsum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    # The epsilon counters float wobble such as 5 * 0.6 == 2.999...96.
    sizes = [int(math.floor(r * n + 1e-9)) for r in ratios]
    for i in range(n - sum(sizes)):
        sizes[i % len(sizes)] += 1
    return tuple(sizes)


def train_val_test_split(
    features: np.ndarray,
    labels: np.ndarray,
    ratios: Sequence[float] = SPLIT_RATIOS,
    seed: int = 0,
) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    """Seeded shuffle followed by contiguous slicing into three disjoint,
    covering splits."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(features) != len(labels):
        raise ValueError("features and labels disagree on record count")
    n_train, n_val, _ = split_sizes(len(labels), ratios)
    order = np.random.default_rng(np.random.SeedSequence(seed)).permutation(len(labels))
    parts = (order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :])
    return tuple((features[idx], labels[idx]) for idx in parts)


def build_device(
    device_id: str,
    alphabet: ClassAlphabet,
    features: np.ndarray,
    labels: np.ndarray,
    ratios: Sequence[float] = SPLIT_RATIOS,
    seed: int = 0,
    direction_column: int | None = None,
) -> DeviceDataset:
    """Split one device's records and wrap them as a (raw) DeviceDataset."""
    (tr_x, tr_y), (va_x, va_y), (te_x, te_y) = train_val_test_split(
        features, labels, ratios, seed
    )
    return DeviceDataset(
        device_id=device_id,
        alphabet=alphabet,
        train_x=tr_x,
        train_y=tr_y,
        val_x=va_x,
        val_y=va_y,
        test_x=te_x,
        test_y=te_y,
        direction_column=direction_column,
    )


def standardize(device: DeviceDataset) -> DeviceDataset:
    """Zero-mean unit-variance scaling fit on the train split only.

    Statistics use the population (1/n) standard deviation. Features that
    are constant on the train split are shifted by their mean but not scaled
    (divisor forced to 1), and the binary direction flag is left untouched.
    Applied to train, val and test alike; re-running on the result re-derives
    the same transform from the retained raw snapshot.
    """
    base = device.raw if device.raw is not None else device
    if base.feature_means is not None:
        # Loaded from disk without a raw snapshot: already standardized.
        return device
    if base.n_train == 0:
        raise ValueError(f"{device.device_id}: cannot standardize an empty train split")
    means = base.train_x.mean(axis=0)
    stds = base.train_x.std(axis=0)
    stds = np.where(stds == 0.0, 1.0, stds)
    if base.direction_column is not None:
        means[base.direction_column] = 0.0
        stds[base.direction_column] = 1.0
    return replace(
        base,
        train_x=(base.train_x - means) / stds,
        val_x=(base.val_x - means) / stds,
        test_x=(base.test_x - means) / stds,
        feature_means=means,
        feature_stds=stds,
        raw=base,
    )


def pool_datasets(devices: Sequence[DeviceDataset]) -> DeviceDataset:
    """Concatenate several devices' splits into one aggregator dataset.

    Members keep their own standardization; the pooled dataset's label
    counts are the element-wise sum of the members'.
    """
    if len(devices) == 0:
        raise ValueError("cannot pool an empty device list")
    first = devices[0]
    for d in devices[1:]:
        if d.feature_dim != first.feature_dim:
            raise ValueError("pooled devices disagree on feature count")
        if d.alphabet.labels != first.alphabet.labels:
            raise ValueError("pooled devices disagree on the class alphabet")
        if d.direction_column != first.direction_column:
            raise ValueError("pooled devices disagree on the direction column")
    return DeviceDataset(
        device_id="+".join(d.device_id for d in devices),
        alphabet=first.alphabet,
        train_x=np.concatenate([d.train_x for d in devices]),
        train_y=np.concatenate([d.train_y for d in devices]),
        val_x=np.concatenate([d.val_x for d in devices]),
        val_y=np.concatenate([d.val_y for d in devices]),
        test_x=np.concatenate([d.test_x for d in devices]),
        test_y=np.concatenate([d.test_y for d in devices]),
        direction_column=first.direction_column,
    )


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a synthetic non-iid benchmark.

    Each device draws labels from its own class-proportion vector and
    features from spherical Gaussians centred on per-class means, so class
    distributions can be skewed arbitrarily across devices while the
    classification task itself stays learnable.
    """

    device_count: int
    class_count: int
    feature_dim: int
    proportions: tuple[tuple[float, ...], ...]
    samples_per_device: int
    class_means: tuple[tuple[float, ...], ...]
    class_spread: float = 1.0
    seed: int = 0
    ratios: tuple[float, float, float] = SPLIT_RATIOS

    def __post_init__(self):
        if self.device_count < 1 or self.samples_per_device < 1:
            raise ValueError("need at least one device and one sample per device")
        if len(self.proportions) != self.device_count:
            raise ValueError("one proportion vector per device required")
        for row in self.proportions:
            if len(row) != self.class_count:
                raise ValueError("proportion vectors must have one entry per class")
            if any(p < 0 for p in row) or abs(math.fsum(row) - 1.0) > 1e-9:
                raise ValueError("device class proportions must sum to 1")
        if len(self.class_means) != self.class_count or any(
            len(m) != self.feature_dim for m in self.class_means
        ):
            raise ValueError("class_means must be (class_count, feature_dim)")

    @classmethod
    def skewed(
        cls,
        device_count: int = 8,
        class_count: int = 4,
        feature_dim: int = 8,
        samples_per_device: int = 2000,
        dominant_share: float = 0.85,
        separation: float = 2.0,
        class_spread: float = 1.0,
        seed: int = 0,
    ) -> "SynthSpec":
        """Label-skewed spec: device ``d`` is dominated by class ``d mod K``,
        with the remaining mass spread evenly over the other classes. Class
        means sit on scaled coordinate axes."""
        if feature_dim < class_count:
            raise ValueError("skewed spec needs feature_dim >= class_count")
        if not 1.0 / class_count <= dominant_share <= 1.0:
            raise ValueError("dominant_share must be in [1/class_count, 1]")
        rest = (1.0 - dominant_share) / (class_count - 1)
        proportions = tuple(
            tuple(
                dominant_share if c == d % class_count else rest
                for c in range(class_count)
            )
            for d in range(device_count)
        )
        means = np.zeros((class_count, feature_dim))
        means[np.arange(class_count), np.arange(class_count)] = separation
        return cls(
            device_count=device_count,
            class_count=class_count,
            feature_dim=feature_dim,
            proportions=proportions,
            samples_per_device=samples_per_device,
            class_means=tuple(tuple(row) for row in means),
            class_spread=class_spread,
            seed=seed,
        )


def synthesize_noniid(spec: SynthSpec) -> list[DeviceDataset]:
    """Generate raw (unstandardized) per-device datasets from a spec.

    Fully deterministic for a given spec seed; each device has its own
    derived stream, so adding devices does not perturb existing ones.
    """
    alphabet = ClassAlphabet(tuple(f"c{i}" for i in range(spec.class_count)))
    means = np.asarray(spec.class_means, dtype=np.float64)
    devices = []
    for d in range(spec.device_count):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, d, 0]))
        labels = rng.choice(spec.class_count, size=spec.samples_per_device, p=spec.proportions[d])
        noise = rng.standard_normal((spec.samples_per_device, spec.feature_dim))
        features = means[labels] + spec.class_spread * noise
        devices.append(
            build_device(
                device_id=f"dev{d}",
                alphabet=alphabet,
                features=features,
                labels=labels,
                ratios=spec.ratios,
                seed=derive_seed(spec.seed, d, 1),
            )
        )
    return devices


def _resolve_columns(header: list[str], schema: CsvSchema) -> tuple[dict[str, int], list[int]]:
    positions = {name: i for i, name in enumerate(header)}
    required = {"destination": schema.destination, "source": schema.source, "label": schema.label}
    missing = [col for col in required.values() if col not in positions]
    if missing:
        raise SchemaError(f"CSV header is missing required columns: {missing}")
    special = set(required.values()) | set(schema.drop)
    feature_idx = [i for i, name in enumerate(header) if name not in special]
    if not feature_idx:
        raise SchemaError("no feature columns remain after dropping identifiers")
    return {k: positions[v] for k, v in required.items()}, feature_idx


def ingest_flows(
    csv_path: str | Path,
    top_devices: int,
    schema: CsvSchema = CsvSchema(),
    ratios: Sequence[float] = SPLIT_RATIOS,
    seed: int = 0,
) -> list[DeviceDataset]:
    """Build per-device datasets from a flow CSV.

    The ``top_devices`` destination addresses with the most rows become the
    devices. Each device's records are the rows where it is the destination
    (direction flag 0) plus the rows where it is the source (direction flag
    1); a row between two selected devices therefore lands in both. The
    direction flag is appended as the last feature column.
    """
    csv_path = Path(csv_path)
    with csv_path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{csv_path}: empty file, expected a header row")
        cols, feature_idx = _resolve_columns(header, schema)

        dst_counts: dict[str, int] = {}
        for row in reader:
            if not row:
                continue
            dst = row[cols["destination"]]
            dst_counts[dst] = dst_counts.get(dst, 0) + 1

    if len(dst_counts) < top_devices:
        raise DataError(
            f"{csv_path}: only {len(dst_counts)} distinct destinations, "
            f"need {top_devices}"
        )
    ranked = sorted(dst_counts.items(), key=lambda kv: (-kv[1], kv[0]))
    selected = [addr for addr, _ in ranked[:top_devices]]
    selected_set = set(selected)

    rows_by_device: dict[str, list[list[float]]] = {d: [] for d in selected}
    labels_by_device: dict[str, list[str]] = {d: [] for d in selected}
    label_values: set[str] = set()
    skipped = 0

    with csv_path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            if not row:
                continue
            dst, src = row[cols["destination"]], row[cols["source"]]
            if dst not in selected_set and src not in selected_set:
                continue
            try:
                feats = [float(row[i]) for i in feature_idx]
            except (ValueError, IndexError) as exc:
                if schema.on_error == "fatal":
                    raise ParseError(f"{csv_path}: line {reader.line_num}: {exc}") from exc
                log.warning("%s: line %d skipped: %s", csv_path, reader.line_num, exc)
                skipped += 1
                continue
            label = row[cols["label"]]
            label_values.add(label)
            if dst in selected_set:
                rows_by_device[dst].append(feats + [0.0])
                labels_by_device[dst].append(label)
            if src in selected_set:
                rows_by_device[src].append(feats + [1.0])
                labels_by_device[src].append(label)

    if skipped:
        log.warning("%s: skipped %d malformed rows", csv_path, skipped)
    alphabet = ClassAlphabet(tuple(sorted(label_values)))
    direction_column = len(feature_idx)
    devices = []
    for index, device_id in enumerate(selected):
        features = np.array(rows_by_device[device_id], dtype=np.float64)
        labels = alphabet.indices(labels_by_device[device_id])
        devices.append(
            build_device(
                device_id=device_id,
                alphabet=alphabet,
                features=features,
                labels=labels,
                ratios=ratios,
                seed=derive_seed(seed, index),
                direction_column=direction_column,
            )
        )
    return devices


def save_devices(devices: Sequence[DeviceDataset], out_dir: str | Path) -> None:
    """Write the ``<out_dir>/<id>/{train,val,test}.csv`` layout plus per-device
    ``meta.json`` and a top-level ``manifest.json``."""
    if len(devices) == 0:
        raise ValueError("nothing to save")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    first = devices[0]
    manifest = {
        "alphabet": list(first.alphabet.labels),
        "device_ids": [d.device_id for d in devices],
        "feature_dim": first.feature_dim,
        "direction_column": first.direction_column,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    for device in devices:
        ddir = out_dir / device.device_id
        ddir.mkdir(parents=True, exist_ok=True)
        for name, x, y in (
            ("train", device.train_x, device.train_y),
            ("val", device.val_x, device.val_y),
            ("test", device.test_x, device.test_y),
        ):
            with (ddir / f"{name}.csv").open("w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow([f"f{i}" for i in range(device.feature_dim)] + ["label"])
                for row, label in zip(x, y):
                    writer.writerow(
                        [repr(float(v)) for v in row] + [device.alphabet.labels[label]]
                    )
        meta = {
            "device_id": device.device_id,
            "n_train": device.n_train,
            "n_val": device.n_val,
            "n_test": device.n_test,
            "label_counts": [int(c) for c in device.label_counts],
            "feature_means": None
            if device.feature_means is None
            else [float(v) for v in device.feature_means],
            "feature_stds": None
            if device.feature_stds is None
            else [float(v) for v in device.feature_stds],
        }
        (ddir / "meta.json").write_text(json.dumps(meta, indent=2))


def _load_split(path: Path, alphabet: ClassAlphabet, feature_dim: int):
    features, labels = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            features.append([float(v) for v in row[:feature_dim]])
            labels.append(alphabet.index(row[feature_dim]))
    x = np.array(features, dtype=np.float64).reshape(len(labels), feature_dim)
    return x, np.array(labels, dtype=np.int64)


def load_devices(in_dir: str | Path) -> list[DeviceDataset]:
    """Load a directory written by :func:`save_devices`, in manifest order."""
    in_dir = Path(in_dir)
    manifest_path = in_dir / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"{in_dir}: no manifest.json, not a device directory")
    manifest = json.loads(manifest_path.read_text())
    alphabet = ClassAlphabet(tuple(manifest["alphabet"]))
    feature_dim = manifest["feature_dim"]
    devices = []
    for device_id in manifest["device_ids"]:
        ddir = in_dir / device_id
        meta = json.loads((ddir / "meta.json").read_text())
        splits = {
            name: _load_split(ddir / f"{name}.csv", alphabet, feature_dim)
            for name in ("train", "val", "test")
        }
        devices.append(
            DeviceDataset(
                device_id=device_id,
                alphabet=alphabet,
                train_x=splits["train"][0],
                train_y=splits["train"][1],
                val_x=splits["val"][0],
                val_y=splits["val"][1],
                test_x=splits["test"][0],
                test_y=splits["test"][1],
                feature_means=None
                if meta["feature_means"] is None
                else np.array(meta["feature_means"]),
                feature_stds=None
                if meta["feature_stds"] is None
                else np.array(meta["feature_stds"]),
                direction_column=manifest["direction_column"],
            )
        )
    return devices
