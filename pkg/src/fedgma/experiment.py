"""Experiment driver: config, data pipeline wiring, the round loop,
in/out-of-distribution evaluation, and CSV metrics.

Everything is determined by three seeds. ``data_seed`` drives corpus
synthesis, partitioning, and coloring; ``init_seed`` the initial
parameters; ``train_seed`` client sampling and minibatch shuffling
(per-round, per-client streams derived from it, so the two algorithms
see identical local training when compared on the same seeds).

Binary task pipeline: the raw digits are partitioned first and each
client's shard is then colored with its own flip probability (evenly
spaced across [0.1, 0.2]). The binary OOD test set reverses the color
scheme with probability 0.9; the in-distribution test set uses the
midpoint training flip probability 0.15.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data, federation, nn
from .synth import synthetic_digits

TASKS = ("binary", "multiclass")
ALGORITHMS = ("fedavg", "fedgma")
PARTITIONS = ("iid", "non-iid")
MODELS = ("mlp", "cnn")
DATA_SOURCES = ("synthetic", "idx")

BINARY_OOD_FLIP = 0.1  # applied on top of the reversed scheme -> 90% reversed
BINARY_ID_FLIP = 0.15

METRICS_HEADER = "round,train_loss,ood_accuracy,id_accuracy,wall_time_s"
SUMMARY_HEADER = ("round,train_loss_mean,train_loss_std,"
                  "ood_accuracy_mean,ood_accuracy_std,"
                  "id_accuracy_mean,id_accuracy_std")


@dataclass
class ExperimentConfig:
    task: str = "binary"
    algorithm: str = "fedgma"
    clients: int = 10
    clients_per_round: int = 10
    rounds: int = 100
    local_epochs: int = 3
    client_lr: float = 0.001
    server_lr: float = 1.0
    mask_threshold: float = 0.8
    partition: str = "non-iid"
    gradient_source: str = "last-step"
    model: str = "mlp"
    batch_size: int = 64
    data_seed: int = 0
    init_seed: int = 0
    train_seed: int = 0
    data_source: str = "synthetic"
    synth_train: int = 1000
    synth_test: int = 400
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self):
        checks = [
            (self.task in TASKS, f"task must be one of {TASKS}"),
            (self.algorithm in ALGORITHMS, f"algorithm must be one of {ALGORITHMS}"),
            (self.partition in PARTITIONS, f"partition must be one of {PARTITIONS}"),
            (self.model in MODELS, f"model must be one of {MODELS}"),
            (self.data_source in DATA_SOURCES, f"data_source must be one of {DATA_SOURCES}"),
            (self.gradient_source in federation.GRADIENT_SOURCES,
             f"gradient_source must be one of {federation.GRADIENT_SOURCES}"),
            (self.clients >= 1, "clients must be at least 1"),
            (1 <= self.clients_per_round <= self.clients,
             "clients_per_round must be in [1, clients]"),
            (self.rounds >= 0, "rounds must be non-negative"),
            (self.local_epochs >= 1, "local_epochs must be at least 1"),
            (self.client_lr > 0, "client_lr must be positive"),
            (self.server_lr >= 0, "server_lr must be non-negative"),
            (0.0 <= self.mask_threshold <= 1.0, "mask_threshold must be in [0, 1]"),
            (self.batch_size >= 1, "batch_size must be at least 1"),
        ]
        for ok, message in checks:
            if not ok:
                raise ValueError(f"invalid config: {message}")

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Replicate under one seed: all three seed roles set to it."""
        return dataclasses.replace(self, data_seed=seed, init_seed=seed, train_seed=seed)

    def to_file(self, path) -> None:
        lines = [f"{f.name}={getattr(self, f.name)!r}" if f.type == "float"
                 else f"{f.name}={getattr(self, f.name)}"
                 for f in dataclasses.fields(self)]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config not found: {path}")
        values = {}
        for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key] = value
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in values.items():
            if key not in types:
                raise ValueError(f"{path}: unknown config key {key!r}")
            kind = types[key]
            kwargs[key] = int(value) if kind == "int" else float(value) if kind == "float" else value
        return cls(**kwargs)


@dataclass(frozen=True)
class MetricsRow:
    round: int
    train_loss: float
    ood_accuracy: float
    id_accuracy: float
    wall_time_s: float


def model_spec(config: ExperimentConfig) -> nn.ModelSpec:
    return nn.mlp_spec(config.task) if config.model == "mlp" else nn.cnn_spec(config.task)


def load_raw(config: ExperimentConfig):
    """(train, test) RawDatasets from IDX paths or the synthetic corpus."""
    if config.data_source == "idx":
        paths = [config.train_images, config.train_labels,
                 config.test_images, config.test_labels]
        if not all(paths):
            raise ValueError(
                "data_source=idx requires train_images, train_labels, "
                "test_images, and test_labels paths")
        for p in paths:
            if not Path(p).exists():
                raise FileNotFoundError(f"data file not found: {p}")
        return data.load_mnist(*paths)
    train = synthetic_digits(config.synth_train, [config.data_seed, 0])
    test = synthetic_digits(config.synth_test, [config.data_seed, 1])
    return train, test


def _retag(shard: data.ColoredDataset, environment: str) -> data.ColoredDataset:
    return dataclasses.replace(shard, environment=environment)


def build_clients(config: ExperimentConfig, raw_train: data.RawDataset) -> list[data.ClientState]:
    """Partition by digit, then color each shard for its environment."""
    if config.partition == "iid":
        split = data.partition_iid(raw_train, config.clients, seed=[config.data_seed, 10])
    else:
        split = data.partition_noniid(raw_train, config.clients, seed=[config.data_seed, 10])
    clients = []
    if config.task == "binary":
        flips = data.client_flip_probs(config.clients)
        for c in split:
            colored = data.colorize_binary(
                c.shard, flips[c.client_id], reversed_scheme=False,
                seed=[config.data_seed, 20, c.client_id],
                environment=f"train-client-{c.client_id}")
            clients.append(data.ClientState(c.client_id, colored, c.sample_count,
                                            flip_prob=flips[c.client_id]))
    else:
        for c in split:
            colored = data.colorize_multiclass(
                c.shard, "train", seed=[config.data_seed, 20, c.client_id])
            colored = _retag(colored, f"train-client-{c.client_id}")
            clients.append(data.ClientState(c.client_id, colored, c.sample_count))
    return clients


def build_eval_sets(config: ExperimentConfig, raw_test: data.RawDataset):
    """(in-distribution test, OOD test) ColoredDatasets."""
    if config.task == "binary":
        id_test = data.colorize_binary(raw_test, BINARY_ID_FLIP, reversed_scheme=False,
                                       seed=[config.data_seed, 30], environment="id-test")
        ood_test = data.colorize_binary(raw_test, BINARY_OOD_FLIP, reversed_scheme=True,
                                        seed=[config.data_seed, 31], environment="ood-test")
    else:
        id_test = _retag(data.colorize_multiclass(raw_test, "train",
                                                  seed=[config.data_seed, 30]), "id-test")
        ood_test = data.colorize_multiclass(raw_test, "ood-test",
                                            seed=[config.data_seed, 31])
    return id_test, ood_test


def evaluate(spec: nn.ModelSpec, params: np.ndarray, dataset: data.ColoredDataset,
             chunk: int = 1024) -> tuple[float, float]:
    """(mean loss, accuracy). Binary predicts 1 when p >= 0.5; multiclass argmax."""
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    inputs = dataset.flat_inputs()
    labels = dataset.labels
    loss_sum = 0.0
    correct = 0
    for lo in range(0, n, chunk):
        xb = inputs[lo:lo + chunk]
        yb = labels[lo:lo + chunk]
        preds = nn.forward(spec, params, nn.Batch(xb, yb))
        loss_sum += nn.loss(spec, preds, yb) * len(xb)
        if spec.loss_kind == "cross-entropy" and spec.output_dim == 1:
            predicted = (preds[:, 0] >= 0.5).astype(np.int64)
        else:
            predicted = preds.argmax(axis=1)
        correct += int((predicted == yb).sum())
    return loss_sum / n, correct / n


def run_experiment(config: ExperimentConfig) -> list[MetricsRow]:
    """Run the configured algorithm for ``rounds`` rounds, evaluating the
    server model on both test sets after every round."""
    spec = model_spec(config)
    raw_train, raw_test = load_raw(config)
    clients = build_clients(config, raw_train)
    id_test, ood_test = build_eval_sets(config, raw_test)
    if ood_test.environment != "ood-test":
        raise AssertionError("OOD set mislabeled")
    for c in clients:
        if not c.shard.environment.startswith("train-client"):
            raise AssertionError("training shard carries a non-training tag")

    fed = federation.FederationConfig(
        client_lr=config.client_lr,
        server_lr=config.server_lr,
        local_epochs=config.local_epochs,
        mask_threshold=config.mask_threshold,
        clients_per_round=config.clients_per_round,
        batch_size=config.batch_size,
        gradient_source=config.gradient_source,
    )
    state = federation.ServerState(0, nn.init_params(spec, config.init_seed), fed)
    round_fn = (federation.server_round_gma if config.algorithm == "fedgma"
                else federation.server_round_fedavg)

    rows = []
    for t in range(1, config.rounds + 1):
        tic = time.perf_counter()
        chosen_ids = federation.select_clients(
            config.clients, config.clients_per_round, config.train_seed, state.round)
        state, results = round_fn(state, [clients[i] for i in chosen_ids],
                                  spec, config.train_seed)
        counts = np.array([r.sample_count for r in results], dtype=np.float64)
        train_loss = float(np.dot(counts / counts.sum(),
                                  [r.train_loss for r in results]))
        _, ood_acc = evaluate(spec, state.params, ood_test)
        _, id_acc = evaluate(spec, state.params, id_test)
        rows.append(MetricsRow(t, train_loss, float(ood_acc), float(id_acc),
                               time.perf_counter() - tic))
    return rows


def run_replicates(config: ExperimentConfig, seeds) -> dict[int, list[MetricsRow]]:
    return {int(s): run_experiment(config.with_seed(int(s))) for s in seeds}


def emit_metrics(rows, path) -> None:
    """One CSV row per round at full decimal precision."""
    with open(path, "w") as f:
        f.write(METRICS_HEADER + "\n")
        for r in rows:
            f.write(f"{r.round},{float(r.train_loss)!r},{float(r.ood_accuracy)!r},"
                    f"{float(r.id_accuracy)!r},{float(r.wall_time_s)!r}\n")


def read_metrics(path) -> list[MetricsRow]:
    lines = Path(path).read_text().strip().splitlines()
    if not lines or lines[0] != METRICS_HEADER:
        raise ValueError(f"{path}: unexpected metrics header")
    rows = []
    for line in lines[1:]:
        t, tl, ood, idacc, wall = line.split(",")
        rows.append(MetricsRow(int(t), float(tl), float(ood), float(idacc), float(wall)))
    return rows


def summarize_replicates(runs: dict[int, list[MetricsRow]]):
    """Per-round mean/std over seeds for each metric (population std)."""
    if not runs:
        raise ValueError("no runs to summarize")
    lengths = {len(rows) for rows in runs.values()}
    if len(lengths) != 1:
        raise ValueError("replicates disagree on round count")
    per_seed = list(runs.values())
    out = []
    for i in range(lengths.pop()):
        cells = [rows[i] for rows in per_seed]
        out.append({
            "round": cells[0].round,
            "train_loss_mean": float(np.mean([c.train_loss for c in cells])),
            "train_loss_std": float(np.std([c.train_loss for c in cells])),
            "ood_accuracy_mean": float(np.mean([c.ood_accuracy for c in cells])),
            "ood_accuracy_std": float(np.std([c.ood_accuracy for c in cells])),
            "id_accuracy_mean": float(np.mean([c.id_accuracy for c in cells])),
            "id_accuracy_std": float(np.std([c.id_accuracy for c in cells])),
        })
    return out


def emit_summary(summary, path) -> None:
    keys = SUMMARY_HEADER.split(",")
    with open(path, "w") as f:
        f.write(SUMMARY_HEADER + "\n")
        for row in summary:
            f.write(",".join(str(row[k]) if k == "round" else repr(row[k])
                             for k in keys) + "\n")
