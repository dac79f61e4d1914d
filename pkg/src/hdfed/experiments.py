"""Experiment configuration, single runs, sweeps and report files.

A run directory holds:

``manifest.json``
    The resolved configuration (and the derived seeds).
``metrics.csv``
    One row per evaluated round: ``round, accuracy, per_class_accuracy,
    cumulative_variance, required_variance, blackbox_variance``. Per-class
    accuracies are ``;``-separated.
``ledger.csv``
    The noise ledger (see :meth:`hdfed.accountant.NoiseLedger.to_csv`).
``model.npy``
    Final ``(S, D)`` prototypes.
``timing.csv``
    Wall-clock seconds per round. Kept apart so the other files are
    byte-for-byte reproducible.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import logging
import math
import os
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import accountant as acc
from . import datasets
from .errors import ConfigError, InvariantError
from .federation import Client, ModelState, evaluate_encoded, run_federation
from .hd import EncoderBasis, encode

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "HDFED_OUTPUT_DIR"
SWEEP_AXES = ("epsilon", "delta0", "dim", "clients", "samples_per_client", "rounds", "retrain_passes")
EVAL_CADENCES = ("per_round", "final")
METRICS_FIELDS = (
    "round",
    "accuracy",
    "per_class_accuracy",
    "cumulative_variance",
    "required_variance",
    "blackbox_variance",
)


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one run.

    ``samples_per_client=None`` lets the partitioner use the whole training
    split (iid) or the largest count every class pool supports (noniid).
    ``seeds`` triggers replicate runs; ``seed`` is then ignored.
    """

    dataset: str = "synthetic"
    data_path: str | None = None
    train_subset: int | None = None
    test_subset: int | None = None
    sample_norm: str = "l2"
    synthetic_train: int = 1000
    synthetic_test: int = 200
    synthetic_features: int = 16
    synthetic_classes: int = 4
    synthetic_separation: float = 3.0
    partition: str = "iid"
    clients: int = 10
    samples_per_client: int | None = None
    rounds: int = 5
    dim: int = 2000
    epsilon: float = 0.4
    delta0: float = 1e-3
    seed: int = 0
    seeds: list[int] | None = None
    retrain_passes: int = 1
    noise: bool = True
    eval: str = "per_round"
    output_dir: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in (f.name for f in dataclasses.fields(self)):
            value = getattr(self, name)
            if name in ("clients", "rounds", "dim", "retrain_passes", "seed", "synthetic_train",
                        "synthetic_test", "synthetic_features", "synthetic_classes"):
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ConfigError(f"{name} must be an integer, got {value!r}")
            elif name in ("samples_per_client", "train_subset", "test_subset"):
                if value is not None and (isinstance(value, bool) or not isinstance(value, int) or value < 1):
                    raise ConfigError(f"{name} must be a positive integer or absent, got {value!r}")
            elif name in ("epsilon", "delta0", "synthetic_separation"):
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"{name} must be a number, got {value!r}")
            elif name == "noise" and not isinstance(value, bool):
                raise ConfigError(f"noise must be true or false, got {value!r}")
        if self.dataset not in ("mnist", "isolet", "uci_har", "synthetic"):
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        if self.dataset != "synthetic" and not self.data_path:
            raise ConfigError(f"dataset {self.dataset!r} needs data_path")
        if self.partition not in ("iid", "noniid"):
            raise ConfigError(f"partition must be 'iid' or 'noniid', got {self.partition!r}")
        if self.sample_norm not in datasets.SAMPLE_NORMS:
            raise ConfigError(f"sample_norm must be one of {datasets.SAMPLE_NORMS}, got {self.sample_norm!r}")
        if self.eval not in EVAL_CADENCES:
            raise ConfigError(f"eval must be one of {EVAL_CADENCES}, got {self.eval!r}")
        if self.seeds is not None:
            if not self.seeds or not all(isinstance(s, int) and not isinstance(s, bool) for s in self.seeds):
                raise ConfigError(f"seeds must be a non-empty list of integers, got {self.seeds!r}")
        if self.retrain_passes < 0:
            raise ConfigError(f"retrain_passes must be >= 0, got {self.retrain_passes}")
        # Privacy parameter ranges; N is checked again once the partition is known.
        acc.PrivacyParams(self.epsilon, self.delta0, self.dim, self.samples_per_client or 1, self.clients, self.rounds)

    @classmethod
    def from_dict(cls, values: dict[str, Any], base_dir: str | Path | None = None) -> ExperimentConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        values = dict(values)
        if base_dir is not None and values.get("data_path"):
            values["data_path"] = os.path.normpath(Path(base_dir) / values["data_path"])
        if base_dir is not None and values.get("output_dir"):
            values["output_dir"] = os.path.normpath(Path(base_dir) / values["output_dir"])
        if isinstance(values.get("epsilon"), int):
            values["epsilon"] = float(values["epsilon"])
        return cls(**values)

    @classmethod
    def from_file(cls, path: str | Path) -> ExperimentConfig:
        """Read a TOML config; relative paths resolve against its directory.

        ``$HDFED_OUTPUT_DIR`` overrides ``output_dir`` when set.
        """
        path = Path(path)
        try:
            values = tomllib.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config ({exc})") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        cfg = cls.from_dict(values, base_dir=path.parent)
        env = os.environ.get(OUTPUT_DIR_ENV)
        if env:
            cfg = cfg.replace(output_dir=env)
        return cfg

    def replace(self, **changes) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def derived_seed(*parts: int | str) -> int:
    """Stable 32-bit seed derived from integers and strings."""
    words = [zlib.crc32(p.encode()) if isinstance(p, str) else int(p) for p in parts]
    return int(np.random.SeedSequence(words).generate_state(1)[0])


@dataclass
class MetricsRecord:
    round: int
    accuracy: float
    per_class_accuracy: list[float]
    cumulative_variance: float
    required_variance: float
    blackbox_variance: float
    seconds: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise InvariantError(f"accuracy {self.accuracy} outside [0, 1]")
        if min(self.cumulative_variance, self.required_variance, self.blackbox_variance) < 0:
            raise InvariantError("variance fields must be non-negative")
        if self.blackbox_variance < self.required_variance:
            raise InvariantError("blackbox variance below required variance")

    def csv_row(self) -> str:
        per_class = ";".join(format(a, ".6f") for a in self.per_class_accuracy)
        return ",".join([
            str(self.round),
            format(self.accuracy, ".6f"),
            per_class,
            format(self.cumulative_variance, ".17g"),
            format(self.required_variance, ".17g"),
            format(self.blackbox_variance, ".17g"),
        ])


@dataclass
class RunResult:
    config: ExperimentConfig
    metrics: list[MetricsRecord]
    state: ModelState
    plan: datasets.PartitionPlan
    seeds: dict[str, int] = field(default_factory=dict)

    @property
    def final_accuracy(self) -> float:
        return self.metrics[-1].accuracy

    def metrics_csv(self) -> str:
        head = "# private=true\n" if self.state.private else "# private=false (diagnostic run, no noise)\n"
        return head + ",".join(METRICS_FIELDS) + "\n" + "".join(m.csv_row() + "\n" for m in self.metrics)

    def write(self, directory: str | Path) -> Path:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        manifest = {"config": self.config.to_dict(), "derived_seeds": self.seeds,
                    "samples_per_client": self.plan.samples_per_client, "private": self.state.private}
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        (out / "metrics.csv").write_text(self.metrics_csv())
        self.state.ledger.write(out / "ledger.csv")
        with open(out / "model.npy", "wb") as f:
            np.save(f, self.state.prototypes)
        (out / "timing.csv").write_text(
            "round,seconds\n" + "".join(f"{m.round},{m.seconds:.6f}\n" for m in self.metrics)
        )
        return out


@functools.lru_cache(maxsize=8)
def _load_cached(name, path, sample_norm, train_subset, test_subset, synth) -> datasets.Dataset:
    if name == "synthetic":
        n, n_test, f, s, sep, seed = synth
        ds = datasets.synthetic(n, f, s, seed, n_test=n_test, separation=sep, sample_norm=sample_norm)
    else:
        ds = datasets.load(name, path, sample_norm=sample_norm)
    ds = ds.subset(train_subset, test_subset)
    for arr in (ds.train_x, ds.train_y, ds.test_x, ds.test_y):
        arr.setflags(write=False)
    return ds


def load_dataset(cfg: ExperimentConfig) -> datasets.Dataset:
    """Dataset named by ``cfg``; repeated calls in one process share arrays."""
    synth = None
    if cfg.dataset == "synthetic":
        synth = (cfg.synthetic_train, cfg.synthetic_test, cfg.synthetic_features, cfg.synthetic_classes,
                 cfg.synthetic_separation, derived_seed(cfg.seed, "synthetic"))
    return _load_cached(cfg.dataset, cfg.data_path, cfg.sample_norm, cfg.train_subset, cfg.test_subset, synth)


def make_partition(cfg: ExperimentConfig, ds: datasets.Dataset, seed: int | None = None) -> datasets.PartitionPlan:
    seed = derived_seed(cfg.seed, "partition") if seed is None else seed
    return datasets.partition(ds.train_y, cfg.partition, cfg.clients, cfg.samples_per_client, seed, ds.class_count)


def run_experiment(cfg: ExperimentConfig, dataset: datasets.Dataset | None = None,
                   write: bool = True) -> RunResult:
    """Train over the ring and evaluate per ``cfg.eval``.

    Files are written to ``cfg.output_dir`` when it is set and ``write`` is true.
    """
    ds = load_dataset(cfg) if dataset is None else dataset
    seeds = {
        "basis": derived_seed(cfg.seed, "basis"),
        "partition": derived_seed(cfg.seed, "partition"),
        "noise": derived_seed(cfg.seed, "noise"),
    }
    plan = make_partition(cfg, ds, seeds["partition"])
    params = acc.PrivacyParams(cfg.epsilon, cfg.delta0, cfg.dim, plan.samples_per_client, cfg.clients, cfg.rounds)
    basis = EncoderBasis.from_seed(seeds["basis"], ds.feature_dim, cfg.dim)
    # Encode each split once; clients hold row slices so every code path sees
    # the same bits for a given sample.
    train_enc = encode(ds.train_x, basis)
    test_enc = encode(ds.test_x, basis)
    clients = [Client(i + 1, ds.train_x[idx], ds.train_y[idx], train_enc[idx])
               for i, idx in enumerate(plan.assignments)]

    metrics: list[MetricsRecord] = []
    clock = [time.perf_counter()]

    def on_visit(state: ModelState, r: int, k: int) -> None:
        if k != cfg.clients or (cfg.eval == "final" and r != cfg.rounds):
            return
        ev = evaluate_encoded(state.prototypes, test_enc, ds.test_y)
        now = time.perf_counter()
        entry = state.ledger.last
        blackbox = acc.blackbox_cumulative_variance(params, r, k) if state.private else 0.0
        metrics.append(MetricsRecord(
            round=r,
            accuracy=ev.accuracy,
            per_class_accuracy=ev.per_class_accuracy.tolist(),
            cumulative_variance=entry.cumulative_variance,
            required_variance=entry.required_variance,
            blackbox_variance=blackbox,
            seconds=now - clock[0],
        ))
        clock[0] = now
        log.info("round %d/%d accuracy %.4f", r, cfg.rounds, ev.accuracy)

    state = run_federation(clients, params, basis, ds.class_count, seed=seeds["noise"], noise=cfg.noise,
                           retrain_passes=cfg.retrain_passes, on_visit=on_visit)
    state.ledger.check()
    result = RunResult(cfg, metrics, state, plan, seeds)
    if write and cfg.output_dir:
        result.write(cfg.output_dir)
    return result


@dataclass
class ReplicateSummary:
    value: Any
    seeds: list[int]
    final_accuracies: list[float]
    final_cumulative_variance: float

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.final_accuracies))

    @property
    def std_accuracy(self) -> float:
        return float(np.std(self.final_accuracies))


def run_replicates(cfg: ExperimentConfig, dataset: datasets.Dataset | None = None,
                   write: bool = True) -> tuple[list[RunResult], ReplicateSummary]:
    """One run per seed in ``cfg.seeds`` (or just ``cfg.seed``)."""
    seeds = cfg.seeds or [cfg.seed]
    results = []
    for s in seeds:
        out = str(Path(cfg.output_dir) / f"seed_{s}") if cfg.output_dir and cfg.seeds else cfg.output_dir
        results.append(run_experiment(cfg.replace(seed=s, seeds=None, output_dir=out), dataset, write))
    summary = ReplicateSummary(None, list(seeds), [r.final_accuracy for r in results],
                               results[0].state.ledger.cumulative_variance)
    if write and cfg.output_dir and cfg.seeds:
        _write_replicates(Path(cfg.output_dir), results)
    return results, summary


def _write_replicates(out: Path, results: list[RunResult]) -> None:
    rounds = [m.round for m in results[0].metrics]
    acc_table = np.array([[m.accuracy for m in r.metrics] for r in results])
    lines = ["round,mean_accuracy,std_accuracy,replicates"]
    for i, r in enumerate(rounds):
        lines.append(f"{r},{acc_table[:, i].mean():.6f},{acc_table[:, i].std():.6f},{len(results)}")
    (out / "replicates.csv").write_text("\n".join(lines) + "\n")


def _coerce(axis: str, value):
    if axis in ("epsilon", "delta0"):
        return float(value)
    as_float = float(value)
    if as_float != int(as_float):
        raise ConfigError(f"sweep axis {axis!r} needs integer values, got {value!r}")
    return int(as_float)


def run_sweep(cfg: ExperimentConfig, axis: str, values, dataset: datasets.Dataset | None = None,
              write: bool = True) -> list[ReplicateSummary]:
    """Run ``cfg`` once per value of ``axis``; each value gets its own seeds.

    The seed of value ``i`` is derived from ``(seed, axis, i)`` so no two
    values share random state. With a ``seeds`` list every replicate seed is
    derived the same way.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {', '.join(SWEEP_AXES)}")
    values = [_coerce(axis, v) for v in values]
    if not values:
        raise ConfigError("sweep needs at least one value")
    summaries = []
    for i, value in enumerate(values):
        base = cfg.seeds or [cfg.seed]
        sub_seeds = [derived_seed(s, axis, i) for s in base]
        out = str(Path(cfg.output_dir) / f"{axis}={value}") if cfg.output_dir else None
        sub = cfg.replace(**{axis: value}, seed=sub_seeds[0],
                          seeds=sub_seeds if cfg.seeds else None, output_dir=out)
        _, summary = run_replicates(sub, dataset, write)
        summary.value = value
        summaries.append(summary)
        log.info("%s=%s mean final accuracy %.4f", axis, value, summary.mean_accuracy)
    if write and cfg.output_dir:
        lines = [f"{axis},final_accuracy,final_accuracy_std,replicates,final_cumulative_variance"]
        for s in summaries:
            lines.append(f"{s.value!r},{s.mean_accuracy:.6f},{s.std_accuracy:.6f},{len(s.seeds)},"
                         f"{s.final_cumulative_variance:.17g}")
        Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
        (Path(cfg.output_dir) / "summary.csv").write_text("\n".join(lines) + "\n")
    return summaries


@dataclass(frozen=True)
class NoiseRow:
    round: int
    client: int
    incremental: float
    cumulative: float
    required: float
    blackbox: float

    @property
    def gap(self) -> float:
        return self.blackbox - self.required


NOISE_TABLE_FIELDS = ("round", "client", "incremental", "cumulative", "required", "blackbox", "gap")


def noise_table(params: acc.PrivacyParams) -> list[NoiseRow]:
    """Analytic schedule: what each step adds, carries, needs, and would carry blind."""
    rows = []
    cumulative = 0.0
    for r, k in acc.schedule(params):
        inc = acc.incremental_variance(params, r, k)
        cumulative += inc
        rows.append(NoiseRow(r, k, inc, cumulative, acc.required_variance(params, r, k),
                             acc.blackbox_cumulative_variance(params, r, k)))
    return rows


def noise_table_params(cfg: ExperimentConfig) -> acc.PrivacyParams:
    """Privacy params for the analytic table; ``samples_per_client`` must be set
    or derivable from the dataset partition."""
    n = cfg.samples_per_client
    if n is None:
        n = make_partition(cfg, load_dataset(cfg)).samples_per_client
    return acc.PrivacyParams(cfg.epsilon, cfg.delta0, cfg.dim, n, cfg.clients, cfg.rounds)


def noise_table_csv(rows: list[NoiseRow]) -> str:
    lines = [",".join(NOISE_TABLE_FIELDS)]
    for row in rows:
        lines.append(",".join([str(row.round), str(row.client)] + [
            format(v, ".17g") for v in (row.incremental, row.cumulative, row.required, row.blackbox, row.gap)
        ]))
    return "\n".join(lines) + "\n"


def cross_validate_ledger(entries, rows: list[NoiseRow], params: acc.PrivacyParams) -> list[str]:
    """Compare a run ledger with the analytic table; returns a list of problems."""
    problems = []
    if len(entries) != len(rows):
        problems.append(f"ledger has {len(entries)} entries, table has {len(rows)} rows")
    previous = 0.0
    for m, (e, row) in enumerate(zip(entries, rows), start=1):
        where = f"step {m} (round={e.round}, client={e.client})"
        if (e.round, e.client) != (row.round, row.client):
            problems.append(f"{where}: position differs from table ({row.round}, {row.client})")
        if e.cumulative_variance != previous + e.added_variance:
            problems.append(f"{where}: cumulative != prior cumulative + added")
        if not math.isclose(e.cumulative_variance, row.required, rel_tol=acc.RELATIVE_TOLERANCE):
            problems.append(f"{where}: cumulative {e.cumulative_variance!r} != required {row.required!r}")
        if not math.isclose(e.added_variance, row.incremental, rel_tol=acc.RELATIVE_TOLERANCE):
            problems.append(f"{where}: added {e.added_variance!r} != incremental {row.incremental!r}")
        delta = params.delta0 / (m * params.samples_per_client)
        if not math.isclose(e.effective_delta, delta, rel_tol=1e-12):
            problems.append(f"{where}: effective_delta {e.effective_delta!r} != {delta!r}")
        previous = e.cumulative_variance
    return problems


def partition_dump(cfg: ExperimentConfig) -> datasets.PartitionPlan:
    ds = load_dataset(cfg)
    return make_partition(cfg, ds)
