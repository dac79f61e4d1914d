"""Gaussian noise accounting for a ring of clients.

Every visit of client ``k`` in round ``r`` is a global step
``m = K (r - 1) + k``. After step ``m`` the model aggregates ``m N`` samples, so
protecting all of them with the Gaussian mechanism (sensitivity ``sqrt(D)``,
``delta = delta0 / (m N)``) needs a total noise variance of::

    required(m) = (2 D / eps^2) * ln(1.25 m N / delta0)

Because independent Gaussian variances add, a client that knows the variance
already carried by the model only has to add the difference::

    added(1)    = required(1)
    added(m>1)  = (2 D / eps^2) * ln(m / (m - 1))

and the running total telescopes back to ``required(m)``. Without that
knowledge every client adds the full ``required(m)`` and the total becomes::

    blackbox(m) = (2 D / eps^2) * (m ln(1.25 N / delta0) + ln m!)

:class:`NoiseLedger` keeps the per-step record so any handoff can be audited.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, InvariantError, LoadError, ProtocolError

LEDGER_FIELDS = (
    "round",
    "client",
    "added_variance",
    "cumulative_variance",
    "required_variance",
    "effective_delta",
)
RELATIVE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class PrivacyParams:
    """Privacy budget and schedule shape.

    Attributes:
        epsilon: Privacy budget, ``> 0``.
        delta0: Base privacy-loss coefficient in ``(0, 1)``; the per-step
            ``delta`` is ``delta0`` divided by the number of aggregated samples.
        dim: Hypervector dimensionality ``D``.
        samples_per_client: ``N``.
        clients: ``K``.
        rounds: ``R``.
    """

    epsilon: float
    delta0: float
    dim: int
    samples_per_client: int
    clients: int
    rounds: int

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ConfigError(f"epsilon must be a finite positive number, got {self.epsilon!r}")
        if not 0 < self.delta0 < 1:
            raise ConfigError(f"delta0 must lie in (0, 1), got {self.delta0!r}")
        for name in ("dim", "samples_per_client", "clients", "rounds"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {value!r}")

    @property
    def scale(self) -> float:
        """``2 D / eps^2``, the factor shared by every variance."""
        return 2.0 * self.dim / self.epsilon**2

    @property
    def total_steps(self) -> int:
        return self.clients * self.rounds

    def step(self, r: int, k: int) -> int:
        """Global ring position ``K (r - 1) + k`` of client ``k`` in round ``r``."""
        if not (1 <= r <= self.rounds and 1 <= k <= self.clients):
            raise ConfigError(f"(round={r}, client={k}) is outside R={self.rounds}, K={self.clients}")
        return self.clients * (r - 1) + k

    def position(self, m: int) -> tuple[int, int]:
        """Inverse of :meth:`step`."""
        if not 1 <= m <= self.total_steps:
            raise ConfigError(f"step {m} is outside [1, {self.total_steps}]")
        r, k = divmod(m - 1, self.clients)
        return r + 1, k + 1


def gaussian_variance(dim: float, epsilon: float, delta: float) -> float:
    """Smallest variance for which the Gaussian mechanism with l2 sensitivity
    ``sqrt(dim)`` is ``(epsilon, delta)``-DP: ``2 dim / eps^2 * ln(1.25 / delta)``."""
    return 2.0 * dim / epsilon**2 * math.log(1.25 / delta)


def effective_delta(params: PrivacyParams, r: int, k: int) -> float:
    return params.delta0 / (params.step(r, k) * params.samples_per_client)


def required_variance(params: PrivacyParams, r: int, k: int) -> float:
    """Total variance needed once step ``(r, k)`` has aggregated its samples."""
    m = params.step(r, k)
    return params.scale * math.log(1.25 * m * params.samples_per_client / params.delta0)


def incremental_variance(params: PrivacyParams, r: int, k: int) -> float:
    """Variance client ``k`` adds in round ``r`` on top of what it received."""
    m = params.step(r, k)
    if m == 1:
        return params.scale * math.log(1.25 * params.samples_per_client / params.delta0)
    # log1p(1/(m-1)) == ln(m/(m-1)) without cancellation for large m
    return params.scale * math.log1p(1.0 / (m - 1))


def blackbox_cumulative_variance(params: PrivacyParams, r: int, k: int) -> float:
    """Total variance when every step re-adds its full required dose.

    ``ln m!`` is evaluated as ``lgamma(m + 1)``.
    """
    m = params.step(r, k)
    base = math.log(1.25 * params.samples_per_client / params.delta0)
    return params.scale * (m * base + math.lgamma(m + 1))


def _steps(params: PrivacyParams) -> np.ndarray:
    return np.arange(1, params.total_steps + 1, dtype=np.float64)


def required_variances(params: PrivacyParams) -> np.ndarray:
    """:func:`required_variance` for every step of the schedule, in ring order."""
    return params.scale * np.log(1.25 * _steps(params) * params.samples_per_client / params.delta0)


def incremental_variances(params: PrivacyParams) -> np.ndarray:
    """:func:`incremental_variance` for every step of the schedule, in ring order."""
    m = _steps(params)
    out = np.empty_like(m)
    out[0] = params.scale * math.log(1.25 * params.samples_per_client / params.delta0)
    out[1:] = params.scale * np.log1p(1.0 / (m[1:] - 1))
    return out


def blackbox_variances(params: PrivacyParams) -> np.ndarray:
    """:func:`blackbox_cumulative_variance` for every step of the schedule."""
    m = _steps(params)
    base = math.log(1.25 * params.samples_per_client / params.delta0)
    log_factorial = np.fromiter((math.lgamma(v + 1) for v in m), dtype=np.float64, count=m.size)
    return params.scale * (m * base + log_factorial)


def schedule(params: PrivacyParams):
    """Yield ``(r, k)`` in ring order for the whole run."""
    for r in range(1, params.rounds + 1):
        for k in range(1, params.clients + 1):
            yield r, k


def step_rng(seed: int, r: int, k: int) -> np.random.Generator:
    """Independent generator for one noise injection, reproducible in isolation."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(r), int(k)]))


def draw_noise(variance: float, dim: int, class_count: int, rng: np.random.Generator) -> np.ndarray:
    """``(class_count, dim)`` i.i.d. zero-mean Gaussian draws with ``variance``."""
    if not variance >= 0:
        raise InvariantError(f"noise variance must be non-negative, got {variance!r}")
    if variance == 0:
        return np.zeros((class_count, dim))
    return rng.normal(0.0, math.sqrt(variance), size=(class_count, dim))


class LedgerEntry(NamedTuple):
    round: int
    client: int
    added_variance: float
    cumulative_variance: float
    required_variance: float
    effective_delta: float


@dataclass
class NoiseLedger:
    """Append-only record of the noise injected at each ring step.

    ``private=False`` marks a diagnostic run with noise disabled; its entries
    carry zero variances and it is labelled non-private wherever it is written.
    """

    params: PrivacyParams
    private: bool = True
    entries: list[LedgerEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def last(self) -> LedgerEntry | None:
        return self.entries[-1] if self.entries else None

    @property
    def cumulative_variance(self) -> float:
        """Variance the model currently carries (0 before the first step)."""
        return self.entries[-1].cumulative_variance if self.entries else 0.0

    def next_position(self) -> tuple[int, int]:
        return self.params.position(len(self.entries) + 1)

    def record(self, r: int, k: int, added_variance: float) -> LedgerEntry:
        if len(self.entries) >= self.params.total_steps:
            raise ProtocolError(f"ledger is complete; cannot append (round={r}, client={k})")
        expected = self.next_position()
        if (r, k) != expected:
            raise ProtocolError(
                f"out-of-order ledger append: got (round={r}, client={k}), expected {expected}"
            )
        if not added_variance >= 0:
            raise InvariantError(f"added variance must be non-negative, got {added_variance!r}")
        required = required_variance(self.params, r, k) if self.private else 0.0
        entry = LedgerEntry(
            round=r,
            client=k,
            added_variance=float(added_variance),
            cumulative_variance=self.cumulative_variance + float(added_variance),
            required_variance=required,
            effective_delta=effective_delta(self.params, r, k),
        )
        self.entries.append(entry)
        return entry

    def copy(self) -> NoiseLedger:
        return NoiseLedger(self.params, self.private, list(self.entries))

    def check(self) -> None:
        """Raise :class:`InvariantError` unless every entry is internally consistent."""
        previous = 0.0
        for i, e in enumerate(self.entries):
            m = i + 1
            if (e.round, e.client) != self.params.position(m):
                raise InvariantError(f"entry {m} is at {(e.round, e.client)}, expected {self.params.position(m)}")
            if e.cumulative_variance != previous + e.added_variance:
                raise InvariantError(f"entry {m}: cumulative does not equal prior cumulative plus added")
            if abs(e.cumulative_variance - e.required_variance) > RELATIVE_TOLERANCE * e.required_variance:
                raise InvariantError(
                    f"entry {m}: cumulative {e.cumulative_variance!r} differs from required {e.required_variance!r}"
                )
            want_delta = self.params.delta0 / (m * self.params.samples_per_client)
            if not math.isclose(e.effective_delta, want_delta, rel_tol=1e-15):
                raise InvariantError(f"entry {m}: effective_delta {e.effective_delta!r} != {want_delta!r}")
            previous = e.cumulative_variance

    def to_csv(self) -> str:
        """Ledger as CSV text; floats carry 17 significant digits."""
        buf = io.StringIO()
        buf.write(f"# private={'true' if self.private else 'false (diagnostic run, no noise)'}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(LEDGER_FIELDS)
        for e in self.entries:
            writer.writerow([e.round, e.client] + [format(v, ".17g") for v in e[2:]])
        return buf.getvalue()

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())


def read_ledger(path: str | Path) -> list[LedgerEntry]:
    """Parse a file written by :meth:`NoiseLedger.write`."""
    entries = []
    with open(path, newline="") as f:
        rows = (line for line in f if not line.startswith("#"))
        reader = csv.reader(rows)
        header = next(reader, None)
        if tuple(header or ()) != LEDGER_FIELDS:
            raise LoadError(f"{path}: unexpected ledger header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            try:
                entries.append(LedgerEntry(int(row[0]), int(row[1]), *map(float, row[2:6])))
            except (ValueError, IndexError) as exc:
                raise LoadError(f"{path}: line {lineno}: {exc}") from None
    return entries
