"""Ring-ordered training with incremental noise injection.

One model token travels ``client 1 -> ... -> client K`` and then back to
client 1 for the next round. In round 1 each client adds its own class sums
to the received prototypes; from round 2 on each client runs corrective
retraining on the received prototypes. After every visit the client adds
only the Gaussian noise variance the model is still missing and appends the
step to the ledger that travels with the token.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from . import accountant as acc
from .errors import ConfigError, DataError, HDFedError
from .hd import EncoderBasis, accumulate, encode, predict_batch, retrain_encoded


@dataclass
class Client:
    """A ring participant and its local training data.

    ``encodings`` may be supplied to skip re-encoding ``features``.
    """

    index: int
    features: np.ndarray
    labels: np.ndarray
    encodings: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.labels)

    def encoded(self, basis: EncoderBasis) -> np.ndarray:
        if self.encodings is None:
            self.encodings = encode(self.features, basis)
        return self.encodings


@dataclass
class ModelState:
    """The token passed around the ring: noisy prototypes plus their ledger."""

    prototypes: np.ndarray
    ledger: acc.NoiseLedger
    position: tuple[int, int] = (0, 0)

    @property
    def private(self) -> bool:
        return self.ledger.private

    def handoff(self) -> ModelState:
        """Copy passed to the next client; the sender keeps nothing shared."""
        return ModelState(self.prototypes.copy(), self.ledger.copy(), self.position)


VisitHook = Callable[[ModelState, int, int], None]


def run_federation(
    clients: Sequence[Client],
    params: acc.PrivacyParams,
    basis: EncoderBasis,
    class_count: int,
    *,
    seed: int = 0,
    noise: bool = True,
    retrain_passes: int = 1,
    on_visit: VisitHook | None = None,
) -> ModelState:
    """Run ``params.rounds`` rounds over ``clients`` in ring order.

    Args:
        clients: The ``K`` clients in ring order.
        params: Privacy budget and schedule shape; ``params.clients`` must equal
            ``len(clients)`` and ``params.dim`` must equal ``basis.dim``.
        basis: Encoder shared by all clients.
        class_count: Number of classes ``S``.
        seed: Noise seed. The draw at ``(r, k)`` uses its own generator derived
            from ``(seed, r, k)``.
        noise: ``False`` runs the non-private diagnostic mode (zero variance).
        retrain_passes: Corrective passes per client visit from round 2 on.
        on_visit: Called with a handoff copy of the state after every visit.

    Returns:
        The state held by client ``K`` after the last round.
    """
    if len(clients) != params.clients:
        raise ConfigError(f"params expect K={params.clients} clients, got {len(clients)}")
    if basis.dim != params.dim:
        raise ConfigError(f"basis has D={basis.dim} but params expect D={params.dim}")
    if retrain_passes < 0:
        raise ConfigError(f"retrain_passes must be >= 0, got {retrain_passes}")

    state = ModelState(np.zeros((class_count, basis.dim)), acc.NoiseLedger(params, private=noise))
    for r, k in acc.schedule(params):
        client = clients[k - 1]
        try:
            if len(client) == 0:
                raise DataError("client holds no training samples")
            enc = client.encoded(basis)
            if r == 1:
                prototypes = accumulate(state.prototypes, enc, client.labels)
            else:
                prototypes = state.prototypes
                for _ in range(retrain_passes):
                    prototypes, _ = retrain_encoded(prototypes, enc, client.labels)
            added = acc.incremental_variance(params, r, k) if noise else 0.0
            prototypes = prototypes + acc.draw_noise(added, basis.dim, class_count, acc.step_rng(seed, r, k))
            ledger = state.ledger.copy()
            ledger.record(r, k, added)
        except HDFedError as exc:
            raise type(exc)(f"(round={r}, client={k}): {exc}") from exc
        state = ModelState(prototypes, ledger, (r, k))
        if on_visit is not None:
            on_visit(state.handoff(), r, k)
    return state


@dataclass
class Evaluation:
    accuracy: float
    confusion: np.ndarray  # confusion[true, predicted]

    @property
    def per_class_accuracy(self) -> np.ndarray:
        totals = self.confusion.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(totals > 0, np.diag(self.confusion) / np.where(totals > 0, totals, 1), np.nan)


def evaluate_encoded(prototypes: np.ndarray, encodings: np.ndarray, labels) -> Evaluation:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise DataError("test set is empty")
    s = prototypes.shape[0]
    predicted = predict_batch(encodings, prototypes)
    confusion = np.zeros((s, s), dtype=np.int64)
    np.add.at(confusion, (labels, predicted), 1)
    return Evaluation(float(np.mean(predicted == labels)), confusion)


def evaluate(model: ModelState | np.ndarray, features, labels, basis: EncoderBasis) -> Evaluation:
    """Accuracy and confusion counts of the model on a held-out set."""
    prototypes = model.prototypes if isinstance(model, ModelState) else np.asarray(model)
    if np.size(labels) == 0:
        raise DataError("test set is empty")
    return evaluate_encoded(prototypes, encode(features, basis), labels)
