"""Hyperdimensional classifier: encoding, class prototypes, inference, retraining.

Samples are handled as numpy arrays: a feature matrix of shape ``(n, F)`` with a
label vector of shape ``(n,)``. Hypervectors are float64 arrays of length ``D``;
class prototypes are stacked into an ``(S, D)`` matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class EncoderBasis:
    """Random projection vectors shared by every client of an experiment.

    Attributes:
        seed: Seed the basis was drawn from.
        feature_dim: Width ``F`` of the feature vectors it accepts.
        dim: Hypervector dimensionality ``D``.
        vectors: ``(D, F)`` array of standard normal draws.
    """

    seed: int
    feature_dim: int
    dim: int
    vectors: np.ndarray = field(repr=False, compare=False)

    @classmethod
    def from_seed(cls, seed: int, feature_dim: int, dim: int) -> EncoderBasis:
        if feature_dim < 1 or dim < 1:
            raise ConfigError(f"basis needs feature_dim >= 1 and dim >= 1, got F={feature_dim}, D={dim}")
        rng = np.random.default_rng(seed)
        vectors = rng.standard_normal((dim, feature_dim))
        vectors.setflags(write=False)
        return cls(seed=seed, feature_dim=feature_dim, dim=dim, vectors=vectors)


def encode(features, basis: EncoderBasis) -> np.ndarray:
    """Map features to hypervectors with ``h_d = cos(features . basis_d)``.

    Accepts a single feature vector ``(F,)`` or a batch ``(n, F)`` and returns
    ``(D,)`` or ``(n, D)`` accordingly. Every component lies in ``[-1, 1]``.

    The projection runs through BLAS, so the last bits of a row can depend on
    the batch it was encoded in. Callers that need bitwise agreement between
    two code paths should encode a split once and slice the result.
    """
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != basis.feature_dim:
        got = x.shape[-1] if x.ndim >= 1 else 0
        raise ConfigError(f"feature dimensionality mismatch: expected F={basis.feature_dim}, got F={got}")
    h = np.cos(x @ basis.vectors.T)
    return h[0] if single else h


def _check_labels(labels: np.ndarray, class_count: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise DataError(f"labels must be one-dimensional, got shape {labels.shape}")
    bad = np.flatnonzero((labels < 0) | (labels >= class_count))
    if bad.size:
        i = int(bad[0])
        raise DataError(f"label {labels[i]!r} of sample {i} is outside [0, {class_count})")
    return labels.astype(np.intp, copy=False)


def accumulate(prototypes: np.ndarray, encodings: np.ndarray, labels) -> np.ndarray:
    """Return ``prototypes`` plus every encoding added onto its class row.

    Additions happen one sample at a time in the given order, so accumulating
    ``A`` and then ``B`` is bitwise equal to accumulating ``A`` followed by ``B``
    in a single call.
    """
    out = np.array(prototypes, dtype=np.float64, copy=True)
    encodings = np.asarray(encodings, dtype=np.float64)
    labels = _check_labels(labels, out.shape[0])
    if encodings.ndim != 2 or encodings.shape[0] != labels.shape[0]:
        raise DataError(f"got {encodings.shape[0] if encodings.ndim else 0} encodings for {labels.shape[0]} labels")
    if encodings.shape[1] != out.shape[1]:
        raise ConfigError(f"hypervector dimensionality mismatch: expected D={out.shape[1]}, got D={encodings.shape[1]}")
    np.add.at(out, labels, encodings)
    return out


def prototypes_from_encodings(encodings: np.ndarray, labels, class_count: int) -> np.ndarray:
    encodings = np.asarray(encodings, dtype=np.float64)
    dim = encodings.shape[1] if encodings.ndim == 2 else 0
    return accumulate(np.zeros((class_count, dim)), encodings.reshape(-1, dim), labels)


def form_class_prototypes(features, labels, basis: EncoderBasis, class_count: int) -> np.ndarray:
    """Sum the encodings of each class into an ``(S, D)`` prototype matrix.

    Classes without samples keep an all-zero prototype.
    """
    labels = _check_labels(labels, class_count)
    if labels.size == 0:
        return np.zeros((class_count, basis.dim))
    return prototypes_from_encodings(encode(features, basis), labels, class_count)


def similarities(queries: np.ndarray, prototypes: np.ndarray) -> np.ndarray:
    """Cosine similarity of each query with each prototype.

    Zero-norm prototypes (and zero queries) score 0. Returns shape ``(S,)`` for a
    single query and ``(n, S)`` for a batch.
    """
    q = np.asarray(queries, dtype=np.float64)
    c = np.asarray(prototypes, dtype=np.float64)
    if q.shape[-1] != c.shape[1]:
        raise ConfigError(f"hypervector dimensionality mismatch: expected D={c.shape[1]}, got D={q.shape[-1]}")
    c_norm = np.linalg.norm(c, axis=1)
    q_norm = np.linalg.norm(q, axis=-1)
    dots = q @ c.T
    denom = np.multiply.outer(q_norm, c_norm)
    with np.errstate(divide="ignore", invalid="ignore"):
        scores = np.where(denom > 0, dots / np.where(denom > 0, denom, 1.0), 0.0)
    return scores


def predict(query: np.ndarray, prototypes: np.ndarray) -> tuple[int, np.ndarray]:
    """Classify one hypervector; ties go to the lowest class index."""
    scores = similarities(query, prototypes)
    if scores.ndim != 1:
        raise ConfigError("predict expects a single query hypervector; use predict_batch")
    return int(np.argmax(scores)), scores


def predict_batch(queries: np.ndarray, prototypes: np.ndarray) -> np.ndarray:
    scores = similarities(np.atleast_2d(queries), prototypes)
    return np.argmax(scores, axis=1)


def retrain_encoded(prototypes: np.ndarray, encodings: np.ndarray, labels) -> tuple[np.ndarray, int]:
    """One ordered corrective pass over pre-encoded samples.

    Each sample is classified with the model as updated so far. A sample of
    class ``s`` predicted as ``s'`` moves its encoding from ``s'`` to ``s``.

    Returns:
        The updated prototypes (a new array) and the number of mispredictions.
    """
    c = np.array(prototypes, dtype=np.float64, copy=True)
    labels = _check_labels(labels, c.shape[0])
    encodings = np.asarray(encodings, dtype=np.float64)
    if encodings.ndim != 2 or encodings.shape[0] != labels.shape[0]:
        raise DataError(f"got {encodings.shape[0] if encodings.ndim else 0} encodings for {labels.shape[0]} labels")
    if encodings.shape[1] != c.shape[1]:
        raise ConfigError(f"hypervector dimensionality mismatch: expected D={c.shape[1]}, got D={encodings.shape[1]}")
    norms = np.linalg.norm(c, axis=1)
    misses = 0
    for h, true in zip(encodings, labels):
        denom = np.linalg.norm(h) * norms
        scores = np.where(denom > 0, (c @ h) / np.where(denom > 0, denom, 1.0), 0.0)
        guess = int(np.argmax(scores))
        if guess != true:
            c[guess] -= h
            c[true] += h
            norms[guess] = np.linalg.norm(c[guess])
            norms[true] = np.linalg.norm(c[true])
            misses += 1
    return c, misses


def retrain_pass(prototypes: np.ndarray, features, labels, basis: EncoderBasis) -> tuple[np.ndarray, int]:
    x = np.asarray(features, dtype=np.float64)
    if x.size == 0:
        return np.array(prototypes, dtype=np.float64, copy=True), 0
    return retrain_encoded(prototypes, encode(x, basis), labels)
