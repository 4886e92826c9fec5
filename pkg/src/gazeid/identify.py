"""Identification and verification from fitted reader models.

A test unit is the set of held-out scanpaths of one true reader.  Units
are scored against every reader model by summed scanpath log likelihood;
identification is the argmax, verification normalizes each unit's scores
by their probability-space average and sweeps a threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .reader_model import ReaderModel, ReaderPosterior, scanpath_log_likelihood

NEG_INF = -math.inf


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreMatrix:
    readers: tuple  # ordered reader ids (columns)
    test_units: tuple  # ordered unit ids (rows)
    log_scores: np.ndarray  # shape (units, readers)

    def __post_init__(self):
        m = np.asarray(self.log_scores, dtype=float)
        if m.shape != (len(self.test_units), len(self.readers)):
            raise EvaluationError("score matrix shape mismatch")
        if np.any(np.isnan(m)) or np.any(m == math.inf):
            raise EvaluationError("scores must be finite or -inf")
        object.__setattr__(self, "log_scores", m)


@dataclass(frozen=True)
class VerificationCurve:
    thresholds: np.ndarray
    far: np.ndarray  # false-accept rate, per threshold
    frr: np.ndarray  # false-reject rate, per threshold
    auc: float


def _as_model(model) -> ReaderModel:
    return model.mean_model if isinstance(model, ReaderPosterior) else model


def score(test_unit, model) -> float:
    """Sum of scanpath log likelihoods of one unit under one model; the
    unit is a list of (scanpath, text) pairs."""
    m = _as_model(model)
    return float(sum(scanpath_log_likelihood(sp, text, m) for sp, text in test_unit))


def score_matrix(models: dict, units: dict) -> ScoreMatrix:
    """Score every unit under every model.  models: reader_id -> model;
    units: unit_id -> list of (scanpath, text)."""
    readers = tuple(sorted(models))
    unit_ids = tuple(sorted(units))
    m = np.empty((len(unit_ids), len(readers)))
    for i, uid in enumerate(unit_ids):
        for j, rid in enumerate(readers):
            m[i, j] = score(units[uid], models[rid])
    return ScoreMatrix(readers=readers, test_units=unit_ids, log_scores=m)


def identify(matrix: ScoreMatrix) -> dict:
    """Most likely reader per unit; ties and all--inf rows go to the first
    reader in order (all--inf is additionally flagged as None)."""
    out = {}
    for i, uid in enumerate(matrix.test_units):
        row = matrix.log_scores[i]
        if np.all(row == NEG_INF):
            out[uid] = None
            continue
        out[uid] = matrix.readers[int(np.argmax(row))]
    return out


def multiclass_accuracy(predictions: dict, truth: dict) -> float:
    if set(predictions) != set(truth):
        raise EvaluationError("prediction and truth unit sets differ")
    if not truth:
        raise EvaluationError("no test units")
    return sum(predictions[u] == truth[u] for u in truth) / len(truth)


def normalized_verification_scores(matrix: ScoreMatrix) -> np.ndarray:
    """Per unit: log score minus the log of the average (in probability
    space) of the finite scores; -inf entries stay -inf."""
    m = matrix.log_scores
    out = np.full_like(m, NEG_INF)
    for i in range(m.shape[0]):
        row = m[i]
        finite = np.isfinite(row)
        if not np.any(finite):
            continue
        log_avg = logsumexp(row[finite]) - math.log(int(finite.sum()))
        out[i, finite] = row[finite] - log_avg
    return out


def verification_curve(normalized_scores: np.ndarray, genuine_mask: np.ndarray
                       ) -> VerificationCurve:
    """Sweep the acceptance threshold over all distinct scores plus +-inf.
    FAR(t) = impostor pairs with score >= t; FRR(t) = genuine pairs with
    score < t.  AUC is the trapezoid area under FAR as a function of FRR."""
    scores = np.asarray(normalized_scores, dtype=float).ravel()
    genuine = np.asarray(genuine_mask, dtype=bool).ravel()
    if scores.shape != genuine.shape:
        raise EvaluationError("scores and genuine mask shapes differ")
    n_gen = int(genuine.sum())
    n_imp = int((~genuine).sum())
    if n_gen == 0 or n_imp == 0:
        raise EvaluationError("need at least one genuine and one impostor pair")
    thresholds = np.concatenate(
        [[-math.inf], np.unique(scores[np.isfinite(scores)]), [math.inf]]
    )
    gen_scores = scores[genuine]
    imp_scores = scores[~genuine]
    far = np.array([(imp_scores >= t).sum() / n_imp for t in thresholds])
    frr = np.array([(gen_scores < t).sum() / n_gen for t in thresholds])
    order = np.argsort(frr, kind="stable")
    auc = float(np.trapezoid(far[order], frr[order]))
    return VerificationCurve(thresholds=thresholds, far=far, frr=frr, auc=auc)


def genuine_mask(matrix: ScoreMatrix, truth: dict) -> np.ndarray:
    return np.array(
        [[truth[uid] == rid for rid in matrix.readers]
         for uid in matrix.test_units]
    )


# ---------------------------------------------------------------------------
# Evaluation protocol


def scanpath_score_tensor(models: dict, units: dict):
    """Per-scanpath log likelihoods, so subset evaluations reuse the
    expensive scoring.  Returns (readers, unit_ids, {unit: array of shape
    (n_scanpaths, n_readers)})."""
    readers = tuple(sorted(models))
    unit_ids = tuple(sorted(units))
    tensors = {}
    for uid in unit_ids:
        pairs = units[uid]
        t = np.empty((len(pairs), len(readers)))
        for i, (sp, text) in enumerate(pairs):
            for j, rid in enumerate(readers):
                t[i, j] = scanpath_log_likelihood(sp, text, _as_model(models[rid]))
        tensors[uid] = t
    return readers, unit_ids, tensors


def _matrix_from_tensor(readers, unit_ids, tensors, unit_subset=None,
                        scanpath_indices=None, reader_subset=None):
    units = tuple(unit_subset) if unit_subset is not None else unit_ids
    cols = (
        [readers.index(r) for r in reader_subset]
        if reader_subset is not None else list(range(len(readers)))
    )
    rows = []
    for uid in units:
        t = tensors[uid]
        idx = scanpath_indices[uid] if scanpath_indices is not None else slice(None)
        rows.append(t[idx][:, cols].sum(axis=0))
    sel_readers = tuple(reader_subset) if reader_subset is not None else readers
    return ScoreMatrix(
        readers=sel_readers, test_units=units, log_scores=np.array(rows)
    )


def evaluate(models: dict, units: dict, truth: dict, *,
             subset_size=None, test_fraction=1.0, repeats=1, seed=0) -> dict:
    """Identification accuracy and verification AUC, optionally over random
    reader subsets and random test-sentence fractions, averaged over
    repeats with standard errors."""
    readers, unit_ids, tensors = scanpath_score_tensor(models, units)
    if subset_size is not None and subset_size > len(readers):
        raise EvaluationError(
            f"subset size {subset_size} exceeds population {len(readers)}"
        )
    accs, aucs = [], []
    predictions = None
    rng = np.random.default_rng(seed)
    for _ in range(repeats):
        if subset_size is not None:
            sel = sorted(rng.choice(len(readers), subset_size, replace=False))
            reader_subset = tuple(readers[j] for j in sel)
            unit_subset = tuple(u for u in unit_ids if truth[u] in reader_subset)
        else:
            reader_subset, unit_subset = None, unit_ids
        if test_fraction < 1.0:
            scanpath_indices = {}
            for uid in unit_subset:
                n = tensors[uid].shape[0]
                k = max(1, int(round(test_fraction * n)))
                scanpath_indices[uid] = sorted(
                    rng.choice(n, k, replace=False)
                )
        else:
            scanpath_indices = None
        matrix = _matrix_from_tensor(
            readers, unit_ids, tensors,
            unit_subset=unit_subset,
            scanpath_indices=scanpath_indices,
            reader_subset=reader_subset,
        )
        preds = identify(matrix)
        accs.append(
            multiclass_accuracy(preds, {u: truth[u] for u in matrix.test_units})
        )
        norm = normalized_verification_scores(matrix)
        mask = genuine_mask(matrix, truth)
        if mask.all() or not mask.any():
            aucs.append(math.nan)
        else:
            aucs.append(verification_curve(norm, mask).auc)
        predictions = preds
    accs_arr = np.array(accs)
    aucs_arr = np.array(aucs)
    report = {
        "accuracy": float(accs_arr.mean()),
        "accuracy_se": float(
            accs_arr.std(ddof=1) / math.sqrt(repeats) if repeats > 1 else 0.0
        ),
        "auc": float(np.nanmean(aucs_arr)) if not np.all(np.isnan(aucs_arr)) else None,
        "repeats": repeats,
        "subset_size": subset_size,
        "test_fraction": test_fraction,
        "predictions": predictions,
    }
    return report
