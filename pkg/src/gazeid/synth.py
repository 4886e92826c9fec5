"""Synthetic texts, reader populations, and datasets.

Ground-truth readers are built from population-default gamma densities,
perturbed per reader (divergence knob) and optionally warped away from the
gamma family by smooth random bumps in log-density space (gp_warp knob).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import gamma as gamma_mod
from .corpus import Scanpath, TextLine
from .density import grid_from_range, make_density
from .reader_model import ROLES, ReaderModel, generate

WORD_GAP = 1.0

# Base gamma parameters (shape, rate) per density role.  Chosen to give
# plausible saccade amplitudes in characters and fixation durations around
# 200 ms; these are knobs, not claims.
BASE_GAMMAS = {
    "alpha0": (4.0, 0.8),
    "alpha1": (2.0, 1.0),
    "alpha1_bar": (2.0, 1.0),
    "alpha2": (6.0, 1.0),
    "alpha3": (10.0, 0.8),
    "alpha4": (5.0, 0.7),
    "delta0": (8.0, 0.04),
    "delta1": (8.0, 0.04),
    "delta2": (8.0, 0.04),
    "delta3": (8.0, 0.04),
    "delta4": (8.0, 0.04),
}

BASE_PI = np.array([0.15, 0.55, 0.15, 0.15])
BASE_MU = 0.55

# Per-unit-divergence perturbation scales.
SHAPE_RATE_LOGSD = 0.2
PI_LOGSD = 0.3
MU_LOGITSD = 0.5

WARP_BUMPS = 3
QUADRATURE_COUNT = 512


@dataclass(frozen=True)
class PopulationSpec:
    reader_count: int
    sentences_train: int
    sentences_test: int
    words_per_sentence: tuple = (5, 9)
    word_length: tuple = (2.0, 10.0)
    divergence: float = 0.5
    gp_warp: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("reader_count", "sentences_train", "sentences_test"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("words_per_sentence", "word_length"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: min {lo} > max {hi}")
        if self.divergence < 0 or self.gp_warp < 0:
            raise ValueError("divergence and gp_warp must be >= 0")


def make_corpus(spec: PopulationSpec, rng: np.random.Generator) -> list:
    """Random text lines with unit inter-word gaps, train then test."""
    texts = []
    total = spec.sentences_train + spec.sentences_test
    wmin, wmax = spec.words_per_sentence
    lmin, lmax = spec.word_length
    for i in range(total):
        n_words = int(rng.integers(wmin, wmax + 1))
        words = []
        cursor = 0.0
        for _ in range(n_words):
            length = float(rng.uniform(lmin, lmax))
            words.append((cursor, cursor + length))
            cursor += length + WORD_GAP
        texts.append(TextLine(text_id=f"t{i:04d}", words=tuple(words)))
    return texts


def _truth_density(shape: float, rate: float, gp_warp: float,
                   rng: np.random.Generator):
    """Gamma density on a quantile-derived grid, optionally warped by
    random Gaussian bumps in the log density."""
    low = max(1e-6, float(stats.gamma.ppf(1e-4, shape, scale=1.0 / rate)) / 1.5)
    high = float(stats.gamma.ppf(1.0 - 1e-4, shape, scale=1.0 / rate)) * 1.5
    grid = grid_from_range(low, high, QUADRATURE_COUNT)
    nodes = grid.nodes
    g = np.zeros(nodes.size)
    if gp_warp > 0:
        width = (high - low) / 8.0
        centers = rng.uniform(low, high, WARP_BUMPS)
        amps = rng.normal(0.0, gp_warp, WARP_BUMPS)
        for c, a in zip(centers, amps):
            g += a * np.exp(-0.5 * ((nodes - c) / width) ** 2)
    else:
        rng.uniform(low, high, WARP_BUMPS)  # keep the stream aligned
        rng.normal(0.0, 1.0, WARP_BUMPS)
    eta = gamma_mod.from_shape_rate(shape, rate)
    return make_density(eta, g, grid)


def make_population(spec: PopulationSpec, rng: np.random.Generator) -> list:
    """Ground-truth reader models with divergence-scaled parameter noise
    and gp_warp-scaled density warping."""
    models = []
    for r in range(spec.reader_count):
        log_pi = np.log(BASE_PI) + rng.normal(
            0.0, PI_LOGSD * spec.divergence + 1e-12, 4
        )
        pi = np.exp(log_pi - log_pi.max())
        pi /= pi.sum()
        logit_mu = float(
            np.log(BASE_MU / (1.0 - BASE_MU))
            + rng.normal(0.0, MU_LOGITSD * spec.divergence + 1e-12)
        )
        mu = 1.0 / (1.0 + np.exp(-logit_mu))
        densities = {}
        for role in ROLES:
            shape, rate = BASE_GAMMAS[role]
            noise = rng.normal(0.0, SHAPE_RATE_LOGSD * spec.divergence + 1e-12, 2)
            shape_r = shape * float(np.exp(noise[0]))
            rate_r = rate * float(np.exp(noise[1]))
            densities[role] = _truth_density(shape_r, rate_r, spec.gp_warp, rng)
        models.append(
            ReaderModel(
                reader_id=f"r{r:04d}", pi=pi, mu=float(mu), densities=densities
            )
        )
    return models


def generate_dataset(models: list, corpus: list, spec: PopulationSpec,
                     seed: int) -> tuple:
    """One scanpath per (reader, sentence); the first sentences_train texts
    are the training split.  Streams are derived per (reader, sentence) so
    the output is independent of generation order."""
    train_texts = corpus[: spec.sentences_train]
    test_texts = corpus[spec.sentences_train:
                        spec.sentences_train + spec.sentences_test]
    train, test = [], []
    for r_idx, model in enumerate(models):
        for split, texts, out in (
            ("train", train_texts, train),
            ("test", test_texts, test),
        ):
            for t_idx, text in enumerate(texts):
                rng = np.random.default_rng(
                    np.random.SeedSequence(
                        [seed, r_idx, 0 if split == "train" else 1, t_idx]
                    )
                )
                max_fix = len(text.words) + 4
                out.append(generate(text, model, max_fix, rng))
    return train, test
