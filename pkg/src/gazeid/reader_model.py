"""Per-reader generative model: saccade-type probabilities, the refixation
direction mixture, and eleven semiparametric densities (initial position,
five amplitude roles, five duration roles).

Negative-valued amplitude branches (backward refixations, regressions) are
modeled on the magnitude, so all densities live on positive supports; the
sign flip happens here when routing observations and evaluating
likelihoods.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import gamma as gamma_mod
from .corpus import (
    NEGATIVE,
    POSITIVE,
    POSITION_MARGIN,
    SaccadeType,
    Scanpath,
    Fixation,
    TextLine,
    classify_saccade,
    decompose,
    truncation_interval,
    word_index,
)
from .density import (
    DEFAULT_EXTENSION_FACTOR,
    DEFAULT_QUADRATURE_COUNT,
    GRID_LOW_FLOOR,
    InfeasibleTruncationError,
    SemiparametricDensity,
    SupportGrid,
    build_grid,
    gamma_density,
    grid_from_range,
    make_density,
)
from .gp import CovarianceConfig, average_pairwise_distance
from .sampler import (
    DensityPosterior,
    MHConfig,
    TruncatedObservations,
    run_chain,
)

NEG_INF = -math.inf
INF = math.inf

ROLES = (
    "alpha0", "alpha1", "alpha1_bar", "alpha2", "alpha3", "alpha4",
    "delta0", "delta1", "delta2", "delta3", "delta4",
)

DURATION_ROLES = ("delta0", "delta1", "delta2", "delta3", "delta4")

_DURATION_ROLE = {
    SaccadeType.REFIXATION: "delta1",
    SaccadeType.NEXT_WORD: "delta2",
    SaccadeType.FORWARD_SKIP: "delta3",
    SaccadeType.REGRESSION: "delta4",
}

# Support ranges for prior-mean fallback densities (< 2 observations).
_FALLBACK_RANGE = {"duration": (1.0, 2000.0), "other": (1e-6, 50.0)}

MODEL_SCHEMA_VERSION = 1


class ModelError(ValueError):
    pass


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ReaderModel:
    reader_id: str
    pi: np.ndarray  # P(saccade type), indexed by SaccadeType - 1
    mu: float  # P(forward branch | refixation)
    densities: dict
    fallback_roles: frozenset = frozenset()

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        if pi.shape != (4,) or np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-9:
            raise ModelError(f"pi must be a probability 4-vector, got {pi}")
        if not 0.0 <= self.mu <= 1.0:
            raise ModelError(f"mu must be in [0, 1], got {self.mu}")
        missing = [r for r in ROLES if r not in self.densities]
        if missing:
            raise ModelError(f"missing density roles: {missing}")
        object.__setattr__(self, "pi", pi)


@dataclass
class ReaderPosterior:
    reader_id: str
    pi_counts: np.ndarray  # Dirichlet posterior counts
    mu_counts: tuple  # Beta posterior counts (positive, negative)
    density_posteriors: dict
    mean_model: ReaderModel


@dataclass(frozen=True)
class FitConfig:
    lambda_: float = 1.0
    rho: float = 1.0
    gp_amplitude: float = 1.0
    eta_step: float = 0.05
    iterations: int = 10000
    burn_in: int = 5000
    thinning: int = 5
    quadrature_count: int = DEFAULT_QUADRATURE_COUNT
    extension_factor: float = DEFAULT_EXTENSION_FACTOR
    seed: int = 0
    adapt_eta_step: bool = False
    keep_samples: bool = True


def derived_seed(seed: int, reader_id: str, role: str) -> int:
    ss = np.random.SeedSequence(
        [seed, zlib.crc32(reader_id.encode()), ROLES.index(role)]
    )
    return int(ss.generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# Observation routing


def collect_observations(scanpaths, texts: dict):
    """Route every fixation/saccade to its density role.

    Returns (observations by role, saccade type counts, refixation branch
    counts).  Amplitudes of backward refixations and regressions enter as
    magnitudes with the truncation interval flipped accordingly.
    """
    buf = {role: ([], [], []) for role in ROLES}
    type_counts = np.zeros(4)
    branch_counts = [0, 0]  # positive, negative

    def push(role, y, l, r):
        ys, ls, rs = buf[role]
        ys.append(y)
        ls.append(l)
        rs.append(r)

    for sp in scanpaths:
        text = texts[sp.text_id]
        (s1, d1), events = decompose(sp, text)
        push("alpha0", s1, 0.0, INF)
        push("delta0", d1, 0.0, INF)
        for ev in events:
            type_counts[ev.type - 1] += 1
            push(_DURATION_ROLE[ev.type], ev.duration, 0.0, INF)
            a, l, r = ev.amplitude, ev.trunc_left, ev.trunc_right
            if ev.type is SaccadeType.REFIXATION:
                if ev.sign_branch == POSITIVE:
                    branch_counts[0] += 1
                    push("alpha1", a, l, r)
                else:
                    branch_counts[1] += 1
                    push("alpha1_bar", -a, -r, -l)
            elif ev.type is SaccadeType.NEXT_WORD:
                push("alpha2", a, l, r)
            elif ev.type is SaccadeType.FORWARD_SKIP:
                push("alpha3", a, l, r)
            else:
                push("alpha4", -a, -r, -l)

    obs = {
        role: TruncatedObservations(
            y=np.array(ys), l=np.array(ls), r=np.array(rs)
        )
        for role, (ys, ls, rs) in buf.items()
    }
    return obs, type_counts, tuple(branch_counts)


def _fallback_density(role: str, obs: TruncatedObservations,
                      quadrature_count: int, extension_factor: float):
    """Prior-mean density for roles with too little data for MCMC."""
    if len(obs) >= 1:
        grid = build_grid(obs.y, quadrature_count, extension_factor)
    else:
        lo, hi = _FALLBACK_RANGE["duration" if role in DURATION_ROLES else "other"]
        grid = grid_from_range(lo, hi, quadrature_count)
    mid = 0.5 * (grid.grid_low + grid.grid_high)
    eta = gamma_mod.from_shape_rate(2.0, 2.0 / mid)
    return gamma_density(eta, grid)


# Refixation magnitudes have truncation intervals anchored at 0, so their
# grids must reach (nearly) 0 or a test event inside a narrow word sliver
# gets zero mass; the other roles keep the data-driven lower edge.
_ZERO_ANCHORED_ROLES = ("alpha1", "alpha1_bar")


def _role_grid(role: str, y: np.ndarray, quadrature_count: int,
               extension_factor: float) -> SupportGrid:
    grid = build_grid(y, quadrature_count, extension_factor)
    if role in _ZERO_ANCHORED_ROLES and grid.grid_low > GRID_LOW_FLOOR:
        return SupportGrid(
            observation_points=grid.observation_points,
            quadrature_points=np.linspace(
                GRID_LOW_FLOOR, grid.grid_high, quadrature_count
            ),
            grid_low=GRID_LOW_FLOOR,
            grid_high=grid.grid_high,
        )
    return grid


def _role_bandwidth(y: np.ndarray, grid: SupportGrid) -> float:
    if y.size >= 2:
        bw = average_pairwise_distance(y)
        if bw > 0:
            return bw
    return (grid.grid_high - grid.grid_low) / 8.0


def fit(scanpaths, texts: dict, config: FitConfig) -> ReaderPosterior:
    """Fit one reader: conjugate updates for pi and mu, one MH chain per
    density role."""
    scanpaths = list(scanpaths)
    if not scanpaths:
        raise ModelError("no scanpaths to fit")
    reader_id = scanpaths[0].reader_id
    obs_map, type_counts, branch_counts = collect_observations(scanpaths, texts)

    pi_counts = config.lambda_ + type_counts
    pi_mean = pi_counts / pi_counts.sum()
    mu_counts = (config.rho + branch_counts[0], config.rho + branch_counts[1])
    mu_mean = mu_counts[0] / (mu_counts[0] + mu_counts[1])

    density_posteriors = {}
    densities = {}
    fallback_roles = set()
    for role in ROLES:
        obs = obs_map[role]
        if len(obs) < 2:
            dens = _fallback_density(
                role, obs, config.quadrature_count, config.extension_factor
            )
            density_posteriors[role] = DensityPosterior(
                samples=[], mean_density=dens, acceptance_rate=0.0, fallback=True
            )
            densities[role] = dens
            fallback_roles.add(role)
            continue
        grid = _role_grid(role, obs.y, config.quadrature_count,
                          config.extension_factor)
        cov = CovarianceConfig(
            amplitude=config.gp_amplitude,
            bandwidth=_role_bandwidth(obs.y, grid),
        )
        mh = MHConfig(
            iterations=config.iterations,
            burn_in=config.burn_in,
            eta_step=config.eta_step,
            thinning=config.thinning,
            seed=derived_seed(config.seed, reader_id, role),
            adapt_eta_step=config.adapt_eta_step,
            keep_samples=config.keep_samples,
        )
        post = run_chain(obs, grid, cov, mh)
        density_posteriors[role] = post
        densities[role] = post.mean_density

    mean_model = ReaderModel(
        reader_id=reader_id,
        pi=pi_mean,
        mu=mu_mean,
        densities=densities,
        fallback_roles=frozenset(fallback_roles),
    )
    return ReaderPosterior(
        reader_id=reader_id,
        pi_counts=pi_counts,
        mu_counts=mu_counts,
        density_posteriors=density_posteriors,
        mean_model=mean_model,
    )


def fit_gamma_baseline(scanpaths, texts: dict, config: FitConfig) -> ReaderModel:
    """Fully parametric baseline: each density is the maximum-likelihood
    gamma (truncation ignored), no latent correction."""
    scanpaths = list(scanpaths)
    if not scanpaths:
        raise ModelError("no scanpaths to fit")
    reader_id = scanpaths[0].reader_id
    obs_map, type_counts, branch_counts = collect_observations(scanpaths, texts)
    pi_counts = config.lambda_ + type_counts
    mu_counts = (config.rho + branch_counts[0], config.rho + branch_counts[1])

    densities = {}
    fallback_roles = set()
    for role in ROLES:
        obs = obs_map[role]
        try:
            eta = gamma_mod.fit_mle(obs.y)
            grid = _role_grid(role, obs.y, config.quadrature_count,
                              config.extension_factor)
            densities[role] = gamma_density(eta, grid)
        except gamma_mod.GammaError:
            densities[role] = _fallback_density(
                role, obs, config.quadrature_count, config.extension_factor
            )
            fallback_roles.add(role)
    return ReaderModel(
        reader_id=reader_id,
        pi=pi_counts / pi_counts.sum(),
        mu=mu_counts[0] / (mu_counts[0] + mu_counts[1]),
        densities=densities,
        fallback_roles=frozenset(fallback_roles),
    )


# ---------------------------------------------------------------------------
# Likelihood


def _log(p: float) -> float:
    return math.log(p) if p > 0.0 else NEG_INF


def _amplitude_log_term(model: ReaderModel, ev) -> float:
    a, l, r = ev.amplitude, ev.trunc_left, ev.trunc_right
    d = model.densities
    try:
        if ev.type is SaccadeType.REFIXATION:
            if a > 0:
                return _log(model.mu) + d["alpha1"].truncated_log_pdf(a, l, r)
            return _log(1.0 - model.mu) + d["alpha1_bar"].truncated_log_pdf(
                -a, -r, -l
            )
        if ev.type is SaccadeType.NEXT_WORD:
            return d["alpha2"].truncated_log_pdf(a, l, r)
        if ev.type is SaccadeType.FORWARD_SKIP:
            return d["alpha3"].truncated_log_pdf(a, l, r)
        return d["alpha4"].truncated_log_pdf(-a, -r, -l)
    except InfeasibleTruncationError:
        return NEG_INF


def scanpath_log_likelihood(scanpath: Scanpath, text: TextLine,
                            model: ReaderModel) -> float:
    (s1, d1), events = decompose(scanpath, text)
    d = model.densities
    ll = d["alpha0"].log_pdf(s1) + d["delta0"].log_pdf(d1)
    for ev in events:
        ll += _log(float(model.pi[ev.type - 1]))
        ll += _amplitude_log_term(model, ev)
        ll += d[_DURATION_ROLE[ev.type]].log_pdf(ev.duration)
        if ll == NEG_INF:
            return NEG_INF
    return float(ll)


# ---------------------------------------------------------------------------
# Generation

_MAX_AMPLITUDE_ATTEMPTS = 50


def _refixation_branch_weights(model: ReaderModel, l_cur: float, r_cur: float):
    w_pos = model.mu if (
        r_cur > 0 and model.densities["alpha1"].truncated_mass(0.0, r_cur) > 0
    ) else 0.0
    w_neg = (1.0 - model.mu) if (
        l_cur < 0 and model.densities["alpha1_bar"].truncated_mass(0.0, -l_cur) > 0
    ) else 0.0
    return w_pos, w_neg


def _feasible_types(model: ReaderModel, text: TextLine, s: float):
    c = word_index(text, s)
    wl, wr = text.words[c]
    l_cur, r_cur = wl - s, wr - s
    d = model.densities
    feasible = {}
    w_pos, w_neg = _refixation_branch_weights(model, l_cur, r_cur)
    if w_pos + w_neg > 0:
        feasible[SaccadeType.REFIXATION] = (l_cur, r_cur)
    if c + 1 < len(text.words):
        nl, nr = text.words[c + 1]
        l_next, r_next = nl - s, nr - s
        if d["alpha2"].truncated_mass(l_next, r_next) > 0:
            feasible[SaccadeType.NEXT_WORD] = (l_next, r_next)
        if c + 2 < len(text.words) and d["alpha3"].truncated_mass(r_next, INF) > 0:
            feasible[SaccadeType.FORWARD_SKIP] = (r_next, INF)
    if c >= 1 and d["alpha4"].truncated_mass(max(-l_cur, 0.0), INF) > 0:
        feasible[SaccadeType.REGRESSION] = (-INF, l_cur)
    return c, (l_cur, r_cur), feasible


def _draw_amplitude(model: ReaderModel, u: SaccadeType, interval, cur_extent,
                    rng: np.random.Generator) -> float:
    d = model.densities
    l, r = interval
    if u is SaccadeType.REFIXATION:
        l_cur, r_cur = cur_extent
        w_pos, w_neg = _refixation_branch_weights(model, l_cur, r_cur)
        if rng.uniform() * (w_pos + w_neg) < w_pos:
            return d["alpha1"].sample_truncated(0.0, r_cur, rng)
        return -d["alpha1_bar"].sample_truncated(0.0, -l_cur, rng)
    if u is SaccadeType.NEXT_WORD:
        return d["alpha2"].sample_truncated(l, r, rng)
    if u is SaccadeType.FORWARD_SKIP:
        return d["alpha3"].sample_truncated(l, INF, rng)
    return -d["alpha4"].sample_truncated(max(-r, 0.0), INF, rng)


def generate(text: TextLine, model: ReaderModel, max_fixations: int,
             rng: np.random.Generator) -> Scanpath:
    """Sample a scanpath.  Types are drawn from pi restricted to the
    structurally feasible set; amplitudes that re-classify differently
    (gap landings near word boundaries) are resampled."""
    d = model.densities
    try:
        s = d["alpha0"].sample_truncated(max(text.left, 0.0), text.right, rng)
    except InfeasibleTruncationError as e:
        raise GenerationError(
            f"initial-position density has no mass on text {text.text_id!r}"
        ) from e
    dur = d["delta0"].sample_truncated(0.0, INF, rng)
    fixations = [Fixation(position=s, duration=dur)]

    lo = text.left - POSITION_MARGIN
    hi = text.right + POSITION_MARGIN
    while len(fixations) < max_fixations:
        _c, cur_extent, feasible = _feasible_types(model, text, s)
        placed = False
        while feasible and not placed:
            types = sorted(feasible)
            weights = np.array([model.pi[u - 1] for u in types])
            if weights.sum() <= 0:
                break
            u = types[rng.choice(len(types), p=weights / weights.sum())]
            for _ in range(_MAX_AMPLITUDE_ATTEMPTS):
                a = _draw_amplitude(model, u, feasible[u], cur_extent, rng)
                new = s + a
                if lo <= new <= hi and classify_saccade(s, new, text) == u:
                    dur = d[_DURATION_ROLE[u]].sample_truncated(0.0, INF, rng)
                    fixations.append(Fixation(position=new, duration=dur))
                    s = new
                    placed = True
                    break
            else:
                del feasible[u]  # type unusable here, try the others
        if not placed:
            break
    return Scanpath(
        reader_id=model.reader_id,
        text_id=text.text_id,
        fixations=tuple(fixations),
    )


# ---------------------------------------------------------------------------
# Serialization


def _density_to_dict(dens: SemiparametricDensity, fallback: bool) -> dict:
    grid = dens.grid
    return {
        "eta": [dens.eta.eta1, dens.eta.eta2],
        "grid": {
            "observation_points": grid.observation_points.tolist(),
            "quadrature_count": int(grid.quadrature_points.size),
            "grid_low": grid.grid_low,
            "grid_high": grid.grid_high,
        },
        "g_values": dens.g.values.tolist(),
        "fallback": fallback,
    }


def _density_from_dict(d: dict) -> SemiparametricDensity:
    gd = d["grid"]
    grid = SupportGrid(
        observation_points=np.array(gd["observation_points"], dtype=float),
        quadrature_points=np.linspace(
            gd["grid_low"], gd["grid_high"], gd["quadrature_count"]
        ),
        grid_low=gd["grid_low"],
        grid_high=gd["grid_high"],
    )
    eta = gamma_mod.GammaNatural(eta1=d["eta"][0], eta2=d["eta"][1])
    return make_density(eta, np.array(d["g_values"], dtype=float), grid)


def save_model(path, model) -> None:
    """Write a ReaderModel (or a ReaderPosterior's mean model) as JSON."""
    if isinstance(model, ReaderPosterior):
        model = model.mean_model
    doc = {
        "schema_version": MODEL_SCHEMA_VERSION,
        "reader_id": model.reader_id,
        "pi": model.pi.tolist(),
        "mu": model.mu,
        "densities": {
            role: _density_to_dict(model.densities[role],
                                   role in model.fallback_roles)
            for role in ROLES
        },
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_model(path) -> ReaderModel:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise ModelError(f"{path}: corrupt model file: {e}") from e
    version = doc.get("schema_version")
    if version != MODEL_SCHEMA_VERSION:
        raise ModelError(
            f"{path}: unsupported schema version {version!r} "
            f"(expected {MODEL_SCHEMA_VERSION})"
        )
    dens_docs = doc.get("densities", {})
    missing = [r for r in ROLES if r not in dens_docs]
    if missing:
        raise ModelError(f"{path}: missing density roles: {missing}")
    densities = {role: _density_from_dict(dens_docs[role]) for role in ROLES}
    fallback = frozenset(r for r in ROLES if dens_docs[r].get("fallback"))
    return ReaderModel(
        reader_id=doc["reader_id"],
        pi=np.array(doc["pi"], dtype=float),
        mu=doc["mu"],
        densities=densities,
        fallback_roles=fallback,
    )


# ---------------------------------------------------------------------------
# GP amplitude tuning

AMPLITUDE_GRID = (0.01, 0.1, 0.5, 1.0, 2.0, 5.0)

_TUNE_FLOOR = -1e6


def tune_gp_amplitude(scanpaths_by_reader: dict, texts: dict,
                      config: FitConfig,
                      candidates=AMPLITUDE_GRID) -> float:
    """Pick the kernel amplitude maximizing held-out training likelihood:
    each reader's training scanpaths are split in half, models are fitted
    on the first half and scored on the second, averaged over readers."""
    best_alpha, best_score = None, NEG_INF
    for alpha in candidates:
        total, count = 0.0, 0
        for reader_id, sps in sorted(scanpaths_by_reader.items()):
            if len(sps) < 2:
                continue
            half = len(sps) // 2
            cfg = FitConfig(
                **{**config.__dict__, "gp_amplitude": alpha,
                   "keep_samples": False}
            )
            post = fit(sps[:half], texts, cfg)
            for sp in sps[half:]:
                ll = scanpath_log_likelihood(sp, texts[sp.text_id],
                                             post.mean_model)
                # a held-out event outside the fitted grid scores -inf;
                # cap it so one such scanpath doesn't erase the comparison
                total += max(ll, _TUNE_FLOOR)
                count += 1
        if count == 0:
            raise ModelError("not enough data to tune the GP amplitude")
        score = total / count
        if score > best_score:
            best_alpha, best_score = alpha, score
    return best_alpha
