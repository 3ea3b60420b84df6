"""Model comparison: discriminative pair selection, 2AFC simulation, ranking.

Competing enhancers are compared by (1) selecting the pool images on which
their outputs differ the most, (2) collecting two-alternative forced choices
over the enhanced pairs, and (3) aggregating the choice matrix into global
scores under a Thurstone Case V observer model, with bootstrap significance
groups.  One JOD unit corresponds to a 75% preference rate through the
sigma = 1.0484 convention.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.optimize import minimize
from scipy.stats import norm

from .errors import (
    ConfigurationError,
    ContractViolation,
    DisconnectedComparisonGraph,
)
from .grids import downsample

__all__ = [
    "THURSTONE_SIGMA",
    "Enhancer",
    "perceptual_distance_d1",
    "semantic_set_distance_d2",
    "select_discriminative_subset",
    "simulate_2afc",
    "ChoiceRecord",
    "write_choice_log",
    "read_choice_log",
    "ChoiceMatrix",
    "RankingResult",
    "aggregate_thurstone",
    "significance_groups",
    "ranking_report",
]

# observer-model dispersion making 1 JOD = 75% preference: Phi(1/(sqrt(2)*sigma)) = 0.75
THURSTONE_SIGMA = 1.0484

TRAINING_PAIR_PREFIX = "training:"


class Enhancer:
    """A named enhancement function with an output cache keyed by image id."""

    def __init__(self, model_id: str, fn):
        self.model_id = model_id
        self.fn = fn
        self.cache: dict[str, torch.Tensor] = {}

    def enhance(self, image_id: str, image: torch.Tensor) -> torch.Tensor:
        if image_id not in self.cache:
            out = self.fn(image)
            if out.shape != image.shape:
                raise ContractViolation(
                    f"enhancer {self.model_id} changed the image shape "
                    f"{tuple(image.shape)} -> {tuple(out.shape)}"
                )
            self.cache[image_id] = out.detach()
        return self.cache[image_id]


def perceptual_distance_d1(a: torch.Tensor, b: torch.Tensor) -> float:
    """Multi-scale pixel L2 over a 3-level dyadic pyramid; 0 iff a == b."""
    if a.shape != b.shape:
        raise ContractViolation(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    total = 0.0
    for level in range(3):
        factor = 2 ** level
        d = downsample(a, factor) - downsample(b, factor)
        total += float(d.pow(2).sum().sqrt())
    return total


def semantic_set_distance_d2(x: torch.Tensor, selected, embed) -> float:
    """Min cosine distance between x's embedding and the set's; empty set -> 0."""
    items = list(selected)
    if not items:
        return 0.0
    with torch.no_grad():
        ex = embed(x).flatten()
        best = math.inf
        for s in items:
            es = embed(s).flatten()
            cos = float(torch.dot(ex, es) / (ex.norm() * es.norm() + 1e-12))
            best = min(best, 1.0 - cos)
    return best


def select_discriminative_subset(pool, enhancer_i: Enhancer, enhancer_j: Enhancer,
                                 k: int, gamma: float, embed=None) -> list[str]:
    """Greedily pick the k pool ids maximising enhancement discrepancy.

    Each step takes the argmax over the remaining pool of
    D1(r_i(x), r_j(x)) + gamma * D2(x, selected); ties break toward the
    smaller image id.  With gamma > 0 an embedding function is required.
    """
    pool = dict(pool)
    if not pool:
        raise ConfigurationError("image pool is empty")
    if k > len(pool):
        raise ConfigurationError(f"cannot select {k} images from a pool of {len(pool)}")
    if gamma < 0:
        raise ConfigurationError("diversity weight gamma must be >= 0")
    if gamma > 0 and embed is None:
        raise ConfigurationError("gamma > 0 needs an embedding function for D2")

    discrepancy = {}
    for image_id in sorted(pool):
        ri = enhancer_i.enhance(image_id, pool[image_id])
        rj = enhancer_j.enhance(image_id, pool[image_id])
        discrepancy[image_id] = perceptual_distance_d1(ri, rj)

    selected: list[str] = []
    remaining = sorted(pool)
    for _ in range(k):
        best_id, best_score = None, -math.inf
        for image_id in remaining:
            score = discrepancy[image_id]
            if gamma > 0:
                score += gamma * semantic_set_distance_d2(
                    pool[image_id], [pool[s] for s in selected], embed
                )
            if score > best_score:
                best_id, best_score = image_id, score
        selected.append(best_id)
        remaining.remove(best_id)
    return selected


def simulate_2afc(pair, quality_oracle, sigma_obs: float, seed: int = 0) -> int:
    """Thurstone Case V observer: returns 0 (first chosen) or 1 (second).

    The first image wins with probability Phi((q(A) - q(B)) / (sqrt(2) * sigma_obs)).
    """
    if sigma_obs <= 0:
        raise ConfigurationError("observer noise sigma_obs must be positive")
    a, b = pair
    qa = float(quality_oracle(a))
    qb = float(quality_oracle(b))
    p_first = float(norm.cdf((qa - qb) / (math.sqrt(2.0) * sigma_obs)))
    rng = np.random.default_rng(seed)
    return 0 if rng.uniform() < p_first else 1


# ---------------------------------------------------------------------------
# Choice logs (shared format with the study service)
# ---------------------------------------------------------------------------

CHOICE_LOG_FIELDS = [
    "trial_id", "pair_id", "left_model", "right_model",
    "chosen_side", "observer_id", "timestamp",
]


@dataclass(frozen=True)
class ChoiceRecord:
    trial_id: str
    pair_id: str
    left_model: str
    right_model: str
    chosen_side: str
    observer_id: str
    timestamp: float = field(default_factory=time.time)

    def __post_init__(self):
        if self.chosen_side not in ("left", "right"):
            raise ContractViolation(f"chosen side must be left or right, got {self.chosen_side!r}")

    @property
    def chosen_model(self) -> str:
        return self.left_model if self.chosen_side == "left" else self.right_model

    @property
    def other_model(self) -> str:
        return self.right_model if self.chosen_side == "left" else self.left_model

    @property
    def is_training(self) -> bool:
        return self.pair_id.startswith(TRAINING_PAIR_PREFIX)


def write_choice_log(records, path, extra_fields=()) -> None:
    fields = CHOICE_LOG_FIELDS + list(extra_fields)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        for rec in records:
            row = {f: getattr(rec, f) for f in CHOICE_LOG_FIELDS}
            for f in extra_fields:
                row[f] = getattr(rec, f, "")
            writer.writerow(row)


def read_choice_log(path) -> list[ChoiceRecord]:
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            records.append(
                ChoiceRecord(
                    trial_id=row["trial_id"],
                    pair_id=row["pair_id"],
                    left_model=row["left_model"],
                    right_model=row["right_model"],
                    chosen_side=row["chosen_side"],
                    observer_id=row["observer_id"],
                    timestamp=float(row["timestamp"]),
                )
            )
    return records


# ---------------------------------------------------------------------------
# Choice matrix and ranking
# ---------------------------------------------------------------------------

class ChoiceMatrix:
    """Pairwise win counts; wins[i, j] = trials where model i beat model j."""

    def __init__(self, models, wins=None):
        self.models = list(models)
        n = len(self.models)
        self.wins = np.zeros((n, n), dtype=np.int64) if wins is None else np.asarray(wins, dtype=np.int64)
        if self.wins.shape != (n, n):
            raise ConfigurationError("wins matrix shape must match the model list")
        if (self.wins < 0).any():
            raise ContractViolation("win counts must be nonnegative")

    def index(self, model: str) -> int:
        return self.models.index(model)

    def record(self, winner: str, loser: str, count: int = 1) -> None:
        self.wins[self.index(winner), self.index(loser)] += count

    @property
    def trials(self) -> np.ndarray:
        return self.wins + self.wins.T

    @property
    def probabilities(self) -> np.ndarray:
        """Empirical C[i, j] = P(i chosen over j); NaN where no trials exist."""
        n = self.trials
        with np.errstate(invalid="ignore"):
            return np.where(n > 0, self.wins / np.maximum(n, 1), np.nan)

    @classmethod
    def from_records(cls, records, models=None, include_training: bool = False) -> "ChoiceMatrix":
        records = [r for r in records if include_training or not r.is_training]
        if models is None:
            models = sorted({r.left_model for r in records} | {r.right_model for r in records})
        matrix = cls(models)
        for rec in records:
            matrix.record(rec.chosen_model, rec.other_model)
        return matrix

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["model"] + self.models)
            for name, row in zip(self.models, self.wins):
                writer.writerow([name] + [int(v) for v in row])

    @classmethod
    def from_csv(cls, path) -> "ChoiceMatrix":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        models = rows[0][1:]
        wins = np.array([[int(v) for v in row[1:]] for row in rows[1:]], dtype=np.int64)
        return cls(models, wins)


@dataclass
class RankingResult:
    models: list[str]
    mu: np.ndarray
    sigma: float
    bootstrap_mu: np.ndarray | None = None
    groups: list[list[str]] | None = None

    def score_of(self, model: str) -> float:
        return float(self.mu[self.models.index(model)])

    def ordering(self) -> list[str]:
        return [self.models[i] for i in np.argsort(-self.mu)]


def _check_connected(matrix: ChoiceMatrix) -> None:
    n = len(matrix.models)
    trials = matrix.trials
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if trials[i, j] > 0:
                parent[find(i)] = find(j)
    roots = {find(i) for i in range(n)}
    if len(roots) > 1:
        comps = {}
        for i in range(n):
            comps.setdefault(find(i), []).append(matrix.models[i])
        raise DisconnectedComparisonGraph(list(comps.values()))


def _fit_case_v(wins: np.ndarray, sigma: float) -> np.ndarray:
    """Maximum-likelihood scores for the pairwise log-likelihood
    sum_ij wins[i, j] * log Phi((mu_i - mu_j) / (sqrt(2) * sigma)), sum mu = 0."""
    n = wins.shape[0]
    scale = 1.0 / (math.sqrt(2.0) * sigma)
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j and wins[i, j] > 0]
    if not pairs:
        return np.zeros(n)

    def nll_and_grad(mu):
        nll = 0.0
        grad = np.zeros(n)
        for i, j in pairs:
            d = (mu[i] - mu[j]) * scale
            nll -= wins[i, j] * norm.logcdf(d)
            ratio = math.exp(norm.logpdf(d) - norm.logcdf(d))
            g = wins[i, j] * ratio * scale
            grad[i] -= g
            grad[j] += g
        return nll, grad

    fit = minimize(nll_and_grad, np.zeros(n), jac=True, method="L-BFGS-B",
                   options={"maxiter": 500})
    mu = fit.x
    return mu - mu.mean()


def aggregate_thurstone(matrix: ChoiceMatrix, sigma: float = THURSTONE_SIGMA,
                        n_boot: int = 1000, seed: int = 0) -> RankingResult:
    """Case V maximum-likelihood ranking with stratified bootstrap resamples.

    Every model must appear in at least one trial and the comparison graph
    must be connected; the scores are centred so they sum to zero.
    """
    if (matrix.trials.sum(axis=1) == 0).any():
        missing = [m for m, row in zip(matrix.models, matrix.trials) if row.sum() == 0]
        raise DisconnectedComparisonGraph([missing, [m for m in matrix.models if m not in missing]])
    _check_connected(matrix)

    mu = _fit_case_v(matrix.wins, sigma)
    boot = None
    if n_boot > 0:
        rng = np.random.default_rng(seed)
        trials = matrix.trials
        boot = np.empty((n_boot, len(matrix.models)))
        for b in range(n_boot):
            resampled = np.zeros_like(matrix.wins)
            for i in range(len(matrix.models)):
                for j in range(i + 1, len(matrix.models)):
                    n_ij = trials[i, j]
                    if n_ij > 0:
                        w = rng.binomial(n_ij, matrix.wins[i, j] / n_ij)
                        resampled[i, j] = w
                        resampled[j, i] = n_ij - w
            boot[b] = _fit_case_v(resampled, sigma)
    return RankingResult(models=list(matrix.models), mu=mu, sigma=sigma, bootstrap_mu=boot)


def significance_groups(result: RankingResult, level: float = 0.05) -> list[list[str]]:
    """Partition models into groups whose scores are statistically indistinguishable.

    Pairwise two-tailed tests on the bootstrap distribution of mu_i - mu_j
    (z statistic with the bootstrap standard error); failures to reject at
    the given level are linked and closed transitively into display groups.
    """
    if result.bootstrap_mu is None or result.bootstrap_mu.shape[0] < 10:
        raise ConfigurationError("significance grouping needs >= 10 bootstrap resamples")
    n = len(result.models)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            d = result.bootstrap_mu[:, i] - result.bootstrap_mu[:, j]
            se = d.std(ddof=1)
            if se == 0:
                p_value = 1.0 if abs(d.mean()) == 0 else 0.0
            else:
                p_value = 2.0 * (1.0 - norm.cdf(abs(d.mean()) / se))
            if p_value > level:
                parent[find(i)] = find(j)

    clusters: dict[int, list[int]] = {}
    for i in range(n):
        clusters.setdefault(find(i), []).append(i)
    groups = sorted(clusters.values(), key=lambda idx: -result.mu[idx].mean())
    named = [[result.models[i] for i in sorted(idx, key=lambda k: -result.mu[k])] for idx in groups]
    result.groups = named
    return named


def ranking_report(result: RankingResult) -> str:
    """Human-readable ranking table with significance group letters."""
    groups = result.groups if result.groups is not None else [[m] for m in result.ordering()]
    letter = {}
    for g, members in enumerate(groups):
        for m in members:
            letter[m] = chr(ord("A") + g)
    lines = [f"{'rank':>4}  {'model':<24} {'score (JOD)':>12}  group"]
    for rank, model in enumerate(result.ordering(), start=1):
        lines.append(
            f"{rank:>4}  {model:<24} {result.score_of(model):>12.4f}  {letter.get(model, '-')}"
        )
    return "\n".join(lines)
