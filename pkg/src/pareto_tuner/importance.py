"""Random-forest regression and MDI importance over run archives.

Feature encoding: one column per scalar parameter (in space order), then
one binary column per token of each token parameter, named
``<param>:<token>``. The ``seed`` parameter never becomes a feature. Token
columns inherit their parameter's name as a group, so reports can show
"positive_prompt" as one bar; scalar columns are their own group.

Trees are CART regression trees (variance-reduction splits) fitted by
scikit-learn; bagging, per-tree seeding, out-of-bag scoring, MDI
aggregation, and hyperparameter search are implemented here so their exact
semantics are pinned by this module, not by library defaults. Rows are
canonically sorted (lexicographically over features then target) before any
fitting, which makes fits invariant to input row order.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from hashlib import sha256
from random import Random

import numpy as np
from sklearn.tree import DecisionTreeRegressor

from .nsga2 import RunArchive
from .space import IntegerRange, RealRange, TokenSubset

logger = logging.getLogger(__name__)

IMPORTANCE_SCHEMA = "pareto-tuner/importance/1"

TARGET_TIME = "time"
TARGET_QUALITY = "quality"

SEED_PARAM_NAME = "seed"


@dataclass(frozen=True)
class FeatureMatrix:
    """Encoded rows plus the column naming/grouping metadata."""

    x: np.ndarray
    names: tuple[str, ...]
    group_of: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.x.ndim != 2 or self.x.shape[1] != len(self.names):
            raise ValueError("feature matrix shape does not match column names")
        if len(self.names) != len(self.group_of):
            raise ValueError("every column needs a group")

    @property
    def groups(self) -> tuple[str, ...]:
        seen: list[str] = []
        for group in self.group_of:
            if group not in seen:
                seen.append(group)
        return tuple(seen)


def build_feature_matrix(archives: list[RunArchive], target: str) -> tuple[FeatureMatrix, np.ndarray]:
    """Encode all records of all archives; y is the chosen objective."""
    if target not in (TARGET_TIME, TARGET_QUALITY):
        raise ValueError(f"target must be {TARGET_TIME!r} or {TARGET_QUALITY!r}, got {target!r}")
    if not archives:
        raise ValueError("no archives given")
    spaces = [archive.space for archive in archives]
    if any(space is None for space in spaces):
        raise ValueError("archive lacks a search space")
    space = spaces[0]
    if any(s != space for s in spaces[1:]):
        raise ValueError("archives use different search spaces")

    names: list[str] = []
    group_of: list[str] = []
    extractors = []  # (param index, token index or None)
    for i, spec in enumerate(space.params):
        if spec.name == SEED_PARAM_NAME:
            continue
        if isinstance(spec.kind, (IntegerRange, RealRange)):
            names.append(spec.name)
            group_of.append(spec.name)
            extractors.append((i, None))
        elif isinstance(spec.kind, TokenSubset):
            for j, token in enumerate(spec.kind.vocabulary):
                names.append(f"{spec.name}:{token}")
                group_of.append(spec.name)
                extractors.append((i, j))
    if not names:
        raise ValueError("search space yields no features")

    rows: list[list[float]] = []
    y: list[float] = []
    for archive in archives:
        for record in archive.records:
            genes = record.candidate.genes
            row = []
            for i, j in extractors:
                gene = genes[i]
                row.append(float(gene[j]) if j is not None else float(gene))
            rows.append(row)
            y.append(record.time_ms if target == TARGET_TIME else record.quality)
    if not rows:
        raise ValueError("archives contain no records")
    matrix = FeatureMatrix(
        x=np.asarray(rows, dtype=float), names=tuple(names), group_of=tuple(group_of)
    )
    return matrix, np.asarray(y, dtype=float)


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 1
    max_features_fraction: float = 1.0
    bootstrap: bool = True
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1 or None")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if not 0.0 < self.max_features_fraction <= 1.0:
            raise ValueError("max_features_fraction must be in (0, 1]")


def _canonical_order(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row permutation sorting (x, y) lexicographically; stabilizes fits."""
    columns = [y] + [x[:, j] for j in range(x.shape[1] - 1, -1, -1)]
    return np.lexsort(columns)


@dataclass
class RegressionTree:
    """One CART regression tree plus the weights needed for MDI."""

    model: DecisionTreeRegressor
    n_features: int

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.model.predict(x)

    def raw_importance(self) -> np.ndarray:
        """Per-feature sum of (sample fraction) * (impurity decrease)."""
        tree = self.model.tree_
        out = np.zeros(self.n_features)
        weights = tree.weighted_n_node_samples
        root_weight = weights[0]
        for node in range(tree.node_count):
            left = tree.children_left[node]
            right = tree.children_right[node]
            if left == -1:
                continue
            gain = (
                weights[node] * tree.impurity[node]
                - weights[left] * tree.impurity[left]
                - weights[right] * tree.impurity[right]
            ) / root_weight
            out[tree.feature[node]] += gain
        return out


def _tree_seeds(rng_seed: int, index: int) -> tuple[np.random.Generator, int]:
    """Independent bootstrap stream and sklearn seed for one tree."""
    words = np.random.SeedSequence((rng_seed & 0xFFFFFFFFFFFFFFFF, index)).generate_state(2)
    return np.random.default_rng(int(words[0])), int(words[1] % (2**31 - 1))


def fit_tree(x: np.ndarray, y: np.ndarray, cfg: ForestConfig, tree_seed: int = 0) -> RegressionTree:
    """Fit one variance-reduction tree on the full (canonically sorted) data."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or len(x) == 0 or len(x) != len(y):
        raise ValueError("need a non-empty 2-D x with matching y")
    if not np.all(np.isfinite(y)):
        raise ValueError("y must be finite")
    order = _canonical_order(x, y)
    n_features = x.shape[1]
    model = DecisionTreeRegressor(
        criterion="squared_error",
        max_depth=cfg.max_depth,
        min_samples_leaf=cfg.min_samples_leaf,
        max_features=max(1, math.ceil(cfg.max_features_fraction * n_features)),
        random_state=tree_seed,
    )
    model.fit(x[order], y[order])
    return RegressionTree(model=model, n_features=n_features)


@dataclass
class Forest:
    trees: list[RegressionTree]
    config: ForestConfig
    n_features: int
    oob_r2: float | None = None

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        total = np.zeros(len(x))
        for tree in self.trees:
            total += tree.predict(x)
        return total / len(self.trees)


def _r2(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    ss_res = float(np.sum((y_true - y_pred) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else 0.0
    return 1.0 - ss_res / ss_tot


def fit_forest(x: np.ndarray, y: np.ndarray, cfg: ForestConfig) -> Forest:
    """Bagged trees with per-tree pre-split seed streams.

    Tree ``i`` draws its bootstrap sample and its split randomness from a
    stream derived from ``(cfg.rng_seed, i)`` alone, so fitting trees in
    any order (or in parallel) gives the identical forest. Out-of-bag R^2
    is attached when bootstrapping.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or len(x) == 0 or len(x) != len(y):
        raise ValueError("need a non-empty 2-D x with matching y")
    if not np.all(np.isfinite(y)):
        raise ValueError("y must be finite")
    order = _canonical_order(x, y)
    x_sorted, y_sorted = x[order], y[order]
    n = len(y_sorted)
    trees: list[RegressionTree] = []
    oob_sum = np.zeros(n)
    oob_count = np.zeros(n, dtype=int)
    for i in range(cfg.n_trees):
        boot_rng, skl_seed = _tree_seeds(cfg.rng_seed, i)
        if cfg.bootstrap:
            indices = boot_rng.integers(0, n, size=n)
        else:
            indices = np.arange(n)
        tree = fit_tree(x_sorted[indices], y_sorted[indices], cfg, tree_seed=skl_seed)
        trees.append(tree)
        if cfg.bootstrap:
            mask = np.ones(n, dtype=bool)
            mask[indices] = False
            if mask.any():
                oob_sum[mask] += tree.predict(x_sorted[mask])
                oob_count[mask] += 1
    oob_r2 = None
    if cfg.bootstrap:
        covered = oob_count > 0
        if covered.sum() >= 2:
            oob_r2 = _r2(y_sorted[covered], oob_sum[covered] / oob_count[covered])
    return Forest(trees=trees, config=cfg, n_features=x.shape[1], oob_r2=oob_r2)


def mdi_importance(forest: Forest) -> tuple[np.ndarray, bool]:
    """Normalized mean-decrease-in-impurity vector, plus a fallback flag.

    The flag is True when every tree is a stump (zero total impurity
    decrease), in which case the uniform vector is returned so downstream
    normalization invariants still hold.
    """
    raw = np.zeros(forest.n_features)
    for tree in forest.trees:
        raw += tree.raw_importance()
    raw /= len(forest.trees)
    total = raw.sum()
    if total <= 0.0:
        logger.warning("forest has no informative splits; reporting uniform importances")
        return np.full(forest.n_features, 1.0 / forest.n_features), True
    return raw / total, False


SEARCH_N_TREES = (50, 300)
SEARCH_MAX_DEPTH = tuple(range(3, 21)) + (None,)
SEARCH_MIN_SAMPLES_LEAF = (1, 10)
SEARCH_MAX_FEATURES = (0.3, 1.0)


def _cv_folds(n: int, k: int, rng: Random) -> list[np.ndarray]:
    """Contiguous blocks of a seeded shuffle of row indices."""
    perm = list(range(n))
    rng.shuffle(perm)
    base, extra = divmod(n, k)
    folds = []
    start = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        folds.append(np.asarray(perm[start : start + size], dtype=int))
        start += size
    return folds


def cross_val_r2(x: np.ndarray, y: np.ndarray, cfg: ForestConfig, folds: list[np.ndarray]) -> float:
    scores = []
    all_indices = np.arange(len(y))
    for fold in folds:
        train = np.setdiff1d(all_indices, fold)
        forest = fit_forest(x[train], y[train], cfg)
        scores.append(_r2(y[fold], forest.predict(x[fold])))
    return float(np.mean(scores))


def randomized_search(
    x: np.ndarray, y: np.ndarray, budget: int, rng: Random, folds: int = 5
) -> ForestConfig:
    """Sample `budget` configs from the documented grid, keep the CV-best.

    Ties go to fewer trees, then shallower depth, then sampling order.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    n = len(y)
    if n < 2:
        raise ValueError("randomized_search needs at least 2 rows")
    if n < folds:
        logger.warning("only %d rows; reducing CV folds from %d", n, folds)
        folds = n
    fold_sets = _cv_folds(n, folds, rng)

    candidates: list[ForestConfig] = []
    for _ in range(budget):
        candidates.append(
            ForestConfig(
                n_trees=rng.randint(*SEARCH_N_TREES),
                max_depth=rng.choice(SEARCH_MAX_DEPTH),
                min_samples_leaf=rng.randint(*SEARCH_MIN_SAMPLES_LEAF),
                max_features_fraction=rng.uniform(*SEARCH_MAX_FEATURES),
                bootstrap=True,
                rng_seed=rng.getrandbits(32),
            )
        )

    best: tuple[float, int, float, int] | None = None
    best_cfg: ForestConfig | None = None
    for index, cfg in enumerate(candidates):
        score = cross_val_r2(np.asarray(x, dtype=float), np.asarray(y, dtype=float), cfg, fold_sets)
        depth_rank = float("inf") if cfg.max_depth is None else float(cfg.max_depth)
        rank = (-score, cfg.n_trees, depth_rank, index)
        if best is None or rank < best:
            best = rank
            best_cfg = cfg
    assert best_cfg is not None
    return best_cfg


@dataclass(frozen=True)
class ImportanceReport:
    """Across-repeat MDI summary: per feature and per group."""

    target: str
    feature_names: tuple[str, ...]
    group_names: tuple[str, ...]
    per_repeat: np.ndarray  # shape (repeats, features)
    mean: np.ndarray
    spread: np.ndarray  # population std across repeats
    group_mean: np.ndarray
    group_spread: np.ndarray
    uniform_fallbacks: tuple[bool, ...]
    chosen_configs: tuple[ForestConfig, ...]
    oob_r2: tuple[float | None, ...]

    def ranking(self) -> list[str]:
        """Feature names sorted by descending mean importance."""
        order = np.argsort(-self.mean, kind="stable")
        return [self.feature_names[i] for i in order]

    def group_ranking(self) -> list[str]:
        order = np.argsort(-self.group_mean, kind="stable")
        return [self.group_names[i] for i in order]


def _repeat_seed(base_seed: int, repeat: int) -> int:
    digest = sha256(f"importance|{base_seed}|{repeat}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def importance_analysis(
    archives: list[RunArchive],
    target: str,
    repeats: int = 10,
    search_budget: int = 20,
    base_seed: int = 0,
) -> ImportanceReport:
    """Repeated search-fit-score pipeline over all records of the archives.

    Each repeat runs from its own seed (stable under changes to
    ``repeats``): hyperparameter search, a full-data forest fit with the
    chosen config, then MDI extraction. The report carries the mean and
    population-std spread across repeats, with token columns additionally
    aggregated into their parameter groups.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    matrix, y = build_feature_matrix(archives, target)
    per_repeat = np.zeros((repeats, len(matrix.names)))
    fallbacks: list[bool] = []
    configs: list[ForestConfig] = []
    oobs: list[float | None] = []
    for r in range(repeats):
        rng = Random(_repeat_seed(base_seed, r))
        cfg = randomized_search(matrix.x, y, budget=search_budget, rng=rng)
        forest = fit_forest(matrix.x, y, cfg)
        vector, fallback = mdi_importance(forest)
        per_repeat[r] = vector
        fallbacks.append(fallback)
        configs.append(cfg)
        oobs.append(forest.oob_r2)
        logger.info(
            "importance repeat %d/%d (target %s): top=%s oob_r2=%s",
            r + 1,
            repeats,
            target,
            matrix.names[int(np.argmax(vector))],
            "n/a" if forest.oob_r2 is None else f"{forest.oob_r2:.3f}",
        )

    groups = matrix.groups
    group_index = {g: i for i, g in enumerate(groups)}
    per_repeat_groups = np.zeros((repeats, len(groups)))
    for col, group in enumerate(matrix.group_of):
        per_repeat_groups[:, group_index[group]] += per_repeat[:, col]

    return ImportanceReport(
        target=target,
        feature_names=matrix.names,
        group_names=groups,
        per_repeat=per_repeat,
        mean=per_repeat.mean(axis=0),
        spread=per_repeat.std(axis=0),
        group_mean=per_repeat_groups.mean(axis=0),
        group_spread=per_repeat_groups.std(axis=0),
        uniform_fallbacks=tuple(fallbacks),
        chosen_configs=tuple(configs),
        oob_r2=tuple(oobs),
    )
