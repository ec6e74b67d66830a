"""Shrinkage real-AdaBoost over depth-limited decision trees on window cells.

Each weak learner is a binary decision tree whose splits address a single
(channel, cell_row, cell_col) feature inside a fixed model window. Leaves
carry real-valued log-odds; the forest score is shrinkage * sum of leaf
values. Training reweights samples with w <- w * exp(-y * nu * f(x)) after
every round, so the weighted exponential loss is non-increasing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .geometry import default_core, padded_window_box

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False


class FeatureIndex(NamedTuple):
    channel: int
    cell_row: int
    cell_col: int


class SplitChoice(NamedTuple):
    feature: FeatureIndex
    flat: int
    threshold: float
    impurity: float


@dataclass
class TreeNode:
    channel: int = 0
    cell_row: int = 0
    cell_col: int = 0
    threshold: float = 0.0
    left: int = -1
    right: int = -1
    leaf: Optional[float] = None

    @property
    def is_leaf(self) -> bool:
        return self.leaf is not None


@dataclass
class Tree:
    nodes: list

    def depth(self) -> int:
        depths = [0] * len(self.nodes)
        out = 0
        for i, node in enumerate(self.nodes):
            if node.is_leaf:
                out = max(out, depths[i])
            else:
                depths[node.left] = depths[i] + 1
                depths[node.right] = depths[i] + 1
        return out

    def split_count(self) -> int:
        return sum(1 for n in self.nodes if not n.is_leaf)


@dataclass
class TrainConfig:
    num_trees: int = 4096
    max_depth: int = 5
    shrinkage: float = 0.5
    window: tuple = (128, 64)
    feature_bins: int = 256
    bootstrap_rounds: int = 1
    pos_cap: int = 30000
    neg_cap: int = 90000
    pos_per_gt: Optional[int] = None  # keep only the K best-aligned positives
    seed: int = 0

    def __post_init__(self):
        if self.num_trees < 1:
            raise ValueError("num_trees must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not (0.0 < self.shrinkage <= 1.0):
            raise ValueError("shrinkage must be in (0, 1]")


@dataclass
class BoostedForest:
    trees: list
    shrinkage: float
    window: tuple
    ratio: int
    channels: int
    cell_rows: int
    cell_cols: int
    core: Optional[tuple] = None
    train_log: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        if self.core is None:
            self.core = default_core(self.window)
        self._arena = None

    def num_features(self) -> int:
        return self.channels * self.cell_rows * self.cell_cols


@dataclass
class SampleSet:
    """Flattened window features with labels in {-1,+1} and positive weights.

    Row layout follows the stack order: flat index of (c, u, v) is
    (c * cell_rows + u) * cell_cols + v.
    """

    features: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    channels: int
    cell_rows: int
    cell_cols: int

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        n, d = self.features.shape
        if n < 2:
            raise ValueError("need at least 2 samples")
        if d != self.channels * self.cell_rows * self.cell_cols:
            raise ValueError("feature width does not match declared layout")
        if self.labels.shape != (n,) or self.weights.shape != (n,):
            raise ValueError("labels/weights length mismatch")
        if not np.all(np.isin(self.labels, (-1, 1))):
            raise ValueError("labels must be -1 or +1")
        if np.any(self.weights <= 0.0):
            raise ValueError("weights must be positive")
        if abs(float(self.weights.sum()) - 1.0) > 1e-6:
            raise ValueError("weights must sum to 1")

    @property
    def size(self) -> int:
        return self.features.shape[0]


def uniform_weights(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n, dtype=np.float64)


def flat_of_feature(feat: FeatureIndex, cell_rows: int, cell_cols: int) -> int:
    return (feat.channel * cell_rows + feat.cell_row) * cell_cols + feat.cell_col


def feature_of_flat(flat: int, cell_rows: int, cell_cols: int) -> FeatureIndex:
    v = flat % cell_cols
    u = (flat // cell_cols) % cell_rows
    c = flat // (cell_rows * cell_cols)
    return FeatureIndex(c, u, v)


def feature_value_ranges(features: np.ndarray):
    """Per-feature (min, max) over the full training set, as float64."""
    mn = features.min(axis=0).astype(np.float64)
    mx = features.max(axis=0).astype(np.float64)
    return mn, mx


@dataclass
class QuantizedFeatures:
    """Precomputed per-sample bin indices, shared across all nodes/trees.

    flat[i, f] = bin(i, f) + f * bins, ready for histogram scatter-adds.
    Quantization follows the find_best_split contract exactly, so searches
    over the quantized matrix match the on-the-fly path bit for bit.
    """

    flat: np.ndarray
    bins: int
    value_ranges: tuple


def quantize_features(features: np.ndarray, bins: int,
                      value_ranges=None) -> QuantizedFeatures:
    if value_ranges is None:
        value_ranges = feature_value_ranges(features)
    mn, mx = value_ranges
    n, d = features.shape
    flat = np.empty((n, d), dtype=np.int64)
    chunk = max(1, (1 << 22) // max(1, d))
    offsets = np.arange(d, dtype=np.int64) * bins
    rng = mx - mn
    scale = np.where(rng > 0.0, rng, 1.0)
    for start in range(0, n, chunk):
        x = features[start : start + chunk].astype(np.float64)
        b = np.clip(np.floor(((x - mn) / scale) * bins), 0, bins - 1).astype(np.int64)
        flat[start : start + chunk] = b + offsets
    return QuantizedFeatures(flat=flat, bins=bins, value_ranges=value_ranges)


def find_best_split(samples: SampleSet, node_indices=None, candidate_features=None,
                    bins: int = 256, value_ranges=None,
                    quantized: Optional[QuantizedFeatures] = None):
    """Exhaustive quantized split search minimizing weighted two-class Gini.

    The search contract, which any reference implementation must follow to
    reproduce results bit-for-bit:

    * per-feature value range (mn, mx) is taken over the FULL sample set
      (pass value_ranges to reuse); a sample's bin is
      int(clip(floor(((x - mn) / rng) * bins), 0, bins - 1)) with rng = mx - mn
      (all samples land in bin 0 when rng == 0), computed in float64;
    * candidate thresholds are t_b = mn + (rng * b) / bins for b = 1..bins-1,
      splitting left when x < t_b (equivalently bin < b);
    * class histograms accumulate sample weights in ascending sample order;
      left masses are ascending-bin prefix sums, right masses are
      total - left; candidates leaving either side empty are skipped;
    * impurity = (wl * gl + wr * gr) / (wl + wr) with
      gl = 1.0 - (wlp/wl)*(wlp/wl) - (wln/wl)*(wln/wl) and gr symmetric;
    * ties break to the lowest feature index, then the lowest threshold.

    Passing a QuantizedFeatures (from quantize_features) reuses precomputed
    bin indices; results are bit-identical to the direct path. Returns a
    SplitChoice, or None for a pure / unsplittable node.
    """
    feats = samples.features
    n, d = feats.shape
    rows = np.arange(n) if node_indices is None else np.asarray(node_indices, dtype=np.int64)
    if rows.size < 2:
        return None
    node_labels = samples.labels[rows]
    if np.all(node_labels == node_labels[0]):
        return None
    if candidate_features is None:
        cand = np.arange(d, dtype=np.int64)
    else:
        cand = np.sort(np.asarray(candidate_features, dtype=np.int64))
        quantized = None  # restricted searches take the direct path
    if quantized is not None:
        value_ranges = quantized.value_ranges
        bins = quantized.bins
    elif value_ranges is None:
        value_ranges = feature_value_ranges(feats)
    mn_all, mx_all = value_ranges

    node_w = samples.weights[rows]
    pos_mask = node_labels == 1
    w_pos = node_w[pos_mask]
    w_neg = node_w[~pos_mask]
    pos_rows = rows[pos_mask]
    neg_rows = rows[~pos_mask]

    best = None  # (impurity, position-in-cand, bin)
    chunk_size = max(1, (1 << 22) // max(1, rows.size))
    for start in range(0, cand.size, chunk_size):
        fsel = cand[start : start + chunk_size]
        nf = fsel.size
        if quantized is not None:
            flat_pos = quantized.flat[pos_rows, start : start + nf] - start * bins
            flat_neg = quantized.flat[neg_rows, start : start + nf] - start * bins
        else:
            mn = mn_all[fsel]
            rng = mx_all[fsel] - mn
            scale = np.where(rng > 0.0, rng, 1.0)
            x = feats[np.ix_(rows, fsel)].astype(np.float64)
            b = np.clip(np.floor(((x - mn) / scale) * bins), 0,
                        bins - 1).astype(np.int64)
            flat = b + np.arange(nf, dtype=np.int64) * bins
            flat_pos = flat[pos_mask]
            flat_neg = flat[~pos_mask]

        hist_pos = np.bincount(flat_pos.ravel(), weights=np.repeat(w_pos, nf),
                               minlength=nf * bins).reshape(nf, bins)
        hist_neg = np.bincount(flat_neg.ravel(), weights=np.repeat(w_neg, nf),
                               minlength=nf * bins).reshape(nf, bins)

        cum_pos = np.cumsum(hist_pos, axis=1)
        cum_neg = np.cumsum(hist_neg, axis=1)
        wl_pos = cum_pos[:, : bins - 1]
        wl_neg = cum_neg[:, : bins - 1]
        wr_pos = cum_pos[:, -1:] - wl_pos
        wr_neg = cum_neg[:, -1:] - wl_neg
        wl = wl_pos + wl_neg
        wr = wr_pos + wr_neg
        valid = (wl > 0.0) & (wr > 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            plp = wl_pos / wl
            pln = wl_neg / wl
            prp = wr_pos / wr
            prn = wr_neg / wr
            gl = 1.0 - plp * plp - pln * pln
            gr = 1.0 - prp * prp - prn * prn
            imp = (wl * gl + wr * gr) / (wl + wr)
        imp = np.where(valid, imp, np.inf)

        arg = int(np.argmin(imp))
        lo = float(imp.ravel()[arg])
        if not math.isfinite(lo):
            continue
        fpos, bidx = divmod(arg, bins - 1)
        key = (lo, start + fpos, bidx + 1)
        if best is None or key[0] < best[0]:
            best = key
        # equal impurity across chunks keeps the earlier (lower feature) one

    if best is None:
        return None
    impurity, cpos, bchosen = best
    fidx = int(cand[cpos])
    rng_f = mx_all[fidx] - mn_all[fidx]
    threshold = float(mn_all[fidx] + (rng_f * bchosen) / bins)
    feature = feature_of_flat(fidx, samples.cell_rows, samples.cell_cols)
    return SplitChoice(feature, fidx, threshold, float(impurity))


def _leaf_value(w_pos: float, w_neg: float, eps: float) -> float:
    return 0.5 * math.log((w_pos + eps) / (w_neg + eps))


def _build_tree(samples: SampleSet, weights: np.ndarray, cfg: TrainConfig,
                quantized: QuantizedFeatures) -> Tree:
    feats = samples.features
    labels = samples.labels
    eps = 1.0 / samples.size
    nodes: list[TreeNode] = []

    def grow(rows: np.ndarray, depth: int) -> int:
        idx = len(nodes)
        nodes.append(TreeNode())
        node_labels = labels[rows]
        node_w = weights[rows]
        w_pos = float(node_w[node_labels == 1].sum())
        w_neg = float(node_w[node_labels == -1].sum())

        split = None
        if depth < cfg.max_depth and rows.size >= 2:
            split = find_best_split(samples, node_indices=rows, bins=cfg.feature_bins,
                                    quantized=quantized)
            if split is not None:
                go_left = feats[rows, split.flat] < split.threshold
                left_rows = rows[go_left]
                right_rows = rows[~go_left]
                if left_rows.size == 0 or right_rows.size == 0:
                    split = None  # bin/threshold rounding disagreement: keep a leaf

        if split is None:
            nodes[idx].leaf = _leaf_value(w_pos, w_neg, eps)
            return idx

        node = nodes[idx]
        node.channel, node.cell_row, node.cell_col = split.feature
        node.threshold = split.threshold
        node.left = grow(left_rows, depth + 1)
        node.right = grow(right_rows, depth + 1)
        return idx

    # weights passed in may be a live boosting vector; find_best_split reads
    # samples.weights, so graft the current vector in for the build
    saved = samples.weights
    samples.weights = weights
    try:
        grow(np.arange(samples.size, dtype=np.int64), 0)
    finally:
        samples.weights = saved
    return Tree(nodes=nodes)


def _tree_values_for_matrix(tree: Tree, feats: np.ndarray, cell_rows: int,
                            cell_cols: int) -> np.ndarray:
    """Leaf value of one tree for every row of a flattened feature matrix."""
    n = feats.shape[0]
    flat_feat = np.array(
        [(node.channel * cell_rows + node.cell_row) * cell_cols + node.cell_col
         for node in tree.nodes], dtype=np.int64)
    thr = np.array([node.threshold for node in tree.nodes], dtype=np.float64)
    left = np.array([node.left for node in tree.nodes], dtype=np.int64)
    right = np.array([node.right for node in tree.nodes], dtype=np.int64)
    leaf_mask = np.array([node.is_leaf for node in tree.nodes])
    leaf_val = np.array([node.leaf if node.is_leaf else 0.0 for node in tree.nodes],
                        dtype=np.float64)
    cur = np.zeros(n, dtype=np.int64)
    for _ in range(tree.depth()):
        at_leaf = leaf_mask[cur]
        vals = feats[np.arange(n), flat_feat[cur]]
        nxt = np.where(vals < thr[cur], left[cur], right[cur])
        cur = np.where(at_leaf, cur, nxt)
    return leaf_val[cur]


def train_forest(samples: SampleSet, cfg: TrainConfig) -> BoostedForest:
    """Train a shrinkage real-AdaBoost forest.

    Per round: fit a tree whose leaves are 0.5*ln((W+ + eps)/(W- + eps))
    under the current weights (eps = 1/N), update
    w_i <- w_i * exp(-y_i * nu * f_t(x_i)), renormalize. The per-round
    weighted exponential loss sum_i w0_i * exp(-y_i * nu * F_t(x_i)) is
    recorded in forest.train_log as (round, features_used, loss).
    """
    labels = samples.labels
    if np.all(labels == labels[0]):
        raise ValueError("degenerate labels")
    if np.any(samples.weights <= 0.0):
        raise ValueError("weights must be positive")

    y = labels.astype(np.float64)
    w0 = samples.weights.copy()
    w = samples.weights.copy()
    quantized = quantize_features(samples.features, cfg.feature_bins)
    margins = np.zeros(samples.size, dtype=np.float64)

    wh, ww = cfg.window
    if (wh % samples.cell_rows == 0 and ww % samples.cell_cols == 0
            and wh // samples.cell_rows == ww // samples.cell_cols):
        ratio = wh // samples.cell_rows
    else:
        ratio = 0  # tabular layout: forest is not tied to a pixel grid

    trees = []
    log = []
    for t in range(cfg.num_trees):
        tree = _build_tree(samples, w, cfg, quantized)
        f_vals = _tree_values_for_matrix(tree, samples.features,
                                         samples.cell_rows, samples.cell_cols)
        margins += cfg.shrinkage * f_vals
        w = w * np.exp(-y * cfg.shrinkage * f_vals)
        w = w / w.sum()
        loss = float(np.sum(w0 * np.exp(-y * margins)))
        used = len({(n.channel, n.cell_row, n.cell_col)
                    for n in tree.nodes if not n.is_leaf})
        log.append((t, used, loss))
        trees.append(tree)

    forest = BoostedForest(trees=trees, shrinkage=cfg.shrinkage, window=cfg.window,
                           ratio=ratio, channels=samples.channels,
                           cell_rows=samples.cell_rows, cell_cols=samples.cell_cols)
    forest.train_log = log
    return forest


def validate_forest(forest: BoostedForest) -> None:
    """Bounds- and structure-check every node; raises ValueError on defects."""
    for tree in forest.trees:
        n = len(tree.nodes)
        if n == 0:
            raise ValueError("empty tree")
        for i, node in enumerate(tree.nodes):
            if node.is_leaf:
                if node.left != -1 or node.right != -1:
                    raise ValueError("leaf with children")
                if not math.isfinite(node.leaf):
                    raise ValueError("non-finite leaf value")
            else:
                if not (0 <= node.channel < forest.channels
                        and 0 <= node.cell_row < forest.cell_rows
                        and 0 <= node.cell_col < forest.cell_cols):
                    raise ValueError("feature index out of bounds")
                if not (i < node.left < n and i < node.right < n):
                    raise ValueError("bad child index")


def score_window(forest: BoostedForest, stack, origin) -> float:
    """Score one window whose top-left cell is at origin = (row, col)."""
    oy, ox = int(origin[0]), int(origin[1])
    if stack.channels != forest.channels:
        raise ValueError("channel mismatch")
    if (oy < 0 or ox < 0 or oy + forest.cell_rows > stack.height
            or ox + forest.cell_cols > stack.width):
        raise ValueError("window out of bounds")
    vals = stack.values
    total = 0.0
    for tree in forest.trees:
        node = tree.nodes[0]
        while not node.is_leaf:
            v = vals[node.channel, oy + node.cell_row, ox + node.cell_col]
            node = tree.nodes[node.left if v < node.threshold else node.right]
        total += node.leaf
    return forest.shrinkage * total


def _forest_arena(forest: BoostedForest):
    arena = getattr(forest, "_arena", None)
    if arena is not None:
        return arena
    total = sum(len(t.nodes) for t in forest.trees)
    feat_c = np.zeros(total, dtype=np.int32)
    feat_u = np.zeros(total, dtype=np.int32)
    feat_v = np.zeros(total, dtype=np.int32)
    thr = np.zeros(total, dtype=np.float64)
    left = np.full(total, -1, dtype=np.int32)
    right = np.full(total, -1, dtype=np.int32)
    leaf = np.zeros(total, dtype=np.float64)
    roots = np.zeros(len(forest.trees), dtype=np.int32)
    base = 0
    for t, tree in enumerate(forest.trees):
        roots[t] = base
        for i, node in enumerate(tree.nodes):
            j = base + i
            if node.is_leaf:
                leaf[j] = node.leaf
            else:
                feat_c[j] = node.channel
                feat_u[j] = node.cell_row
                feat_v[j] = node.cell_col
                thr[j] = node.threshold
                left[j] = base + node.left
                right[j] = base + node.right
        base += len(tree.nodes)
    arena = (feat_c, feat_u, feat_v, thr, left, right, leaf, roots)
    forest._arena = arena
    return arena


if _HAVE_NUMBA:

    # Tree-major loop: one tree's nodes stay cache-hot while all windows
    # stream through. Node features are pre-flattened into offsets off[n]
    # such that flat[base_i + off[n]] == values[c, oy+u, ox+v]. out[i]
    # accumulates leaf values in tree order, so scores match the
    # window-major scalar path bit for bit.
    @numba.njit(cache=True, nogil=True)
    def _score_kernel(flat, off, thr, left, right, leaf, roots, base,
                      out):  # pragma: no cover - jitted
        for t in range(roots.shape[0]):
            root = roots[t]
            for i in range(base.shape[0]):
                b = base[i]
                node = root
                while left[node] >= 0:
                    if flat[b + off[node]] < thr[node]:
                        node = left[node]
                    else:
                        node = right[node]
                out[i] += leaf[node]
        return out


def _score_origins_numpy(values, arena, oys, oxs):
    feat_c, feat_u, feat_v, thr, left, right, leaf, roots = arena
    n = oys.shape[0]
    out = np.zeros(n, dtype=np.float64)
    h, w = values.shape[1], values.shape[2]
    flat = np.ascontiguousarray(values).reshape(-1)
    off = feat_c.astype(np.int64) * (h * w) + feat_u.astype(np.int64) * w + feat_v
    base = oys.astype(np.int64) * w + oxs
    is_internal = left >= 0
    for t in range(roots.shape[0]):
        cur = np.full(n, roots[t], dtype=np.int64)
        while True:
            active = is_internal[cur]
            if not active.any():
                break
            vals = flat[base + off[cur]]
            nxt = np.where(vals < thr[cur], left[cur], right[cur])
            cur = np.where(active, nxt, cur)
        out += leaf[cur]
    return out


def score_origins(forest: BoostedForest, stack, oys: np.ndarray,
                  oxs: np.ndarray) -> np.ndarray:
    """Batch score_window over arrays of cell origins; identical arithmetic."""
    if stack.channels != forest.channels:
        raise ValueError("channel mismatch")
    arena = _forest_arena(forest)
    oys = np.ascontiguousarray(oys, dtype=np.int64)
    oxs = np.ascontiguousarray(oxs, dtype=np.int64)
    if oys.size and (oys.min() < 0 or oxs.min() < 0
                     or oys.max() + forest.cell_rows > stack.height
                     or oxs.max() + forest.cell_cols > stack.width):
        raise ValueError("window out of bounds")
    values = np.ascontiguousarray(stack.values)
    out = np.zeros(oys.shape[0], dtype=np.float64)
    if _HAVE_NUMBA:
        feat_c, feat_u, feat_v, thr, left, right, leaf, roots = arena
        h, w = values.shape[1], values.shape[2]
        off = (feat_c.astype(np.int64) * (h * w) + feat_u.astype(np.int64) * w
               + feat_v)
        base = oys * w + oxs
        _score_kernel(values.reshape(-1), off, thr, left, right, leaf, roots,
                      base, out)
    else:
        out = _score_origins_numpy(values, arena, oys, oxs)
    return forest.shrinkage * out


def score_grid(forest: BoostedForest, stack, step_cells: int = 1):
    """Score every window on the scan grid; returns (origins, scores).

    Origins run row-major from (0, 0) in steps of step_cells cells. scores[i]
    equals score_window(forest, stack, origins[i]) bit-for-bit.
    """
    if step_cells < 1:
        raise ValueError("step_cells must be >= 1")
    max_oy = stack.height - forest.cell_rows
    max_ox = stack.width - forest.cell_cols
    if max_oy < 0 or max_ox < 0:
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.float64)
    oy = np.arange(0, max_oy + 1, step_cells, dtype=np.int64)
    ox = np.arange(0, max_ox + 1, step_cells, dtype=np.int64)
    yy, xx = np.meshgrid(oy, ox, indexing="ij")
    origins = np.stack([yy.ravel(), xx.ravel()], axis=1)
    scores = score_origins(forest, stack, origins[:, 0], origins[:, 1])
    return origins, scores


def window_features(stack, oy: int, ox: int, cell_rows: int, cell_cols: int):
    """Flattened (c, u, v)-ordered feature row for one window."""
    return stack.values[:, oy : oy + cell_rows, ox : ox + cell_cols].ravel()


def collect_samples(image_ids: Sequence[str], annotations, stacks,
                    cfg: TrainConfig, detector: Optional[BoostedForest] = None,
                    prior: Optional[SampleSet] = None) -> SampleSet:
    """Build a training set from window grids over per-image channel stacks.

    Seed round (detector None): positives are scan-grid windows with
    IoU in [0.5, 1] against a padded ground-truth window (capped at pos_cap
    in scan order); negatives are drawn uniformly (seeded by cfg.seed) from
    windows with IoU <= 0.25 against every ground truth, capped at neg_cap.

    Bootstrap round (detector given): negatives are the detector's
    top-scoring windows with IoU <= 0.25 against every ground truth, ties
    broken by scan order, capped at neg_cap and appended to the prior
    round's samples. Weights are uniform over the final set.

    Windows overlapping ignore-flagged ground truth are never sampled as
    negatives; ignore boxes seed no positives.
    """
    if len(image_ids) != len(stacks):
        raise ValueError("image_ids/stacks length mismatch")
    if stacks and any((s.ratio, s.channels) != (stacks[0].ratio, stacks[0].channels)
                      for s in stacks):
        raise ValueError("stacks must share ratio and channel count")
    wh, ww = cfg.window
    pos_rows = []
    neg_pool = []  # (scan_seq, score, stack, oy, ox, ch, cw)
    scan_seq = 0
    have_gt = False
    for image_id, stack in zip(image_ids, stacks):
        ratio = stack.ratio
        if wh % ratio or ww % ratio:
            raise ValueError("window not divisible by stack ratio")
        ch, cw = wh // ratio, ww // ratio
        n_oy = stack.height - ch + 1
        n_ox = stack.width - cw + 1
        if n_oy <= 0 or n_ox <= 0:
            continue
        gts = annotations.get(image_id, [])
        if any(not g.ignore for g in gts):
            have_gt = True

        # row-major scan grid; IoU of every window against each padded gt
        x0 = (np.tile(np.arange(n_ox), n_oy) * ratio).astype(np.float64)
        y0 = (np.repeat(np.arange(n_oy), n_ox) * ratio).astype(np.float64)
        n_win = n_oy * n_ox
        iou_all = np.zeros(n_win)
        per_eval_gt = []
        for g in gts:
            bx, by, bw, bh = padded_window_box((g.x, g.y, g.w, g.h), cfg.window)
            iw = np.minimum(x0 + ww, bx + bw) - np.maximum(x0, bx)
            ih = np.minimum(y0 + wh, by + bh) - np.maximum(y0, by)
            inter = np.where((iw > 0.0) & (ih > 0.0), iw * ih, 0.0)
            iou = inter / (float(ww * wh) + bw * bh - inter)
            iou_all = np.maximum(iou_all, iou)
            if not g.ignore:
                per_eval_gt.append(iou)

        if detector is None and per_eval_gt:
            chosen_pos = set()
            for iou in per_eval_gt:
                hits = np.nonzero(iou >= 0.5)[0]
                if cfg.pos_per_gt is not None and hits.size > cfg.pos_per_gt:
                    ranked = sorted(hits, key=lambda k: (-iou[k], k))
                    hits = ranked[: cfg.pos_per_gt]
                chosen_pos.update(int(k) for k in hits)
            for k in sorted(chosen_pos):
                if len(pos_rows) >= cfg.pos_cap:
                    break
                pos_rows.append(window_features(stack, k // n_ox, k % n_ox, ch, cw))

        neg_idx = np.nonzero(iou_all <= 0.25)[0]
        if detector is not None:
            _, scores = score_grid(detector, stack, step_cells=1)
            for k in neg_idx:
                neg_pool.append((scan_seq + int(k), float(scores[k]), stack,
                                 int(k) // n_ox, int(k) % n_ox, ch, cw))
        else:
            for k in neg_idx:
                neg_pool.append((scan_seq + int(k), 0.0, stack,
                                 int(k) // n_ox, int(k) % n_ox, ch, cw))
        scan_seq += n_win

    if detector is None:
        if not have_gt:
            raise ValueError("cannot seed positives")
        rng = np.random.default_rng(cfg.seed)
        take = min(cfg.neg_cap, len(neg_pool))
        sel = sorted(rng.choice(len(neg_pool), size=take, replace=False)) if take else []
        chosen = [neg_pool[int(k)] for k in sel]
    else:
        ranked = sorted(neg_pool, key=lambda e: (-e[1], e[0]))
        chosen = ranked[: cfg.neg_cap]

    neg_rows = [window_features(st, oy, ox, ch, cw)
                for (_, _, st, oy, ox, ch, cw) in chosen]

    if detector is not None:
        if prior is None:
            raise ValueError("bootstrap round requires prior samples")
        if not neg_rows:
            return prior
        feats = np.vstack([prior.features,
                           np.asarray(neg_rows, dtype=np.float32)])
        labels = np.concatenate([prior.labels, -np.ones(len(neg_rows), dtype=np.int8)])
        return SampleSet(feats, labels, uniform_weights(feats.shape[0]),
                         prior.channels, prior.cell_rows, prior.cell_cols)

    if not pos_rows:
        raise ValueError("cannot seed positives")
    feats = np.asarray(pos_rows + neg_rows, dtype=np.float32)
    labels = np.concatenate([np.ones(len(pos_rows), dtype=np.int8),
                             -np.ones(len(neg_rows), dtype=np.int8)])
    stack0 = stacks[0]
    ratio = stack0.ratio
    return SampleSet(feats, labels, uniform_weights(feats.shape[0]),
                     stack0.channels, wh // ratio, ww // ratio)


def feature_usage_heatmap(forest: BoostedForest) -> np.ndarray:
    """Count of split nodes per (cell_row, cell_col) over the whole forest."""
    grid = np.zeros((forest.cell_rows, forest.cell_cols), dtype=np.float64)
    for tree in forest.trees:
        for node in tree.nodes:
            if not node.is_leaf:
                grid[node.cell_row, node.cell_col] += 1.0
    return grid
