"""Quantitative evaluation: FID, KID, and Bradley-Terry vote aggregation.

Feature extraction is external; this module consumes feature files in a
small binary format (see :func:`write_features`) so any extractor can feed
it. The evaluation renderer produces the standard 8-view ring used to
compare painted models.
"""

from __future__ import annotations

import csv
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse.csgraph import connected_components

from repaint3d.geometry import FRAMING_RADIUS, Mesh, camera_on_sphere
from repaint3d.images import to_u8, write_png
from repaint3d.raster import render_color

EVAL_AZIMUTHS = tuple(float(a) for a in range(0, 360, 45))

_MAGIC = b"FTS1"


class EvalError(ValueError):
    pass


@dataclass
class FeatureSet:
    """n x d feature matrix, one row per image."""

    features: np.ndarray
    extractor_id: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise EvalError("features must be a 2-D (n, d) matrix")
        if not np.isfinite(self.features).all():
            raise EvalError("features contain non-finite entries")

    def __len__(self):
        return len(self.features)


def write_features(path, features, extractor_id: str = "") -> None:
    """Write a feature file.

    Layout (little endian): magic b"FTS1", uint32 n, uint32 d,
    uint16 byte length of the utf-8 extractor id, the id bytes, then the
    n x d float32 row-major matrix.
    """
    fs = features if isinstance(features, FeatureSet) else FeatureSet(features, extractor_id)
    data = fs.features.astype("<f4")
    ident = fs.extractor_id.encode("utf-8")
    if len(ident) > 0xFFFF:
        raise EvalError("extractor id too long")
    n, d = data.shape
    header = _MAGIC + struct.pack("<IIH", n, d, len(ident)) + ident
    Path(path).write_bytes(header + data.tobytes())


def read_features(path) -> FeatureSet:
    raw = Path(path).read_bytes()
    if len(raw) < 14 or raw[:4] != _MAGIC:
        raise EvalError(f"{path} is not a feature file (bad header)")
    n, d, ident_len = struct.unpack("<IIH", raw[4:14])
    body = 14 + ident_len
    ident = raw[14:body].decode("utf-8")
    expected = body + 4 * n * d
    if len(raw) != expected:
        raise EvalError(f"{path} is truncated: expected {expected} bytes, got {len(raw)}")
    data = np.frombuffer(raw[body:], dtype="<f4").reshape(n, d)
    return FeatureSet(data, ident)


def _matrix(features) -> np.ndarray:
    if isinstance(features, FeatureSet):
        return features.features
    return FeatureSet(features).features


def _psd_sqrt_trace(product: np.ndarray) -> float:
    # trace of the principal square root; negative eigenvalues within the
    # numerical guard are clipped, anything worse is a real failure
    sym = (product + product.T) / 2.0
    eigvals = np.linalg.eigvalsh(sym)
    guard = 1e-8 * max(abs(np.trace(sym)), np.finfo(np.float64).tiny)
    if eigvals.min() < -guard:
        raise EvalError("covariance square root did not converge")
    return float(np.sqrt(np.clip(eigvals, 0.0, None)).sum())


def fid(a, b) -> float:
    """Frechet distance between the Gaussian fits of two feature sets."""
    fa, fb = _matrix(a), _matrix(b)
    if fa.shape[1] != fb.shape[1]:
        raise EvalError(f"feature dimension mismatch: {fa.shape[1]} vs {fb.shape[1]}")
    if len(fa) < 2 or len(fb) < 2:
        raise EvalError("fid needs at least 2 rows per set")
    mu_a, mu_b = fa.mean(axis=0), fb.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(fa, rowvar=False))
    cov_b = np.atleast_2d(np.cov(fb, rowvar=False))
    # Tr((Sa Sb)^1/2) computed on the symmetric conjugate Sa^1/2 Sb Sa^1/2
    w, v = np.linalg.eigh((cov_a + cov_a.T) / 2.0)
    guard = 1e-8 * max(abs(np.trace(cov_a)), np.finfo(np.float64).tiny)
    if w.min() < -guard:
        raise EvalError("covariance square root did not converge")
    half = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    cross = _psd_sqrt_trace(half @ cov_b @ half)
    diff = mu_a - mu_b
    return float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * cross)


def _polynomial_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    d = x.shape[1]
    return (x @ y.T / d + 1.0) ** 3


def _mmd2_unbiased(x: np.ndarray, y: np.ndarray) -> float:
    # U-statistic form: diagonals excluded from all three blocks, so two
    # identical sample sets give exactly zero
    m = len(x)
    kxx = _polynomial_kernel(x, x)
    kyy = _polynomial_kernel(y, y)
    kxy = _polynomial_kernel(x, y)
    scale = 1.0 / (m * (m - 1))
    return float(scale * (kxx.sum() - np.trace(kxx))
                 + scale * (kyy.sum() - np.trace(kyy))
                 - 2.0 * scale * (kxy.sum() - np.trace(kxy)))


def kid(a, b, subsets: int = 100, subset_size: int = 1000,
        seed: int = 0) -> tuple[float, float]:
    """Kernel distance (polynomial MMD^2) averaged over random subsets.

    Returns (mean, std) across subsets. When a set is smaller than
    subset_size the subset is clamped to the full set, which also makes the
    estimate deterministic for that side.
    """
    fa, fb = _matrix(a), _matrix(b)
    if fa.shape[1] != fb.shape[1]:
        raise EvalError(f"feature dimension mismatch: {fa.shape[1]} vs {fb.shape[1]}")
    m = min(subset_size, len(fa), len(fb))
    if m < subset_size:
        warnings.warn(f"kid subset_size {subset_size} clamped to {m}", stacklevel=2)
    if m < 2:
        raise EvalError("kid needs at least 2 rows per set")
    rng = np.random.default_rng(seed)
    values = np.empty(subsets)
    for i in range(subsets):
        xa = fa if m == len(fa) else fa[rng.choice(len(fa), m, replace=False)]
        xb = fb if m == len(fb) else fb[rng.choice(len(fb), m, replace=False)]
        values[i] = _mmd2_unbiased(xa, xb)
    std = float(values.std(ddof=1)) if subsets > 1 else 0.0
    return float(values.mean()), std


@dataclass
class BradleyTerryResult:
    """Fitted log-scores (finite entries sum to 0) with 95% CI half-widths."""

    items: list
    scores: np.ndarray
    ci: np.ndarray

    def as_dict(self):
        return {item: (float(s), float(c))
                for item, s, c in zip(self.items, self.scores, self.ci)}


def read_votes(path) -> list[tuple[str, str]]:
    """Read (winner, loser) pairs from a two-column CSV without header."""
    votes = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            if len(row) != 2:
                raise EvalError(f"vote rows need exactly 2 fields, got {row}")
            votes.append((row[0].strip(), row[1].strip()))
    return votes


def _components(items, games):
    n_comp, labels = connected_components(games > 0, directed=False)
    groups = [[] for _ in range(n_comp)]
    for item, label in zip(items, labels):
        groups[label].append(item)
    return groups


def bradley_terry(votes, items=None, tol: float = 1e-10,
                  max_iter: int = 100_000) -> BradleyTerryResult:
    """Maximum-likelihood Bradley-Terry scores from pairwise votes.

    P(i beats j) = sigmoid(s_i - s_j), fitted by minorization-maximization
    until the likelihood gradient is below tol. Items that win or lose every
    one of their comparisons have no finite MLE; they are reported with
    score +/-inf and an unbounded (inf) confidence interval, and the finite
    scores are normalized to sum to zero.
    """
    votes = list(votes)
    if not votes:
        raise EvalError("no votes")
    if items is None:
        items = sorted({v for pair in votes for v in pair})
    items = list(items)
    index = {item: i for i, item in enumerate(items)}
    n = len(items)
    wins = np.zeros((n, n))
    for winner, loser in votes:
        if winner not in index or loser not in index:
            raise EvalError(f"vote references unknown item: {(winner, loser)}")
        wins[index[winner], index[loser]] += 1
    games = wins + wins.T

    groups = _components(items, games)
    if len(groups) > 1:
        raise EvalError(f"comparison graph is disconnected: components {groups}")

    # peel items with all wins or all losses; their scores diverge and the
    # remaining subproblem is the exact MLE of the reduced vote set
    active = np.ones(n, dtype=bool)
    scores = np.zeros(n)
    while True:
        won = wins[np.ix_(active, active)].sum(axis=1)
        played = games[np.ix_(active, active)].sum(axis=1)
        idx = np.flatnonzero(active)
        all_wins = idx[(won == played) & (played > 0)]
        all_losses = idx[(won == 0) & (played > 0)]
        if len(all_wins) == 0 and len(all_losses) == 0:
            break
        scores[all_wins] = np.inf
        scores[all_losses] = -np.inf
        active[all_wins] = False
        active[all_losses] = False
    fitted = np.flatnonzero(active & (games.sum(axis=1) > 0))
    isolated = np.flatnonzero(active & (games.sum(axis=1) == 0))
    if len(isolated) and len(fitted):
        raise EvalError(
            f"comparison graph is disconnected after removing one-sided items: "
            f"isolated {[items[i] for i in isolated]}")

    ci = np.full(n, np.inf)
    if len(fitted):
        w_f = wins[np.ix_(fitted, fitted)]
        g_f = games[np.ix_(fitted, fitted)]
        if len(_components([items[i] for i in fitted], g_f)) > 1:
            raise EvalError(
                "comparison graph is disconnected after removing one-sided items")
        pi = np.ones(len(fitted))
        total_wins = w_f.sum(axis=1)
        for _ in range(max_iter):
            pair_sum = pi[:, None] + pi[None, :]
            prob = pi[:, None] / pair_sum
            grad = total_wins - (g_f * prob).sum(axis=1)
            if np.abs(grad).max() <= tol:
                break
            denom = (g_f / pair_sum).sum(axis=1)
            pi = total_wins / denom
            pi = pi / np.exp(np.log(pi).mean())
        else:
            raise EvalError(f"bradley_terry did not converge in {max_iter} iterations")
        s = np.log(pi)
        s = s - s.mean()
        scores[fitted] = s
        # observed information; the sum-to-zero gauge makes it singular, so
        # variances come from the pseudo-inverse
        p = 1.0 / (1.0 + np.exp(-(s[:, None] - s[None, :])))
        fisher = g_f * p * (1.0 - p)
        hessian = np.diag(fisher.sum(axis=1)) - fisher
        variance = np.diag(np.linalg.pinv(hessian))
        ci[fitted] = 1.96 * np.sqrt(np.clip(variance, 0.0, None))
    return BradleyTerryResult(items, scores, ci)


def render_eval_views(source, dirpath, mesh: Mesh | None = None, *,
                      elevation: float = 0.0, radius: float = FRAMING_RADIUS,
                      fov_y: float = 60.0, resolution: int = 512) -> list[Path]:
    """Render the 8-view evaluation ring (azimuths 0..315 step 45).

    `source` is either a colored Mesh (vertex colors rendered directly) or a
    fused SurfaceColorField, in which case `mesh` supplies the geometry.
    """
    from repaint3d.fusion import render_fused

    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    paths = []
    for azimuth in EVAL_AZIMUTHS:
        cam = camera_on_sphere(azimuth, elevation, radius=radius,
                               fov_y=fov_y, resolution=resolution)
        if isinstance(source, Mesh):
            image = render_color(source, cam)
        else:
            if mesh is None:
                raise EvalError("rendering a surface field needs the mesh")
            image = render_fused(source, mesh, cam)
        path = dirpath / f"view_{int(azimuth):03d}.png"
        write_png(path, to_u8(image))
        paths.append(path)
    return paths
