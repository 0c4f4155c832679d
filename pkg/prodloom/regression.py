"""
Shared linear algebra for the estimation modules: fixed-effect dummies and
their absorption, rank diagnostics, least squares, and cluster-robust
covariance pieces.
"""

# Standard
from typing import Dict, List, Optional, Sequence, Tuple

# Third Party
import numpy as np
import pandas as pd
import scipy.linalg

# Local
from .errors import SingularDesignError
from .log import log

# Relative tolerance on the pivoted-QR diagonal below which a column counts as
# linearly dependent on the ones before it
RANK_TOL = 1e-10

## Public ######################################################################


def dummy_matrix(
    frame: pd.DataFrame,
    columns: Sequence[str],
    constant: bool = True,
) -> Tuple[np.ndarray, List[str]]:
    """Build a dummy-coded matrix for the given categorical columns

    Args:
        frame:  pd.DataFrame
            Data holding the categorical columns
        columns:  Sequence[str]
            Names of the categorical columns; each contributes one dummy per
            level except its first (sorted) level
        constant:  bool
            Prepend a column of ones

    Returns:
        matrix:  np.ndarray
            (n, p) design block
        names:  List[str]
            Column labels of the block
    """
    blocks = []
    names = []
    if constant:
        blocks.append(np.ones((len(frame), 1)))
        names.append("const")
    for column in columns:
        levels = sorted(frame[column].unique())
        for level in levels[1:]:
            blocks.append((frame[column].to_numpy() == level).astype(float)[:, None])
            names.append(f"{column}[{level}]")
    if not blocks:
        return np.zeros((len(frame), 0)), names
    return np.hstack(blocks), names


def absorb(
    absorbed: np.ndarray, *arrays: np.ndarray
) -> Tuple[Tuple[np.ndarray, ...], int]:
    """Residualize each array on the columns of `absorbed` (within
    transformation generalized to any set of fixed effects)

    Returns:
        residualized:  Tuple[np.ndarray, ...]
            The arrays with their projection on `absorbed` removed
        rank:  int
            Rank of `absorbed`, i.e. the degrees of freedom it consumes
    """
    if absorbed.shape[1] == 0:
        return tuple(np.asarray(arr, dtype=float).copy() for arr in arrays), 0
    rank = int(np.linalg.matrix_rank(absorbed))
    out = []
    for arr in arrays:
        arr = np.asarray(arr, dtype=float)
        coef, *_ = np.linalg.lstsq(absorbed, arr, rcond=None)
        out.append(arr - absorbed @ coef)
    log.debug3("Absorbed %d fixed-effect columns (rank %d)", absorbed.shape[1], rank)
    return tuple(out), rank


def collinear_columns(matrix: np.ndarray, names: Sequence[str]) -> List[str]:
    """Names of the columns that are (numerically) linear combinations of the
    columns preceding them in pivot order
    """
    if matrix.shape[1] == 0:
        return []
    scale = np.linalg.norm(matrix, axis=0)
    zero_cols = [names[i] for i in np.flatnonzero(scale <= RANK_TOL * max(scale.max(), 1.0))]
    safe = matrix / np.where(scale > 0, scale, 1.0)
    _, r_mat, piv = scipy.linalg.qr(safe, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r_mat))
    rank = int(np.sum(diag > RANK_TOL * max(diag[0], 1.0))) if diag.size else 0
    dependent = [names[i] for i in piv[rank:]]
    return sorted(set(dependent) | set(zero_cols), key=list(names).index)


def require_full_rank(matrix: np.ndarray, names: Sequence[str], context: str):
    """Raise a SingularDesignError naming the collinear columns if any"""
    bad = collinear_columns(matrix, names)
    if bad:
        log.warning("Rank deficient %s: %s", context, bad)
        raise SingularDesignError(bad, context)


def ols(y: np.ndarray, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Least-squares coefficients and residuals of y on x"""
    coef, *_ = np.linalg.lstsq(x, y, rcond=None)
    return coef, y - x @ coef


def rss(y: np.ndarray, x: Optional[np.ndarray]) -> float:
    """Residual sum of squares of y on x (y itself when x is empty)"""
    if x is None or x.shape[1] == 0:
        return float(y @ y)
    _, resid = ols(y, x)
    return float(resid @ resid)


def cluster_meat(scores: np.ndarray, groups: np.ndarray) -> Tuple[np.ndarray, int]:
    """Sum over clusters of the outer product of within-cluster score sums

    Args:
        scores:  np.ndarray
            (n, p) per-observation score contributions
        groups:  np.ndarray
            (n,) cluster labels

    Returns:
        meat:  np.ndarray
            (p, p) matrix with the small-sample factor G / (G - 1) applied
        n_clusters:  int
            Number of distinct clusters G
    """
    codes, n_clusters = _factorize(groups)
    sums = np.zeros((n_clusters, scores.shape[1]))
    np.add.at(sums, codes, scores)
    meat = sums.T @ sums
    if n_clusters > 1:
        meat *= n_clusters / (n_clusters - 1)
    return meat, n_clusters


def two_way_cluster_meat(
    scores: np.ndarray,
    first: np.ndarray,
    second: np.ndarray,
) -> Tuple[np.ndarray, Dict[str, int]]:
    """Inclusion-exclusion meat for two-way clustering:
    meat(first) + meat(second) - meat(first x second)
    """
    meat_a, n_a = cluster_meat(scores, first)
    meat_b, n_b = cluster_meat(scores, second)
    joint = pd.Series(list(zip(first, second))).astype(str).to_numpy()
    meat_ab, n_ab = cluster_meat(scores, joint)
    return meat_a + meat_b - meat_ab, {"first": n_a, "second": n_b, "joint": n_ab}


def sandwich(bread_inv: np.ndarray, meat: np.ndarray) -> Tuple[np.ndarray, bool]:
    """bread_inv @ meat @ bread_inv, symmetrized, with negative eigenvalues
    truncated at zero

    Returns:
        vcov:  np.ndarray
        repaired:  bool
            Whether any eigenvalue had to be truncated
    """
    vcov = bread_inv @ meat @ bread_inv
    vcov = (vcov + vcov.T) / 2
    return psd_repair(vcov)


def psd_repair(matrix: np.ndarray) -> Tuple[np.ndarray, bool]:
    """Truncate negative eigenvalues of a symmetric matrix at zero"""
    eigval, eigvec = np.linalg.eigh(matrix)
    if eigval.min() >= 0:
        return matrix, False
    log.warning(
        "Covariance not positive semidefinite (min eigenvalue %.3e); truncating",
        eigval.min(),
    )
    fixed = (eigvec * np.clip(eigval, 0, None)) @ eigvec.T
    return (fixed + fixed.T) / 2, True


## Implementation Details ######################################################


def _factorize(groups: np.ndarray) -> Tuple[np.ndarray, int]:
    codes, uniques = pd.factorize(pd.Series(groups), sort=True)
    return codes, len(uniques)
