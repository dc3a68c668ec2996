"""
Residual centering and unit-pair enumeration shared by the estimators.
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterator, List, Optional, Tuple

import numpy as np

from app.core.errors import EstimationError
from app.models.dataset import Dataset, ResidualSet, Subject

logger = logging.getLogger(__name__)


def center_residuals(data: Dataset, skip_empty: bool = False) -> ResidualSet:
    """
    Subtract each subject's per-subunit mean from its responses.

    Subjects without units are rejected unless ``skip_empty`` is set, in
    which case they carry empty residual matrices and contribute no pairs
    (bootstrap blocks may be empty).
    """
    residuals, means = [], []
    for index, subject in enumerate(data.subjects):
        if subject.n_units == 0 and skip_empty:
            residuals.append(np.zeros((0, data.m)))
            means.append(np.full(data.m, np.nan))
            continue
        if subject.n_units == 0:
            raise EstimationError(f"subject {subject.id} has no units; cannot center residuals")
        responses = data.responses_of(index)
        mean = responses.mean(axis=0)
        resid = responses - mean
        resid.setflags(write=False)
        mean.setflags(write=False)
        residuals.append(resid)
        means.append(mean)
    return ResidualSet(dataset=data, residuals=residuals, means=means)


def enumerate_pairs(
    subject: Subject, cap: Optional[float] = None
) -> Iterator[Tuple[int, int, float]]:
    """
    Yield ordered pairs (i, k, S_i - S_k), i != k, 1-based indices.
    With ``cap``, only pairs with |S_i - S_k| <= cap are yielded.
    """
    locations = subject.unit_locations
    n = locations.size
    for i in range(n):
        for k in range(n):
            if i == k:
                continue
            delta = float(locations[i] - locations[k])
            if cap is not None and abs(delta) > cap:
                continue
            yield i + 1, k + 1, delta


@dataclass(frozen=True)
class SubjectPairs:
    """
    Unordered pairs i < k of one subject with signed lag S_i - S_k and the
    residual outer products e_i[j] * e_k[l], stored as (m, m, P).
    Pairs are sorted by |lag|.
    """
    first: np.ndarray
    second: np.ndarray
    lags: np.ndarray
    products: np.ndarray

    def window(self, center: float, h: float) -> slice:
        """Pairs with ||lag| - center| < h, as a contiguous slice"""
        abs_lags = np.abs(self.lags)
        lo = np.searchsorted(abs_lags, center - h, side="right")
        hi = np.searchsorted(abs_lags, center + h, side="left")
        return slice(int(lo), int(max(lo, hi)))

    @property
    def count(self) -> int:
        return int(self.lags.size)

    @property
    def abs_lags(self) -> np.ndarray:
        return np.abs(self.lags)

    def flat_products(self) -> np.ndarray:
        """(P, m*m) view for batched weighting"""
        m = self.products.shape[0]
        return self.products.reshape(m * m, -1).T


def build_subject_pairs(
    locations: np.ndarray, residuals: np.ndarray, cap: Optional[float] = None
) -> SubjectPairs:
    n = locations.size
    m = residuals.shape[1] if residuals.ndim == 2 else 0
    first, second = np.triu_indices(n, k=1)
    lags = locations[first] - locations[second]
    if cap is not None:
        keep = np.abs(lags) <= cap
        first, second, lags = first[keep], second[keep], lags[keep]
    order = np.argsort(np.abs(lags), kind="stable")
    first, second, lags = first[order], second[order], lags[order]
    # products[j, l, p] = e_first[j] * e_second[l]
    products = np.ascontiguousarray(
        residuals[first].T[:, None, :] * residuals[second].T[None, :, :]
    )
    if products.size == 0:
        products = np.zeros((m, m, 0))
    return SubjectPairs(first=first, second=second, lags=lags, products=products)


def build_pair_index(residuals: ResidualSet, cap: Optional[float] = None) -> List[SubjectPairs]:
    data = residuals.dataset
    index = [
        build_subject_pairs(subject.unit_locations, resid, cap)
        for subject, resid in zip(data.subjects, residuals.residuals)
    ]
    logger.debug(f"pair index: {sum(p.count for p in index)} unordered pairs, cap={cap}")
    return index


def exact_sum(values) -> float:
    """Correctly rounded sum; independent of the order of its terms"""
    return math.fsum(float(v) for v in values)


def exact_stack_sum(stack: np.ndarray) -> np.ndarray:
    """Elementwise correctly rounded sum over axis 0"""
    stack = np.asarray(stack, dtype=float)
    if stack.shape[0] == 0:
        return np.zeros(stack.shape[1:])
    flat = stack.reshape(stack.shape[0], -1)
    out = np.array([math.fsum(flat[:, c]) for c in range(flat.shape[1])])
    return out.reshape(stack.shape[1:])
