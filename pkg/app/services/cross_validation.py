"""
Leave-one-subject-out cross-validation for bandwidth selection
"""

import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.config import settings
from app.core.errors import ConfigError, DegenerateG, InsufficientSubjects, NoUsablePairs
from app.core.pairs import SubjectPairs, build_pair_index, center_residuals, exact_sum
from app.models.cv import CvConfig, CvCriterion, CvReport, CvScore
from app.models.dataset import Dataset
from app.models.kernel import GlobalBandwidth, KernelFamily, KernelSpec
from app.services.estimator import lower_sum, lower_sums, weighted_pair_sums

logger = logging.getLogger(__name__)


def default_candidates(delta_cap: float, count: Optional[int] = None) -> List[float]:
    """Log-spaced bandwidths over [delta_cap / 50, delta_cap / 2]"""
    count = count or settings.CV_CANDIDATE_COUNT
    return [float(h) for h in np.geomspace(delta_cap / 50.0, delta_cap / 2.0, count)]


def _held_out_queries(pairs: SubjectPairs, delta_cap: float) -> Tuple[np.ndarray, np.ndarray]:
    """|lag| and raw cross-products (Q, m, m) of the pairs with |lag| < delta_cap"""
    n = int(np.searchsorted(pairs.abs_lags, delta_cap, side="left"))
    return pairs.abs_lags[:n], np.moveaxis(pairs.products[:, :, :n], -1, 0)


def _pooled_sums(
    index: List[SubjectPairs], held_out: int, family, deltas: np.ndarray, h: np.ndarray, m: int
) -> Tuple[np.ndarray, np.ndarray]:
    num = np.zeros((deltas.size, m, m))
    den = np.zeros(deltas.size)
    for s, pairs in enumerate(index):
        if s == held_out:
            continue
        subject_num, subject_den = weighted_pair_sums(pairs, family, deltas, h)
        num += subject_num
        den += subject_den
    return num, den


def _predict(
    index: List[SubjectPairs],
    held_out: int,
    kernel: KernelSpec,
    deltas: np.ndarray,
    criterion: CvCriterion,
    m: int,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Leave-one-out predictions at |deltas| from every subject but ``held_out``.
    Returns (predictions for supported lags, support mask); unsupported lags
    carry no prediction.
    """
    h = kernel.bandwidths_at(deltas)
    if criterion == CvCriterion.CV1:
        num, den = _pooled_sums(index, held_out, kernel.family, deltas, h, m)
        ok = den > 0
        return num[ok] / den[ok, None, None], ok

    all_deltas = np.concatenate([[0.0], deltas])
    all_h = np.concatenate([[kernel.bandwidth_at(0.0)], h])
    num, den = _pooled_sums(index, held_out, kernel.family, all_deltas, all_h, m)
    if den[0] == 0:
        return np.zeros((0, m, m)), np.zeros(deltas.size, dtype=bool)
    g = num[0] / den[0]
    g_sum = lower_sum(g)
    rows, cols = np.tril_indices(m)
    if g_sum == 0 or abs(g_sum) < settings.DEGENERATE_G_TOLERANCE * exact_sum(np.abs(g[rows, cols])):
        return np.zeros((0, m, m)), np.zeros(deltas.size, dtype=bool)
    ok = den[1:] > 0
    rho = lower_sums(num[1:][ok] / den[1:][ok, None, None]) / g_sum
    return g[None, :, :] * rho[:, None, None], ok


def held_out_prediction(
    data: Dataset,
    kernel: KernelSpec,
    held_out: int,
    deltas: Sequence[float],
    criterion: CvCriterion = CvCriterion.CV1,
) -> np.ndarray:
    """Predictions used for subject ``held_out``; NaN where unsupported"""
    deltas = np.abs(np.asarray(deltas, dtype=float))
    cap = float(deltas.max() + kernel.max_bandwidth) if deltas.size else 0.0
    index = build_pair_index(center_residuals(data), cap)
    pred, ok = _predict(index, held_out, kernel, deltas, criterion, data.m)
    out = np.full((deltas.size, data.m, data.m), np.nan)
    out[ok] = pred
    return out


def _score(index: List[SubjectPairs], kernel: KernelSpec, criterion: CvCriterion, delta_cap: float, m: int):
    parts, terms, skipped = [], 0, 0
    for r, pairs in enumerate(index):
        lags, products = _held_out_queries(pairs, delta_cap)
        if lags.size == 0:
            continue
        pred, ok = _predict(index, r, kernel, lags, criterion, m)
        # ordered pairs (i, k) and (k, i) give the same squared error
        parts.append(2.0 * float(((products[ok] - pred) ** 2).sum()))
        terms += 2 * int(ok.sum()) * m * m
        skipped += 2 * int((~ok).sum()) * m * m
    return exact_sum(parts), terms, skipped


def _as_kernel(h: Union[float, KernelSpec], family: KernelFamily) -> KernelSpec:
    return h if isinstance(h, KernelSpec) else KernelSpec.global_h(float(h), family)


def _check_subjects(data: Dataset) -> None:
    if data.n_subjects < 2:
        raise InsufficientSubjects(
            f"leave-one-subject-out needs at least 2 subjects, got {data.n_subjects}"
        )


def _candidate_score(
    index: List[SubjectPairs], kernel: KernelSpec, criterion: CvCriterion, delta_cap: float, m: int
) -> CvScore:
    score, terms, skipped = _score(index, kernel, criterion, delta_cap, m)
    policy = kernel.bandwidth
    if isinstance(policy, GlobalBandwidth):
        h, h_far = policy.h, None
    else:
        h, h_far = policy.h_near, policy.h_far
    total = terms + skipped
    reliable = terms > 0 and skipped / total <= settings.CV_SKIP_FRACTION_LIMIT
    if skipped:
        logger.warning(
            f"h={h:g}{'' if h_far is None else f'/{h_far:g}'}: skipped {skipped} of {total} "
            f"unsupported CV terms"
        )
    return CvScore(h=h, h_far=h_far, score=score, terms=terms, skipped=skipped, reliable=reliable)


def score_candidate(
    data: Dataset,
    kernel: KernelSpec,
    config: CvConfig,
) -> CvScore:
    """Full score record (score, term and skip counts) for one candidate"""
    _check_subjects(data)
    cap = config.delta_cap + kernel.max_bandwidth
    index = build_pair_index(center_residuals(data), cap)
    return _candidate_score(index, kernel, config.criterion, config.delta_cap, data.m)


def cv1_score(data: Dataset, family: KernelFamily, h: Union[float, KernelSpec], config: CvConfig) -> float:
    config = config.model_copy(update={"criterion": CvCriterion.CV1})
    return score_candidate(data, _as_kernel(h, family), config).score


def cv2_score(data: Dataset, family: KernelFamily, h: Union[float, KernelSpec], config: CvConfig) -> float:
    config = config.model_copy(update={"criterion": CvCriterion.CV2})
    return score_candidate(data, _as_kernel(h, family), config).score


def _score_task(payload) -> CvScore:
    data, kernel, criterion, delta_cap, cap = payload
    index = build_pair_index(center_residuals(data), cap)
    return _candidate_score(index, kernel, criterion, delta_cap, data.m)


def _evaluate(data: Dataset, kernels: List[KernelSpec], config: CvConfig, workers: int) -> List[CvScore]:
    cap = config.delta_cap + max(k.max_bandwidth for k in kernels)
    if workers > 1 and len(kernels) > 1:
        payloads = [(data, k, config.criterion, config.delta_cap, cap) for k in kernels]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_score_task, payloads))
    index = build_pair_index(center_residuals(data), cap)
    return [_candidate_score(index, k, config.criterion, config.delta_cap, data.m) for k in kernels]


def _choose(scores: List[CvScore]) -> CvScore:
    """Arg-min over candidates with a nonempty sum; unreliable ones stay eligible"""
    pool = [s for s in scores if not s.empty]
    if not pool:
        raise NoUsablePairs("every candidate bandwidth produced an empty CV sum")
    best = min(pool, key=lambda s: (s.score, s.h, s.h_far or 0.0))
    if not best.reliable:
        logger.warning(
            f"selected h={best.h:g} skips {best.skipped} of {best.terms + best.skipped} CV terms; "
            f"treat the choice as unreliable"
        )
    return best


def select_bandwidth(
    data: Dataset,
    family: KernelFamily,
    config: CvConfig,
    workers: Optional[int] = None,
) -> CvReport:
    _check_subjects(data)
    candidates = config.candidate_bandwidths or default_candidates(config.delta_cap)
    kernels = [KernelSpec.global_h(h, family) for h in candidates]
    scores = _evaluate(data, kernels, config, workers or settings.WORKERS)
    best = _choose(scores)
    logger.info(f"{config.criterion.value} selected h={best.h:g} (score {best.score:.6g})")
    return CvReport(criterion=config.criterion, delta_cap=config.delta_cap, scores=scores, best=best)


def select_two_regime(
    data: Dataset,
    family: KernelFamily,
    config: CvConfig,
    split_delta: Optional[float] = None,
    workers: Optional[int] = None,
) -> CvReport:
    _check_subjects(data)
    split = split_delta or config.split_delta
    if split is None:
        raise ConfigError("two-regime selection needs a split lag")
    near = config.candidates_near or config.candidate_bandwidths or default_candidates(config.delta_cap)
    far = config.candidates_far or config.candidate_bandwidths or default_candidates(config.delta_cap)
    kernels = [
        KernelSpec.two_regime(h_near, h_far, split, family)
        for h_near, h_far in itertools.product(near, far)
    ]
    scores = _evaluate(data, kernels, config, workers or settings.WORKERS)
    best = _choose(scores)
    logger.info(
        f"{config.criterion.value} selected h_near={best.h:g}, h_far={best.h_far:g} "
        f"(score {best.score:.6g})"
    )
    return CvReport(
        criterion=config.criterion,
        delta_cap=config.delta_cap,
        split_delta=split,
        scores=scores,
        best=best,
    )


class CrossValidationService:
    """Bandwidth selection front end used by the CLI and the API"""

    def select(self, data: Dataset, family: KernelFamily, config: CvConfig, workers: Optional[int] = None) -> CvReport:
        try:
            if config.two_regime:
                return select_two_regime(data, family, config, workers=workers)
            return select_bandwidth(data, family, config, workers=workers)
        except (InsufficientSubjects, NoUsablePairs, DegenerateG) as e:
            logger.error(f"Bandwidth selection failed: {e}")
            raise

    @staticmethod
    def selected_kernel(report: CvReport, family: KernelFamily) -> KernelSpec:
        if report.best.h_far is None:
            return KernelSpec.global_h(report.best.h, family)
        return KernelSpec.two_regime(report.best.h, report.best.h_far, report.split_delta, family)


# Global service instance
cross_validation_service = CrossValidationService()


def get_cross_validation_service() -> CrossValidationService:
    """Dependency for FastAPI to get the cross-validation service"""
    return cross_validation_service
