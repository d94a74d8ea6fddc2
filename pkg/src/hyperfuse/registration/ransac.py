"""Randomized RANSAC with SPRT model verification over 2D-3D correspondences."""
from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import DegenerateConfiguration, TooFewCorrespondences
from ..rng import Xoshiro256
from .dlt import MIN_POINTS, ProjectionModel, correspondence_arrays, fit_dlt
from .sprt import SprtConfig, sprt_test

log = logging.getLogger(__name__)

SAMPLE_SIZE = MIN_POINTS
_EPS_CAP = 0.99


@dataclass
class RegistrationResult:
    model: ProjectionModel | None
    inliers: list[int]
    iterations: int
    sprt_points_evaluated: int
    sprt_histogram: dict[int, int]
    accepted: bool
    models_verified: int = 0
    models_rejected: int = 0
    epsilon_final: float = 0.0
    mean_inlier_error: float = float("nan")
    inlier_errors: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    def pose_dict(self, cfg: SprtConfig) -> dict:
        return {
            "P": None if self.model is None else self.model.to_list(),
            "inliers": list(self.inliers),
            "iterations": self.iterations,
            "points_evaluated": self.sprt_points_evaluated,
            "points_evaluated_histogram": {str(k): v for k, v in sorted(self.sprt_histogram.items())},
            "accepted": self.accepted,
            "seed": cfg.seed,
            "config": asdict(cfg),
        }

    def to_json(self, cfg: SprtConfig) -> str:
        return json.dumps(self.pose_dict(cfg), indent=2, sort_keys=True) + "\n"


def adaptive_iterations(inlier_fraction: float, eta0: float, cap: int) -> int:
    """``ceil(ln eta0 / ln(1 - e^6))`` capped at ``cap``."""
    p = inlier_fraction ** SAMPLE_SIZE
    if p >= 1.0:
        return 1
    if p <= 0.0:
        return cap
    return int(min(cap, math.ceil(math.log(eta0) / math.log1p(-p))))


def _better(count, err, best):
    if best is None:
        return True
    return count > best[0] or (count == best[0] and err < best[1])


def ransac_register(corrs, cfg: SprtConfig = SprtConfig()) -> RegistrationResult:
    """Estimate the cube's projection from putative correspondences.

    Each iteration fits a 6-point DLT to a seeded random sample and screens it
    with SPRT; survivors are scored by inlier count (ties: lower summed
    reprojection error). A correspondence is an inlier only if it also lies
    in front of the camera. Epsilon tracks the best inlier fraction and the
    iteration budget shrinks accordingly. The winner is refit on all its
    inliers; the refit is kept only if it does not lose inliers.
    """
    uv, xyz = correspondence_arrays(corrs)
    n = len(uv)
    if n < SAMPLE_SIZE:
        raise TooFewCorrespondences(f"need at least {SAMPLE_SIZE} correspondences, got {n}")

    rng = Xoshiro256(cfg.seed)
    eps, delta = cfg.epsilon, cfg.delta
    budget = cfg.max_iterations
    best = None  # (count, err_sum, model, mask)
    hist: Counter = Counter()
    evaluated = verified = rejected = 0
    bad_inliers = bad_tested = 0
    it = 0
    while it < budget:
        it += 1
        sample = rng.sample(n, SAMPLE_SIZE)
        try:
            model = fit_dlt(uv[sample], xyz[sample])
        except DegenerateConfiguration:
            continue
        errs, mask = model.inlier_mask(uv, xyz, cfg.tau)
        res = sprt_test((mask[i] for i in rng.permutation_stream(n)), eps, delta, cfg.A)
        verified += 1
        evaluated += res.points_tested
        hist[res.points_tested] += 1
        if not res.good:
            rejected += 1
            bad_inliers += res.inliers_found
            bad_tested += res.points_tested
            if cfg.adapt_delta and bad_tested:
                delta = min(max(bad_inliers / bad_tested, 1e-3), eps - 1e-3)
            continue
        count = int(mask.sum())
        err = float(errs[mask].sum())
        if _better(count, err, best):
            best = (count, err, model, mask)
            frac = count / n
            if frac > eps:
                eps = min(frac, _EPS_CAP)
            budget = adaptive_iterations(frac, cfg.eta0, cfg.max_iterations)

    if best is None:
        log.info("no model survived verification after %d iterations", it)
        return RegistrationResult(None, [], it, evaluated, dict(hist), False, verified, rejected, eps)

    count, _, model, mask = best
    try:
        refit = fit_dlt(uv[mask], xyz[mask])
        refit_mask = refit.inlier_mask(uv, xyz, cfg.tau)[1]
        if refit_mask.sum() >= count:
            model, mask = refit, refit_mask
    except DegenerateConfiguration:
        pass
    errs = model.reprojection_errors(uv, xyz)
    inliers = np.flatnonzero(mask)
    accepted = cfg.accepts(len(inliers))
    return RegistrationResult(
        model=model,
        inliers=[int(i) for i in inliers],
        iterations=it,
        sprt_points_evaluated=evaluated,
        sprt_histogram=dict(hist),
        accepted=accepted,
        models_verified=verified,
        models_rejected=rejected,
        epsilon_final=eps,
        mean_inlier_error=float(errs[inliers].mean()) if len(inliers) else float("nan"),
        inlier_errors=errs[inliers],
    )
