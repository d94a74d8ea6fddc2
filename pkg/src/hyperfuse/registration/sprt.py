"""Wald's sequential probability ratio test for RANSAC model verification."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from ..errors import ConfigError
from ..rng import Xoshiro256


@dataclass(frozen=True)
class SprtConfig:
    """Verification and acceptance parameters.

    ``epsilon`` is the inlier probability under a good model (adapted during
    RANSAC), ``delta`` under a bad one, ``A`` the rejection threshold on the
    likelihood ratio, ``tau`` the inlier reprojection threshold in pixels and
    ``n_min`` the inlier count the final model must exceed (``accept_rule =
    "ge"`` makes it "at least").
    """

    epsilon: float = 0.2
    delta: float = 0.05
    A: float = 20.0
    tau: float = 3.0
    n_min: int = 5
    eta0: float = 0.01
    max_iterations: int = 10000
    seed: int = 0
    accept_rule: str = "gt"
    adapt_delta: bool = False

    def __post_init__(self):
        if not 0 < self.delta < self.epsilon < 1:
            raise ConfigError("need 0 < delta < epsilon < 1")
        if not self.A > 1:
            raise ConfigError("A must exceed 1")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        if self.n_min < 1:
            raise ConfigError("n_min must be at least 1")
        if not 0 < self.eta0 < 1:
            raise ConfigError("eta0 must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be positive")
        if self.accept_rule not in ("gt", "ge"):
            raise ConfigError("accept_rule must be 'gt' or 'ge'")

    def accepts(self, n_inliers: int) -> bool:
        return n_inliers > self.n_min if self.accept_rule == "gt" else n_inliers >= self.n_min


@dataclass(frozen=True)
class SprtResult:
    decision: str  # "good" or "bad"
    inliers_found: int
    points_tested: int
    lambda_final: float

    @property
    def good(self) -> bool:
        return self.decision == "good"


def sprt_test(flags: Iterable[bool], epsilon: float, delta: float, A: float) -> SprtResult:
    """Run the test over a stream of inlier flags, stopping once the ratio exceeds ``A``."""
    up = (1.0 - delta) / (1.0 - epsilon)
    down = delta / epsilon
    lam = 1.0
    tested = inliers = 0
    for flag in flags:
        tested += 1
        if flag:
            inliers += 1
            lam *= down
        else:
            lam *= up
        if lam > A:
            return SprtResult("bad", inliers, tested, lam)
    return SprtResult("good", inliers, tested, lam)


def sprt_evaluate(model, corrs, cfg: SprtConfig, rng: Xoshiro256 | None = None,
                  epsilon: float | None = None, delta: float | None = None) -> SprtResult:
    """Verify ``model`` on correspondences visited in a seeded random order."""
    from .dlt import correspondence_arrays

    uv, xyz = correspondence_arrays(corrs)
    if rng is None:
        rng = Xoshiro256(cfg.seed)
    inl = model.inlier_mask(uv, xyz, cfg.tau)[1] if len(uv) else np.zeros(0, bool)
    return sprt_test(
        (inl[i] for i in rng.permutation_stream(len(uv))),
        cfg.epsilon if epsilon is None else epsilon,
        cfg.delta if delta is None else delta,
        cfg.A,
    )


def wald_bad_model_bound(epsilon: float, delta: float, A: float) -> float:
    """All-outlier run length needed to reject: ``ln A / ln((1 - delta) / (1 - epsilon))``."""
    return float(np.log(A) / np.log((1 - delta) / (1 - epsilon)))


def wald_expected_tests(epsilon: float, delta: float, A: float, inlier_rate: float) -> float:
    """Wald's approximation ``ln A / C`` of the mean points tested on a bad model.

    ``C`` is the expected log-ratio increment per point when points are inliers
    with probability ``inlier_rate``.
    """
    c = (1 - inlier_rate) * np.log((1 - delta) / (1 - epsilon)) + inlier_rate * np.log(delta / epsilon)
    return float(np.log(A) / c)
