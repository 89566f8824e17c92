"""Multi-stage reranking of retrieved reference functions.

Stage 1 drops candidates missing required signature features (with a
fallback to the unfiltered pool so the result is never empty). Stage 2
rescores semantic distance by dividing through a log-damped usage
frequency, favoring widely used implementations. Stage 3 walks the
rescored list in order, keeps at most one member per clone group, and
stops once k references are selected.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

from .embedding import Candidate, EmbeddingVector
from .model import SignatureFeatures, VulnClass

DEFAULT_EPSILON = math.e - 1.0
DEFAULT_K = 3
DEFAULT_TOP_N = 50


class ScoreError(Exception):
    """Trust rescoring failed.

    ``code`` is ``NonPositiveDenominator``: ln(guf + epsilon) was not
    positive, which signals a misconfigured epsilon.
    """

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class RerankConfig:
    epsilon: float = DEFAULT_EPSILON
    k: int = DEFAULT_K
    top_n: int = DEFAULT_TOP_N

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.top_n < 1:
            raise ValueError("top_n must be >= 1")


@dataclass(frozen=True)
class QueryContext:
    query_vector: EmbeddingVector
    sig_req: SignatureFeatures
    vuln_class: VulnClass


def filter_syntactic(c_init: list[Candidate], sig_req: SignatureFeatures
                     ) -> tuple[list[Candidate], bool]:
    """Keep candidates whose signatures contain every required feature.

    An empty survivor set falls back to the unfiltered pool (flagged),
    so a non-empty input never filters down to nothing.
    """
    kept = [c for c in c_init if sig_req.issubset_of(c.signature)]
    if not kept:
        return list(c_init), True
    return kept, False


def score_trust(s_sem: float, guf: int, epsilon: float) -> float:
    """Rescored distance: s_sem / ln(guf + epsilon)."""
    argument = guf + epsilon
    if argument <= 0.0:
        raise ScoreError(
            "NonPositiveDenominator",
            f"guf + epsilon = {argument} is outside the log domain")
    denominator = math.log(argument)
    if denominator <= 0.0:
        raise ScoreError(
            "NonPositiveDenominator",
            f"ln({guf} + {epsilon}) = {denominator} is not positive")
    return s_sem / denominator


def rerank(c_init: list[Candidate], q: QueryContext, cfg: RerankConfig
           ) -> list[Candidate]:
    """Filter, rescore, deduplicate clone groups, and cut to k references.

    Output is ascending by rescored distance (ties by raw distance, then
    function id); at most one candidate per clone group survives, while
    candidates without a clone group are always eligible.
    """
    filtered, _ = filter_syntactic(c_init, q.sig_req)
    rescored = [
        dataclasses.replace(c, s_final=score_trust(c.s_sem, c.guf, cfg.epsilon))
        for c in filtered
    ]
    rescored.sort(key=lambda c: (c.s_final, c.s_sem, c.function_id))
    selected: list[Candidate] = []
    seen_clones: set[str] = set()
    for candidate in rescored:
        if candidate.clone_id is not None:
            if candidate.clone_id in seen_clones:
                continue
            seen_clones.add(candidate.clone_id)
        selected.append(candidate)
        if len(selected) == cfg.k:
            break
    return selected
