"""The mechanical feature-space ladder.

Sixteen candidates, always: a base model on the five small dimensions, then
domains-only, ZIPs-only and both at K in {10, 20, 50, 100, 200}.  Selected
levels are the union of the top-K by positive frequency and top-K by
negative frequency on the training set.  Every candidate is fitted and
scored on the calibration set; the best ROC wins.  There is no early stop
and never a ZIP-by-domain cross term.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from collections import Counter

from . import irls
from .calibration import roc_from_scores, select_threshold
from .dataset import LabeledSet, Split
from .irls import DesignMatrix, FitConfig
from .model_core import (
    DIMENSIONS,
    BinaryModel,
    FeatureIndex,
    LabeledVector,
    encode_impression,
    linear_predictor,
)

log = logging.getLogger(__name__)

BASE_DIMENSIONS = ("exchange", "hour", "day", "ad_format", "ad_size")
LADDER_K = (10, 20, 50, 100, 200)
FEATURE_CAP = 800


class AllCandidatesFailedError(Exception):
    """No ladder candidate produced a fitted model."""


@dataclass(frozen=True)
class Candidate:
    include_domains: bool
    include_zips: bool
    k: int
    selected_levels: tuple[tuple[str, tuple], ...] = ()  # dimension -> levels
    n_features: int = 0
    auc: float | None = None
    status: str = "pending"  # fitted | skipped | failed
    detail: str = ""

    @property
    def name(self) -> str:
        if self.k == 0:
            return "base"
        dims = []
        if self.include_domains:
            dims.append("domains")
        if self.include_zips:
            dims.append("zips")
        return f"{'+'.join(dims)}@k={self.k}"


@dataclass(frozen=True)
class ExplorationReport:
    campaign: str
    candidates: tuple[Candidate, ...]
    best: Candidate
    fitted_model: BinaryModel

    def to_json(self) -> str:
        doc = {
            "campaign": self.campaign,
            "best": self.best.name,
            "best_auc": self.best.auc,
            "candidates": [
                {
                    "name": c.name,
                    "include_domains": c.include_domains,
                    "include_zips": c.include_zips,
                    "k": c.k,
                    "n_features": c.n_features,
                    "auc": c.auc,
                    "status": c.status,
                    "detail": c.detail,
                    "selected_levels": {
                        dim: list(levels) for dim, levels in c.selected_levels
                    },
                }
                for c in self.candidates
            ],
        }
        return json.dumps(doc, ensure_ascii=False, indent=2) + "\n"


def top_k_levels(train: LabeledSet, dimension: str, k: int) -> list:
    """Union of the K most frequent levels among positives and among negatives.

    Frequency ties break lexicographically; the union is returned sorted for
    deterministic downstream indexing.
    """
    if dimension not in ("domain", "zip"):
        raise ValueError(f"top-K selection applies to domain/zip, not {dimension!r}")
    if k < 1:
        raise ValueError("k must be >= 1")
    pos_counts: Counter = Counter()
    neg_counts: Counter = Counter()
    for imp, label in train.rows:
        (pos_counts if label == 1 else neg_counts)[imp.level(dimension)] += 1

    def top(counts: Counter) -> list:
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return [lvl for lvl, _ in ranked[:k]]

    return sorted(set(top(pos_counts)) | set(top(neg_counts)))


def observed_levels(train: LabeledSet, dimension: str) -> list:
    return sorted({imp.level(dimension) for imp, _ in train.rows})


def build_design(rows, index: FeatureIndex) -> DesignMatrix:
    vectors = tuple(
        LabeledVector(response=label, active_indices=encode_impression(imp, index))
        for imp, label in rows
    )
    return DesignMatrix(rows=vectors, n_features=index.n_features)


def ladder(ks: tuple[int, ...] = LADDER_K) -> list[Candidate]:
    """The fixed candidate grid: base, then {domains, zips, both} per K."""
    grid = [Candidate(include_domains=False, include_zips=False, k=0)]
    for k in ks:
        grid.append(Candidate(include_domains=True, include_zips=False, k=k))
        grid.append(Candidate(include_domains=False, include_zips=True, k=k))
        grid.append(Candidate(include_domains=True, include_zips=True, k=k))
    return grid


def _fit_candidate(
    cand: Candidate,
    split: Split,
    base_dims: tuple[str, ...],
    config: FitConfig,
) -> tuple[Candidate, BinaryModel | None]:
    train, calib = split.training, split.calibration
    per_dim: dict[str, list] = {dim: observed_levels(train, dim) for dim in base_dims}
    if cand.include_domains:
        per_dim["domain"] = top_k_levels(train, "domain", cand.k)
    if cand.include_zips:
        per_dim["zip"] = top_k_levels(train, "zip", cand.k)
    # Only the seven singleton dimensions may ever be indexed: no cross terms.
    assert set(per_dim) <= set(DIMENSIONS), f"unexpected dimensions {set(per_dim) - set(DIMENSIONS)}"

    selected = tuple(
        (dim, tuple(levels))
        for dim, levels in sorted(per_dim.items())
        if dim not in base_dims
    )
    n_features = sum(len(levels) for levels in per_dim.values())
    cand = replace(cand, selected_levels=selected, n_features=n_features)
    if n_features > FEATURE_CAP:
        return (
            replace(cand, status="skipped", detail=f"{n_features} features exceed cap {FEATURE_CAP}"),
            None,
        )

    index = FeatureIndex.from_levels(per_dim)
    try:
        result = irls.fit(build_design(train.rows, index), config)
    except (irls.DegenerateDataError, irls.RankDeficientError) as exc:
        return replace(cand, status="failed", detail=str(exc)), None

    beta = result.beta
    model = BinaryModel(
        campaign=train.campaign,
        intercept=float(beta[0]),
        betas={j: float(beta[j]) for j in range(1, len(beta))},
        threshold=0.0,  # placeholder until calibrated below
        auc=0.5,
        feature_index=index,
    )
    pos = [linear_predictor(model, imp) for imp, label in calib.rows if label == 1]
    neg = [linear_predictor(model, imp) for imp, label in calib.rows if label == 0]
    curve = roc_from_scores(pos, neg)
    choice = select_threshold(curve)
    model = replace(model, threshold=choice.cut, auc=curve.auc)
    detail = "; ".join(result.warnings) if result.warnings else ""
    return replace(cand, status="fitted", auc=curve.auc, detail=detail), model


def explore(
    split: Split,
    base_dims: tuple[str, ...] = BASE_DIMENSIONS,
    fit_config: FitConfig = FitConfig(),
    ks: tuple[int, ...] = LADDER_K,
) -> ExplorationReport:
    """Run the full ladder and keep the candidate with the best calibration ROC.

    Ties go to the candidate with fewer features, then the earlier ladder
    position.  A candidate's solver failure demotes it without aborting the
    exploration; only a fully failed grid raises.
    """
    evaluated: list[Candidate] = []
    best: tuple | None = None
    for cand in ladder(ks):
        cand, model = _fit_candidate(cand, split, base_dims, fit_config)
        evaluated.append(cand)
        log.debug("explore %s: %s auc=%s", cand.name, cand.status, cand.auc)
        if model is None:
            continue
        # Same ordering as calibration.compare: AUC, then fewer features,
        # then lexicographic feature-set name.
        names = tuple(f"{d}={l}" for d, l in sorted(model.feature_index.levels))
        key = (-cand.auc, model.n_betas, names)
        if best is None or key < best[0]:
            best = (key, cand, model)
    if best is None:
        raise AllCandidatesFailedError(
            f"all {len(evaluated)} candidates failed for {split.training.campaign!r}: "
            + "; ".join(f"{c.name}: {c.detail}" for c in evaluated)
        )
    _, best_cand, best_model = best
    return ExplorationReport(
        campaign=split.training.campaign,
        candidates=tuple(evaluated),
        best=best_cand,
        fitted_model=best_model,
    )
