"""Core domain types and the statistical primitives shared by every stage.

An impression is described by seven categorical dimensions.  A campaign
model is an intercept plus a sparse map of per-level coefficients and a
decision threshold on the linear-predictor scale: scoring is a sum of
betas, features the model has never seen contribute zero.
"""

from __future__ import annotations

import dataclasses
import json
import math
import re
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

# Fixed evaluation order.  Scoring sums matched betas in this order so the
# reference path and the compiled engine produce bit-identical sums.
DIMENSIONS = ("exchange", "hour", "day", "ad_format", "ad_size", "domain", "zip")

# Dimensions whose levels are small integers (direct-indexable at scoring time).
INT_DIMENSIONS = {"hour": 24, "day": 7}

UNKNOWN = "unknown"

_ZIP5 = re.compile(r"\d{5}")
_ZIP9 = re.compile(r"(\d{5})-\d{4}")


def normalize_domain(raw: str) -> str:
    """Reduce a raw domain/URL to a bare hostname, keeping subdomains.

    ``finance.yahoo.com`` stays distinct from ``yahoo.com``;
    ``google.com/finance`` collapses to ``google.com``.
    """
    s = raw.strip().lower()
    if "://" in s:
        s = s.split("://", 1)[1]
    s = s.split("/", 1)[0].split("?", 1)[0]
    if ":" in s:  # strip port
        s = s.split(":", 1)[0]
    s = s.strip(".")
    return s if s else UNKNOWN


def normalize_zip(raw: str) -> str:
    """Return a 5-digit ZIP, folding ZIP+4 and mapping anything else to "unknown"."""
    s = raw.strip()
    if _ZIP5.fullmatch(s):
        return s
    m = _ZIP9.fullmatch(s)
    if m:
        return m.group(1)
    return UNKNOWN


@dataclass(frozen=True)
class Impression:
    """One ad opportunity: seven categorical features plus outcome metadata."""

    exchange: str
    hour: int
    day: int
    ad_format: str
    ad_size: str
    domain: str
    zip: str
    campaign: str
    clicked: bool
    timestamp: int

    def __post_init__(self) -> None:
        if not 0 <= self.hour <= 23:
            raise ValueError(f"hour out of range: {self.hour}")
        if not 0 <= self.day <= 6:
            raise ValueError(f"day out of range: {self.day}")
        if self.zip != UNKNOWN and not _ZIP5.fullmatch(self.zip):
            raise ValueError(f"zip must be 5 digits or {UNKNOWN!r}: {self.zip!r}")

    def level(self, dimension: str) -> str | int:
        return getattr(self, dimension)


@dataclass(frozen=True)
class FeatureIndex:
    """Bijection between (dimension, level) pairs and dense coefficient indices.

    Index 0 is reserved for the intercept; indexed pairs start at 1.
    """

    levels: tuple[tuple[str, str | int], ...]
    lookup: Mapping[tuple[str, str | int], int] = field(repr=False)

    MAX_FEATURES = 999  # non-intercept coefficients

    def __post_init__(self) -> None:
        if len(self.levels) > self.MAX_FEATURES:
            raise ValueError(
                f"{len(self.levels)} features exceed the {self.MAX_FEATURES} cap"
            )
        if len(self.lookup) != len(self.levels):
            raise ValueError("duplicate (dimension, level) pairs")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str | int]]) -> "FeatureIndex":
        levels = tuple(pairs)
        lookup = {pair: i + 1 for i, pair in enumerate(levels)}
        return cls(levels=levels, lookup=lookup)

    @classmethod
    def from_levels(cls, per_dimension: Mapping[str, Iterable[str | int]]) -> "FeatureIndex":
        """Build an index with deterministic ordering: sorted by (dimension, level)."""
        pairs = sorted(
            (dim, lvl) for dim, lvls in per_dimension.items() for lvl in set(lvls)
        )
        return cls.from_pairs(pairs)

    @property
    def n_features(self) -> int:
        """Total coefficient count including the intercept."""
        return len(self.levels) + 1

    def index_of(self, dimension: str, level: str | int) -> int | None:
        return self.lookup.get((dimension, level))

    def pair_at(self, index: int) -> tuple[str, str | int]:
        if index < 1 or index > len(self.levels):
            raise IndexError(f"no feature at index {index}")
        return self.levels[index - 1]


@dataclass(frozen=True)
class BinaryModel:
    """Fitted responder for one campaign.

    ``betas`` maps dense indices of ``feature_index`` to coefficients; the
    decision rule is strict: accept an impression when eta > threshold.
    ``sampling_ratio`` records tau_pos/tau_neg once the intercept has been
    rescaled from the retrospective training sample to the full population.
    """

    campaign: str
    intercept: float
    betas: Mapping[int, float]
    threshold: float
    auc: float
    feature_index: FeatureIndex
    sampling_ratio: float = 1.0

    def __post_init__(self) -> None:
        if not math.isfinite(self.threshold):
            raise ValueError(f"threshold must be finite: {self.threshold}")
        if not 0.0 <= self.auc <= 1.0:
            raise ValueError(f"auc out of [0,1]: {self.auc}")
        if self.sampling_ratio <= 0:
            raise ValueError(f"sampling_ratio must be positive: {self.sampling_ratio}")
        n = len(self.feature_index.levels)
        for idx in self.betas:
            if idx < 1 or idx > n:
                raise ValueError(f"beta index {idx} not in feature index")

    @property
    def n_betas(self) -> int:
        return len(self.betas)


@dataclass(frozen=True)
class LabeledVector:
    """One design row: successes out of trials plus the active one-hot indices.

    ``active_indices`` lists non-intercept indices, strictly increasing;
    index 0 (intercept) is implicitly active in every row.
    """

    response: int
    active_indices: tuple[int, ...]
    trials: int = 1

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1: {self.trials}")
        if not 0 <= self.response <= self.trials:
            raise ValueError(f"response {self.response} outside [0, {self.trials}]")
        prev = 0
        for idx in self.active_indices:
            if idx <= prev:
                raise ValueError("active_indices must be strictly increasing and >= 1")
            prev = idx


def encode_impression(imp: Impression, index: FeatureIndex) -> tuple[int, ...]:
    """Active dense indices for an impression; unknown levels simply drop out."""
    active = []
    for dim in DIMENSIONS:
        idx = index.index_of(dim, imp.level(dim))
        if idx is not None:
            active.append(idx)
    active.sort()
    return tuple(active)


def logit(p: float) -> float:
    """Log-odds ln(p / (1 - p)); domain error outside the open interval (0, 1)."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"logit requires 0 < p < 1, got {p}")
    return math.log(p / (1.0 - p))


def inverse_logit(eta: float) -> float:
    # Two-branch form: never evaluates exp on a positive argument.
    if eta >= 0.0:
        z = math.exp(-eta)
        return 1.0 / (1.0 + z)
    z = math.exp(eta)
    return z / (1.0 + z)


def linear_predictor(model: BinaryModel, imp: Impression) -> float:
    """Intercept plus the sum of betas matching the impression, in dimension order."""
    eta = model.intercept
    lookup = model.feature_index.lookup
    betas = model.betas
    for dim in DIMENSIONS:
        idx = lookup.get((dim, getattr(imp, dim)))
        if idx is not None:
            b = betas.get(idx)
            if b is not None:
                eta += b
    return eta


def predict_probability(model: BinaryModel, imp: Impression) -> float:
    return inverse_logit(linear_predictor(model, imp))


def accepts(model: BinaryModel, imp: Impression) -> bool:
    """Strict decision rule: eta > threshold."""
    return linear_predictor(model, imp) > model.threshold


def log_likelihood(beta: Sequence[float] | np.ndarray, data: Iterable[LabeledVector]) -> float:
    """Binomial log-likelihood up to the constant binomial-coefficient term.

    Per row: y * eta - m * softplus(eta), with softplus evaluated in the
    stable log1p form so large |eta| never overflows.  Terms are combined
    with exact-rounded summation, so the result is additive over rows.
    """
    b = np.asarray(beta, dtype=float)
    terms = []
    for row in data:
        eta = b[0]
        for idx in row.active_indices:
            eta += b[idx]
        terms.append(row.response * eta - row.trials * float(np.logaddexp(0.0, eta)))
    total = math.fsum(terms)
    if not math.isfinite(total):
        raise ValueError("log-likelihood is not finite (coefficient overflow?)")
    return total


def adjust_intercept_ex_ante(
    model: BinaryModel, tau_pos: float, tau_neg: float
) -> BinaryModel:
    """Rescale a retrospectively trained model to the prospective population.

    With positives kept at rate tau_pos and negatives at rate tau_neg, the
    sampled fit differs from the population fit only in the intercept, by
    ln(tau_pos / tau_neg).  Every slope is left untouched.
    """
    if tau_pos <= 0 or tau_neg <= 0:
        raise ValueError(f"sampling rates must be positive: {tau_pos}, {tau_neg}")
    ratio = tau_pos / tau_neg
    return dataclasses.replace(
        model,
        intercept=model.intercept - math.log(ratio),
        sampling_ratio=ratio,
    )


# --- JSON serialization ----------------------------------------------------
#
# One document per model: {campaign, intercept, threshold, auc,
# sampling_ratio, betas: [{dimension, level, value}]}, betas sorted by
# (dimension, level) so output bytes are stable.


def model_to_json(model: BinaryModel) -> str:
    entries = []
    for idx, value in model.betas.items():
        dim, lvl = model.feature_index.pair_at(idx)
        entries.append({"dimension": dim, "level": lvl, "value": value})
    entries.sort(key=lambda e: (e["dimension"], e["level"]))
    doc = {
        "campaign": model.campaign,
        "intercept": model.intercept,
        "threshold": model.threshold,
        "auc": model.auc,
        "sampling_ratio": model.sampling_ratio,
        "betas": entries,
    }
    return json.dumps(doc, ensure_ascii=False, indent=2) + "\n"


def model_from_json(text: str | bytes) -> BinaryModel:
    doc = json.loads(text)
    entries = sorted(doc["betas"], key=lambda e: (e["dimension"], e["level"]))
    pairs = []
    for e in entries:
        lvl = e["level"]
        if e["dimension"] in INT_DIMENSIONS:
            lvl = int(lvl)
        pairs.append((e["dimension"], lvl))
    index = FeatureIndex.from_pairs(pairs)
    betas = {i + 1: float(e["value"]) for i, e in enumerate(entries)}
    return BinaryModel(
        campaign=doc["campaign"],
        intercept=float(doc["intercept"]),
        betas=betas,
        threshold=float(doc["threshold"]),
        auc=float(doc["auc"]),
        sampling_ratio=float(doc.get("sampling_ratio", 1.0)),
        feature_index=index,
    )


def write_model(model: BinaryModel, fp: IO[str]) -> None:
    fp.write(model_to_json(model))
