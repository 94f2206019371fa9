"""Composition of per-campaign models into a multi-response ensemble.

An impression may be accepted by several models; the top policy hands it to
the acceptor with the largest margin over its own threshold, the set policy
to a seeded-uniform pick among acceptors.  Models are independent: adding or
removing one never changes another's decisions or counts.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from . import engine
from .dataset import ClickPool
from .model_core import BinaryModel, Impression, linear_predictor

POLICIES = ("top", "set")

_MIX = 0x9E3779B97F4A7C15  # 64-bit golden-ratio multiplier for per-ordinal seeding


class EmptyPoolError(Exception):
    pass


@dataclass(frozen=True)
class PolytomousModel:
    models: Mapping[str, BinaryModel]
    policy: str = "top"
    seed: int = 0
    weights: Mapping[str, float] | None = None  # reporting only, never decisions

    def __post_init__(self) -> None:
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}: {self.policy!r}")
        if not self.models:
            raise ValueError("ensemble needs at least one model")
        for cid, model in self.models.items():
            if cid != model.campaign:
                raise ValueError(f"key {cid!r} != model campaign {model.campaign!r}")

    @property
    def campaign_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.models))


@dataclass(frozen=True)
class Assignment:
    impression: Impression
    accepted_by: frozenset[str]
    chosen: str | None


@dataclass(frozen=True)
class Counts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class ConfusionTotals:
    per_campaign: Mapping[str, Counts]
    ensemble: Counts  # sums of the per-model counts


@dataclass(frozen=True)
class MetricsReport:
    confusion: ConfusionTotals
    per_campaign: Mapping[str, Mapping[str, float | None]]
    total: Mapping[str, float | None]
    evaluated: int
    skipped_no_model: int
    policy: str
    credit_any_acceptor: bool
    weights: Mapping[str, float] | None = None

    def to_json(self) -> str:
        doc = {
            "policy": self.policy,
            "credit_any_acceptor": self.credit_any_acceptor,
            "evaluated": self.evaluated,
            "skipped_no_model": self.skipped_no_model,
            "total": self.total,
            "per_campaign": {
                cid: {
                    "counts": dict(vars(self.confusion.per_campaign[cid])),
                    "metrics": dict(metrics),
                    **({"weight": self.weights[cid]} if self.weights and cid in self.weights else {}),
                }
                for cid, metrics in sorted(self.per_campaign.items())
            },
        }
        return json.dumps(doc, ensure_ascii=False, indent=2) + "\n"


@dataclass(frozen=True)
class CoverageReport:
    rejected_by_all: int
    total: int

    @property
    def fraction(self) -> float:
        return self.rejected_by_all / self.total


def metrics_from_counts(c: Counts) -> dict[str, float | None]:
    """The four ratios; denominators of zero yield None, never a fake 0."""

    def ratio(num: int, den: int) -> float | None:
        return num / den if den else None

    return {
        "precision": ratio(c.tp, c.tp + c.fp),
        "negative_rate": ratio(c.tn, c.tn + c.fn),
        "recall": ratio(c.tp, c.tp + c.fn),
        "accuracy": ratio(c.tp + c.tn, c.total),
    }


def _rng_for(seed: int, ordinal: int) -> random.Random:
    return random.Random((seed * _MIX + ordinal) & 0x7FFFFFFFFFFFFFFF)


def assign(ensemble: PolytomousModel, imp: Impression, ordinal: int = 0) -> Assignment:
    """Route one impression: every acceptor recorded, one winner per policy.

    Acceptance is strict (eta > threshold).  The set policy draws uniformly
    from the acceptors with a generator derived from (seed, ordinal), so a
    replay over the same stream reproduces every choice.
    """
    accepted: list[tuple[str, float]] = []
    for cid in ensemble.campaign_ids:
        model = ensemble.models[cid]
        eta = linear_predictor(model, imp)
        if eta > model.threshold:
            accepted.append((cid, eta - model.threshold))
    if not accepted:
        return Assignment(impression=imp, accepted_by=frozenset(), chosen=None)
    if ensemble.policy == "top":
        # max returns the first maximal entry; accepted is in campaign-id
        # order, so margin ties resolve to the smaller campaign id.
        chosen = max(accepted, key=lambda cm: cm[1])[0]
    else:
        ids = [cid for cid, _ in accepted]
        chosen = ids[_rng_for(ensemble.seed, ordinal).randrange(len(ids))]
    return Assignment(
        impression=imp,
        accepted_by=frozenset(cid for cid, _ in accepted),
        chosen=chosen,
    )


def _margin_chunks(
    ensemble: PolytomousModel,
    impressions: Iterable[Impression],
    chunk_size: int = 65536,
) -> Iterator[tuple[list[Impression], np.ndarray]]:
    """Yield (chunk, margins) with margins[i, j] = eta - threshold, columns in
    campaign-id order.  Compiled once, scored in vectorized chunks."""
    compiled = [engine.compile(ensemble.models[cid]) for cid in ensemble.campaign_ids]
    chunk: list[Impression] = []
    for imp in impressions:
        chunk.append(imp)
        if len(chunk) >= chunk_size:
            yield chunk, _margins(compiled, chunk)
            chunk = []
    if chunk:
        yield chunk, _margins(compiled, chunk)


def _margins(compiled: Sequence[engine.CompiledModel], chunk: list[Impression]) -> np.ndarray:
    batch = engine.encode_batch(chunk)
    etas = engine.eta_batch(compiled, batch)
    thresholds = np.array([c.threshold for c in compiled])
    return etas - thresholds[None, :]


def coverage(
    ensemble: PolytomousModel,
    pool: Iterable[Impression],
    chunk_size: int = 65536,
) -> CoverageReport:
    """Single streaming pass counting impressions no model accepts."""
    rejected = total = 0
    for chunk, margins in _margin_chunks(ensemble, pool, chunk_size):
        total += len(chunk)
        rejected += int(np.count_nonzero(~(margins > 0).any(axis=1)))
    if total == 0:
        raise EmptyPoolError("empty impression pool")
    return CoverageReport(rejected_by_all=rejected, total=total)


def evaluate(
    ensemble: PolytomousModel,
    clicks: ClickPool,
    credit_any_acceptor: bool = False,
) -> MetricsReport:
    """Confusion counts and the four metrics over a pool of known clicks.

    Per impression and campaign j: with chosen-model crediting, j's call is
    positive iff the policy chose j.  With credit_any_acceptor (set policy
    alternative) every acceptor is a positive call and the truth scores a tp
    whenever its own model accepts.  Clicks whose campaign has no model in
    the ensemble are skipped and counted.
    """
    ids = ensemble.campaign_ids
    known = set(ids)
    tp = {cid: 0 for cid in ids}
    fp = {cid: 0 for cid in ids}
    fn = {cid: 0 for cid in ids}
    evaluated = 0
    skipped = 0
    ordinal = 0
    for chunk, margins in _margin_chunks(ensemble, clicks.clicks):
        accepted_mask = margins > 0
        for i, imp in enumerate(chunk):
            this_ordinal = ordinal
            ordinal += 1
            if imp.campaign not in known:
                skipped += 1
                continue
            evaluated += 1
            truth = imp.campaign
            acceptors = np.flatnonzero(accepted_mask[i])
            if credit_any_acceptor:
                hit = False
                for j in acceptors:
                    cid = ids[j]
                    if cid == truth:
                        tp[cid] += 1
                        hit = True
                    else:
                        fp[cid] += 1
                if not hit:
                    fn[truth] += 1
                continue
            chosen = _choose(ensemble, margins[i], acceptors, ids, this_ordinal)
            if chosen == truth:
                tp[truth] += 1
            else:
                fn[truth] += 1
                if chosen is not None:
                    fp[chosen] += 1
    if evaluated == 0:
        raise EmptyPoolError("no clicks matched any model in the ensemble")

    per_campaign_counts = {
        cid: Counts(
            tp=tp[cid],
            fp=fp[cid],
            fn=fn[cid],
            tn=evaluated - tp[cid] - fp[cid] - fn[cid],
        )
        for cid in ids
    }
    ensemble_counts = Counts(
        tp=sum(c.tp for c in per_campaign_counts.values()),
        fp=sum(c.fp for c in per_campaign_counts.values()),
        tn=sum(c.tn for c in per_campaign_counts.values()),
        fn=sum(c.fn for c in per_campaign_counts.values()),
    )
    confusion = ConfusionTotals(per_campaign=per_campaign_counts, ensemble=ensemble_counts)
    return MetricsReport(
        confusion=confusion,
        per_campaign={cid: metrics_from_counts(c) for cid, c in per_campaign_counts.items()},
        total=metrics_from_counts(ensemble_counts),
        evaluated=evaluated,
        skipped_no_model=skipped,
        policy=ensemble.policy,
        credit_any_acceptor=credit_any_acceptor,
        weights=dict(ensemble.weights) if ensemble.weights else None,
    )


def _choose(
    ensemble: PolytomousModel,
    margins_row: np.ndarray,
    acceptors: np.ndarray,
    ids: tuple[str, ...],
    ordinal: int,
) -> str | None:
    if acceptors.size == 0:
        return None
    if ensemble.policy == "top":
        # np.argmax over the acceptor slice returns the first maximum, and
        # columns are in sorted campaign order: ties resolve by campaign id.
        best = acceptors[int(np.argmax(margins_row[acceptors]))]
        return ids[best]
    pick = _rng_for(ensemble.seed, ordinal).randrange(acceptors.size)
    return ids[int(acceptors[pick])]


def metrics_timeseries(
    ensemble: PolytomousModel,
    clicks: ClickPool,
    batch_size: int = 1000,
    credit_any_acceptor: bool = False,
) -> list[dict]:
    """Per-batch ensemble metrics for time-series style reporting."""
    rows = []
    imps = clicks.clicks
    for start in range(0, len(imps), batch_size):
        batch = imps[start : start + batch_size]
        try:
            report = evaluate(
                ensemble,
                ClickPool.from_impressions(batch),
                credit_any_acceptor=credit_any_acceptor,
            )
        except EmptyPoolError:
            continue
        rows.append(
            {
                "batch": len(rows),
                "start_ordinal": start,
                "size": report.evaluated,
                **report.total,
            }
        )
    return rows
