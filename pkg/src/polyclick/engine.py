"""Read-only compiled models and the peak-throughput scoring harness.

Compilation turns a model's sparse beta map into per-dimension lookup
tables: dense arrays for hour and day, sorted level tables (binary search)
or hash maps for the string dimensions.  Scoring sums matched betas in the
fixed dimension order, so compiled results are exactly the reference path's.
"""

from __future__ import annotations

import json
import time
from bisect import bisect_left
from dataclasses import dataclass
from threading import Thread
from typing import Mapping, Sequence

import numpy as np

from .model_core import DIMENSIONS, INT_DIMENSIONS, BinaryModel, Impression

STRING_DIMENSIONS = tuple(d for d in DIMENSIONS if d not in INT_DIMENSIONS)

BACKENDS = ("bsearch", "hash")


class ClockResolutionError(Exception):
    """Timed region too short to trust; raise repetitions."""


@dataclass(frozen=True)
class CompiledModel:
    campaign: str
    intercept: float
    threshold: float
    # dimension -> (sorted levels, betas aligned to levels)
    tables: Mapping[str, tuple[tuple, tuple[float, ...]]]
    # dense arrays for the integer dimensions
    hour_betas: tuple[float, ...]
    day_betas: tuple[float, ...]
    backend: str = "bsearch"
    hash_tables: Mapping[str, Mapping] | None = None

    def beta_for(self, dimension: str, level) -> float | None:
        if dimension == "hour":
            v = self.hour_betas[level]
            return v if v != 0.0 else self._sparse_lookup(dimension, level)
        if dimension == "day":
            v = self.day_betas[level]
            return v if v != 0.0 else self._sparse_lookup(dimension, level)
        return self._sparse_lookup(dimension, level)

    def _sparse_lookup(self, dimension: str, level) -> float | None:
        if self.backend == "hash":
            assert self.hash_tables is not None
            return self.hash_tables[dimension].get(level)
        levels, betas = self.tables[dimension]
        i = bisect_left(levels, level)
        if i < len(levels) and levels[i] == level:
            return betas[i]
        return None

    def linear_predictor(self, imp: Impression) -> float:
        """Scalar scoring path; same summation order as the reference."""
        eta = self.intercept
        for dim in DIMENSIONS:
            if dim == "hour":
                eta += self.hour_betas[imp.hour]
            elif dim == "day":
                eta += self.day_betas[imp.day]
            else:
                b = self._sparse_lookup(dim, getattr(imp, dim))
                if b is not None:
                    eta += b
        return eta

    def accepts(self, imp: Impression) -> bool:
        return self.linear_predictor(imp) > self.threshold


def compile(model: BinaryModel, backend: str = "bsearch") -> CompiledModel:
    """Reshape a BinaryModel for fast matching; lookups agree with the source map."""
    if backend not in BACKENDS:
        raise ValueError(f"backend must be one of {BACKENDS}: {backend!r}")
    per_dim: dict[str, list[tuple]] = {dim: [] for dim in DIMENSIONS}
    for idx, value in model.betas.items():
        dim, lvl = model.feature_index.pair_at(idx)
        per_dim[dim].append((lvl, float(value)))

    hour = [0.0] * 24
    for lvl, value in per_dim["hour"]:
        hour[int(lvl)] = value
    day = [0.0] * 7
    for lvl, value in per_dim["day"]:
        day[int(lvl)] = value

    tables = {}
    hash_tables: dict[str, dict] | None = {} if backend == "hash" else None
    for dim in DIMENSIONS:
        entries = sorted(per_dim[dim])
        tables[dim] = (
            tuple(lvl for lvl, _ in entries),
            tuple(val for _, val in entries),
        )
        if hash_tables is not None:
            hash_tables[dim] = {lvl: val for lvl, val in entries}
    return CompiledModel(
        campaign=model.campaign,
        intercept=model.intercept,
        threshold=model.threshold,
        tables=tables,
        hour_betas=tuple(hour),
        day_betas=tuple(day),
        backend=backend,
        hash_tables=hash_tables,
    )


@dataclass(frozen=True)
class EncodedBatch:
    """Impressions interned to integer codes, one array per dimension."""

    size: int
    codes: Mapping[str, np.ndarray]
    vocabs: Mapping[str, tuple]  # string dimensions only


def encode_batch(impressions: Sequence[Impression]) -> EncodedBatch:
    """Intern string levels to dense ids.  Done once, before any timing."""
    n = len(impressions)
    if n == 0:
        raise ValueError("cannot encode an empty batch")
    codes: dict[str, np.ndarray] = {
        "hour": np.fromiter((i.hour for i in impressions), dtype=np.int32, count=n),
        "day": np.fromiter((i.day for i in impressions), dtype=np.int32, count=n),
    }
    vocabs: dict[str, tuple] = {}
    for dim in STRING_DIMENSIONS:
        values = [getattr(imp, dim) for imp in impressions]
        vocab = sorted(set(values))
        mapping = {lvl: i for i, lvl in enumerate(vocab)}
        codes[dim] = np.fromiter((mapping[v] for v in values), dtype=np.int32, count=n)
        vocabs[dim] = tuple(vocab)
    return EncodedBatch(size=n, codes=codes, vocabs=vocabs)


def bind_tables(model: CompiledModel, batch: EncodedBatch) -> list[np.ndarray]:
    """Per-dimension gather tables aligned to the batch's intern ids."""
    out: list[np.ndarray] = []
    for dim in DIMENSIONS:
        if dim == "hour":
            out.append(np.asarray(model.hour_betas))
        elif dim == "day":
            out.append(np.asarray(model.day_betas))
        else:
            table = np.zeros(len(batch.vocabs[dim]))
            for i, lvl in enumerate(batch.vocabs[dim]):
                b = model._sparse_lookup(dim, lvl)
                if b is not None:
                    table[i] = b
            out.append(table)
    return out


def eta_batch(
    models: Sequence[CompiledModel],
    batch: EncodedBatch,
    lo: int = 0,
    hi: int | None = None,
) -> np.ndarray:
    """Linear predictors for every (impression, model) pair, shape (n, M).

    Accumulates dimension by dimension in the fixed order, preserving the
    scalar path's summation order exactly.
    """
    hi = batch.size if hi is None else hi
    n = hi - lo
    etas = np.empty((n, len(models)))
    code_slices = [batch.codes[dim][lo:hi] for dim in DIMENSIONS]
    for j, model in enumerate(models):
        tables = bind_tables(model, batch)
        eta = np.full(n, model.intercept)
        for table, codes in zip(tables, code_slices):
            eta += table[codes]
        etas[:, j] = eta
    return etas


def score_batch(
    models: Sequence[CompiledModel],
    batch: EncodedBatch | Sequence[Impression],
) -> np.ndarray:
    """Boolean accept decisions, shape (n, M); strict threshold comparison."""
    if not isinstance(batch, EncodedBatch):
        batch = encode_batch(batch)
    etas = eta_batch(models, batch)
    thresholds = np.array([m.threshold for m in models])
    return etas > thresholds[None, :]


@dataclass(frozen=True)
class BenchReport:
    impressions_scored: int
    wall_time: float
    qps: float
    threads: int
    per_thread_qps: tuple[float, ...]
    models: int
    batch_size: int
    repetitions: int
    pair_rate: float  # (impression, model) evaluations per second

    def to_json(self) -> str:
        return json.dumps(vars(self), ensure_ascii=False, indent=2) + "\n"


def _score_slice(
    models: Sequence[CompiledModel],
    bound: list[list[np.ndarray]],
    thresholds: np.ndarray,
    code_slices: list[np.ndarray],
    reps: int,
) -> tuple[int, float]:
    """Hot loop: gather + accumulate per dimension, decide, repeat."""
    n = len(code_slices[0])
    eta = np.empty(n)
    tmp = np.empty(n)
    dec = np.empty(n, dtype=bool)
    accepted = 0
    t0 = time.perf_counter()
    for _ in range(reps):
        for j in range(len(models)):
            eta.fill(models[j].intercept)
            for table, codes in zip(bound[j], code_slices):
                np.take(table, codes, out=tmp)
                np.add(eta, tmp, out=eta)
            np.greater(eta, thresholds[j], out=dec)
            accepted += int(dec.sum())
    return accepted, time.perf_counter() - t0


def bench(
    models: Sequence[CompiledModel],
    batch: EncodedBatch | Sequence[Impression],
    threads: int = 1,
    repetitions: int | None = None,
    min_seconds: float = 0.5,
) -> BenchReport:
    """Peak-throughput measurement: batch resident and interned before the clock.

    The batch is partitioned statically across worker threads; each worker
    repeatedly scores its slice against every model.  QPS counts one unit
    per impression-ensemble evaluation (an impression against all models).
    """
    if threads < 1:
        raise ValueError("threads must be >= 1")
    if not isinstance(batch, EncodedBatch):
        if len(batch) == 0:
            raise ValueError("cannot bench an empty batch")
        batch = encode_batch(batch)
    if batch.size == 0:
        raise ValueError("cannot bench an empty batch")
    if not models:
        raise ValueError("cannot bench an empty ensemble")

    bound = [bind_tables(m, batch) for m in models]
    thresholds = np.array([m.threshold for m in models])
    bounds = np.linspace(0, batch.size, threads + 1).astype(int)
    slices = [
        [batch.codes[dim][lo:hi] for dim in DIMENSIONS]
        for lo, hi in zip(bounds, bounds[1:])
        if hi > lo
    ]

    # Warm-up pass, then calibrate repetitions when only a duration is given.
    _score_slice(models, bound, thresholds, slices[0], 1)
    auto = repetitions is None
    if auto:
        _, trial = _score_slice(models, bound, thresholds, slices[0], 1)
        per_rep = max(trial, 1e-6)
        repetitions = max(int(min_seconds / per_rep) + 1, 3)

    results: list[tuple[int, float]] = [None] * len(slices)  # type: ignore[list-item]

    def run_all(reps: int) -> float:
        def run(i: int) -> None:
            results[i] = _score_slice(models, bound, thresholds, slices[i], reps)

        t0 = time.perf_counter()
        if len(slices) == 1:
            run(0)
        else:
            workers = [Thread(target=run, args=(i,)) for i in range(len(slices))]
            for w in workers:
                w.start()
            for w in workers:
                w.join()
        return time.perf_counter() - t0

    wall = run_all(repetitions)
    if auto:
        # the trial estimate can run cold; extend until the clock is trustworthy
        while wall < max(0.1, 0.8 * min_seconds) and repetitions < 1 << 24:
            repetitions *= 2
            wall = run_all(repetitions)
    if wall < 0.1:
        raise ClockResolutionError(
            f"timed region lasted {wall * 1e3:.1f} ms; increase repetitions"
        )
    scored = batch.size * repetitions
    slice_sizes = [len(s[0]) for s in slices]
    per_thread = tuple(
        size * repetitions / elapsed for (_, elapsed), size in zip(results, slice_sizes)
    )
    return BenchReport(
        impressions_scored=scored,
        wall_time=wall,
        qps=scored / wall,
        threads=threads,
        per_thread_qps=per_thread,
        models=len(models),
        batch_size=batch.size,
        repetitions=repetitions,
        pair_rate=scored * len(models) / wall,
    )
