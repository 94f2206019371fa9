"""Seeded synthetic click logs, impression pools and model ensembles.

Production click logs are proprietary; these generators produce desk-scale
data with planted, recoverable structure so the full pipeline can be
exercised and its behavior checked in shape: per-campaign affinities for
training, an overlapping-acceptance scenario for the policy metrics, and a
coverage scenario where every model starves alone but the ensemble covers
the pool.
"""

from __future__ import annotations

import random
from typing import Iterable

from .dataset import ClickPool
from .model_core import BinaryModel, FeatureIndex, Impression

EXCHANGES = ("appnexus", "mopub", "rubicon")
FORMATS = ("banner", "video", "native")
SIZES = ("300x250", "728x90", "320x50", "160x600")

_DAY = 86400


def _domains(n: int) -> list[str]:
    return [f"site{i:03d}.example.com" for i in range(n)]


def _zips(n: int) -> list[str]:
    return [f"{10000 + 97 * i % 90000:05d}" for i in range(n)]


def _base_impression(rng: random.Random, ts: int, *, domain: str, zip_code: str,
                     hour: int | None = None, campaign: str = "", clicked: bool = True) -> Impression:
    return Impression(
        exchange=rng.choice(EXCHANGES),
        hour=rng.randrange(24) if hour is None else hour,
        day=rng.randrange(7),
        ad_format=rng.choice(FORMATS),
        ad_size=rng.choice(SIZES),
        domain=domain,
        zip=zip_code,
        campaign=campaign,
        clicked=clicked,
        timestamp=ts,
    )


def make_click_pool(
    n: int = 4000,
    n_campaigns: int = 3,
    seed: int = 0,
    n_domains: int = 40,
    n_zips: int = 50,
) -> ClickPool:
    """Clicks with per-campaign domain and hour affinities (learnable signal)."""
    rng = random.Random(seed)
    domains = _domains(n_domains)
    zips = _zips(n_zips)
    campaigns = [f"c{i:02d}" for i in range(n_campaigns)]
    affinity_domains = {
        c: rng.sample(domains, 3) for c in campaigns
    }
    affinity_hours = {c: rng.sample(range(24), 4) for c in campaigns}
    clicks = []
    for i in range(n):
        c = campaigns[i % n_campaigns]
        domain = rng.choice(affinity_domains[c]) if rng.random() < 0.6 else rng.choice(domains)
        hour = rng.choice(affinity_hours[c]) if rng.random() < 0.5 else rng.randrange(24)
        clicks.append(
            _base_impression(
                rng, ts=1_600_000_000 + (i * 28 * _DAY) // n,
                domain=domain, zip_code=rng.choice(zips), hour=hour, campaign=c,
            )
        )
    return ClickPool.from_impressions(clicks)


def domain_signal_pool(
    n: int = 1200,
    seed: int = 0,
    n_planted: int = 5,
    n_domains: int = 30,
    n_zips: int = 30,
) -> tuple[ClickPool, str, list[str]]:
    """Two-campaign pool where the target's clicks concentrate on planted domains.

    Returns (pool, target campaign, planted domains).  Roughly 85% of the
    target's clicks land on a planted domain; the rival's clicks are uniform.
    """
    rng = random.Random(seed)
    domains = _domains(n_domains)
    zips = _zips(n_zips)
    planted = domains[:n_planted]
    rest = domains[n_planted:]
    clicks = []
    for i in range(n):
        target = i % 2 == 0
        if target:
            domain = rng.choice(planted) if rng.random() < 0.85 else rng.choice(rest)
        else:
            domain = rng.choice(rest) if rng.random() < 0.9 else rng.choice(planted)
        clicks.append(
            _base_impression(
                rng, ts=1_600_000_000 + (i * 28 * _DAY) // n,
                domain=domain, zip_code=rng.choice(zips),
                campaign="target" if target else "rival",
            )
        )
    return ClickPool.from_impressions(clicks), "target", planted


def hour_signal_pool(
    n: int = 1200, seed: int = 0, n_domains: int = 25, n_zips: int = 25
) -> tuple[ClickPool, str]:
    """Two-campaign pool where only the hour separates the target's clicks."""
    rng = random.Random(seed)
    domains = _domains(n_domains)
    zips = _zips(n_zips)
    evening = (17, 18, 19, 20)
    clicks = []
    for i in range(n):
        target = i % 2 == 0
        if target:
            hour = rng.choice(evening) if rng.random() < 0.85 else rng.randrange(24)
        else:
            hour = rng.randrange(17) if rng.random() < 0.85 else rng.randrange(24)
        clicks.append(
            _base_impression(
                rng, ts=1_600_000_000 + (i * 28 * _DAY) // n,
                domain=rng.choice(domains), zip_code=rng.choice(zips), hour=hour,
                campaign="target" if target else "rival",
            )
        )
    return ClickPool.from_impressions(clicks), "target"


def _affinity_model(campaign: str, pairs: dict, intercept: float, threshold: float,
                    beta: float = 4.0) -> BinaryModel:
    index = FeatureIndex.from_levels(pairs)
    betas = {i + 1: beta for i in range(len(index.levels))}
    return BinaryModel(
        campaign=campaign,
        intercept=intercept,
        betas=betas,
        threshold=threshold,
        auc=0.9,
        feature_index=index,
    )


def coverage_scenario(
    n_models: int = 100,
    n_domains: int = 104,
    seed: int = 0,
) -> tuple[dict[str, BinaryModel], list[str]]:
    """Models that each accept a narrow domain slice of a shared pool.

    Model j accepts exactly the impressions on domains {j, j+1, j+2}; with
    n_domains slightly above n_models + 2, each model rejects almost
    everything while the union leaves only the uncovered tail domains.
    Returns (models, domain vocabulary) for use with coverage_impressions.
    """
    domains = _domains(n_domains)
    models = {}
    for j in range(n_models):
        cid = f"m{j:03d}"
        mine = [domains[(j + k) % n_domains] for k in range(3)]
        models[cid] = _affinity_model(
            cid, {"domain": mine}, intercept=-6.0, threshold=-4.0
        )
    return models, domains


def coverage_impressions(
    domains: list[str], n: int = 1_000_000, seed: int = 0, n_zips: int = 40
) -> Iterable[Impression]:
    """Uniform-domain impression stream over the coverage scenario's vocabulary."""
    rng = random.Random(seed)
    zips = _zips(n_zips)
    for i in range(n):
        yield _base_impression(
            rng, ts=1_600_000_000 + i,
            domain=domains[rng.randrange(len(domains))],
            zip_code=zips[rng.randrange(len(zips))],
            campaign="", clicked=False,
        )


def overlap_scenario(
    n_campaigns: int = 10,
    n_clicks: int = 4000,
    seed: int = 0,
    generic_share: float = 0.3,
) -> tuple[dict[str, BinaryModel], ClickPool]:
    """Ensemble with one dedicated domain per campaign plus a shared generic domain.

    A click on its campaign's own domain is accepted only by that model; a
    click on the generic domain is accepted by every model at a smaller
    margin.  Exercises the top/set policy split: top routes generic traffic
    to one winner, set spreads credit across all acceptors.
    """
    rng = random.Random(seed)
    campaigns = [f"c{i:02d}" for i in range(n_campaigns)]
    own = {c: f"own-{c}.example.com" for c in campaigns}
    generic = "everybody.example.com"
    zips = _zips(20)
    models = {}
    for c in campaigns:
        index = FeatureIndex.from_levels({"domain": [own[c], generic]})
        betas = {
            index.index_of("domain", own[c]): 3.0,
            index.index_of("domain", generic): 2.0,
        }
        models[c] = BinaryModel(
            campaign=c, intercept=-4.0, betas=betas, threshold=-2.5,
            auc=0.9, feature_index=index,
        )
    clicks = []
    for i in range(n_clicks):
        c = campaigns[i % n_campaigns]
        domain = generic if rng.random() < generic_share else own[c]
        clicks.append(
            _base_impression(
                rng, ts=1_600_000_000 + i, domain=domain,
                zip_code=rng.choice(zips), campaign=c,
            )
        )
    return models, ClickPool.from_impressions(clicks)


def random_ensemble(
    n_models: int = 102,
    n_features: int = 300,
    seed: int = 0,
    n_domains: int = 300,
    n_zips: int = 250,
) -> list[BinaryModel]:
    """Dense random models over a shared vocabulary, for throughput work."""
    rng = random.Random(seed)
    domains = _domains(n_domains)
    zips = _zips(n_zips)
    models = []
    for j in range(n_models):
        per_dim = {
            "exchange": EXCHANGES,
            "ad_format": FORMATS,
            "ad_size": SIZES,
            "hour": range(24),
            "day": range(7),
            "domain": rng.sample(domains, min(n_features // 2, n_domains)),
            "zip": rng.sample(zips, min(n_features // 2, n_zips)),
        }
        index = FeatureIndex.from_levels(per_dim)
        betas = {i + 1: rng.gauss(0.0, 1.0) for i in range(len(index.levels))}
        models.append(
            BinaryModel(
                campaign=f"bench{j:03d}",
                intercept=rng.gauss(-2.0, 0.5),
                betas=betas,
                threshold=rng.gauss(0.0, 0.5),
                auc=0.5,
                feature_index=index,
            )
        )
    return models


def random_impressions(
    n: int = 10000,
    seed: int = 0,
    n_domains: int = 300,
    n_zips: int = 250,
    clicked: bool = False,
) -> list[Impression]:
    rng = random.Random(seed)
    domains = _domains(n_domains)
    zips = _zips(n_zips)
    return [
        _base_impression(
            rng, ts=1_600_000_000 + i,
            domain=domains[rng.randrange(n_domains)],
            zip_code=zips[rng.randrange(n_zips)],
            campaign="", clicked=clicked,
        )
        for i in range(n)
    ]
