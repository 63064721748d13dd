"""Seeded generator of interaction logs with a controllable feedback loop.

The generator exists to produce logs whose directional effects are known
by construction, so the measurement pipeline can be validated end to end.
It is not a faithful recommender simulator.

Population model. Item embeddings are drawn from a mixture of Gaussians,
so the item space is genuinely clusterable. Each user starts near one
mixture component and owns a true preference vector. All users undergo
exogenous interest drift: occasionally a user picks a new target
component and migrates toward it day by day (the stand-in for sales
campaigns and changing tastes).

Exposure model. Designed followers receive recommendation pages mixing a
personal pool (items nearest the recommender's profile of the user) with
uniform exploration; designed ignorers browse uniform pages with the
same static personal tilt. With narrowing rate gamma > 0 a follower's
personal pool shrinks geometrically over time, so recommended content
narrows. Every user also performs organic clicks drawn from random
candidate sets via a softmax over preference-item affinity.

Feedback model. With reinforcement rate beta > 0 every click pulls a
follower's preference vector toward the clicked item, anchoring the
follower against exogenous drift; ignorers never reinforce. With
beta = gamma = 0 the two groups differ only in click volume, which is
rebalanced through organic clicks, so all between-group contrasts are
null by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Iterable

import numpy as np

from .embed import EmbeddingTable
from .errors import ConfigError
from .logmodel import BROWSE, CLICK, PURCHASE, InteractionRecord
from .seeds import derive_seed

FOLLOWER = "follower"
IGNORER = "ignorer"


@dataclass(frozen=True)
class SynthConfig:
    """Generator knobs; defaults give a desk-scale clusterable population."""

    n_users: int = 200
    n_items: int = 1000
    dim: int = 8
    n_days: int = 60
    reinforcement_rate: float = 0.0
    narrowing_rate: float = 0.0
    follower_fraction: float = 0.5
    click_temperature: float = 0.3
    purchase_probability: float = 0.1
    master_seed: int = 0

    # population geometry
    n_components: int = 6
    component_scale: float = 2.0
    item_sigma: float = 0.6
    user_sigma: float = 0.25

    # exposure and interaction intensity
    pvs_per_day: int = 4
    pv_size: int = 8
    organic_clicks_per_day: float = 4.0
    organic_candidates: int = 40
    follower_pv_click_rate: float = 0.9
    ignorer_pv_click_rate: float = 0.1
    balance_click_volume: bool = True

    # personalization
    base_pool_fraction: float = 0.25
    personal_slot_lo: float = 0.2
    personal_slot_hi: float = 0.7
    narrowing_period_days: float = 10.0
    rs_learning_rate: float = 0.05

    # exogenous interest drift
    migration_prob: float = 0.025
    drift_step: float = 0.2

    start_time: int = 1_600_000_000

    def validate(self) -> None:
        if self.n_users < 2 or self.n_items < 2:
            raise ConfigError("need at least 2 users and 2 items")
        if self.reinforcement_rate < 0:
            raise ConfigError("reinforcement_rate must be >= 0")
        if not 0.0 <= self.narrowing_rate <= 1.0:
            raise ConfigError("narrowing_rate must be in [0, 1]")
        if not 0.0 < self.follower_fraction < 1.0:
            raise ConfigError("follower_fraction must be in (0, 1)")
        if not 0.0 <= self.purchase_probability <= 1.0:
            raise ConfigError("purchase_probability must be in [0, 1]")
        if self.click_temperature <= 0:
            raise ConfigError("click_temperature must be positive")
        if self.n_days < 1 or self.pvs_per_day < 1 or self.pv_size < 2:
            raise ConfigError("need n_days >= 1, pvs_per_day >= 1, pv_size >= 2")
        if not 0.0 <= self.personal_slot_lo <= self.personal_slot_hi <= 1.0:
            raise ConfigError("personal slot range must satisfy 0 <= lo <= hi <= 1")
        for name in ("follower_pv_click_rate", "ignorer_pv_click_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1]")
        if not 0.0 < self.base_pool_fraction <= 1.0:
            raise ConfigError("base_pool_fraction must be in (0, 1]")
        if self.narrowing_period_days <= 0:
            raise ConfigError("narrowing_period_days must be positive")


@dataclass(frozen=True)
class GroundTruth:
    """Designed cohort intent and the true preference trajectories.

    One exposure step is one simulated day; each trajectory has exactly
    n_days vectors, the preference at the end of each day.
    """

    intents: dict[str, str]
    trajectories: dict[str, np.ndarray]

    def to_json_dict(self) -> dict:
        return {
            "users": {
                uid: {
                    "intent": self.intents[uid],
                    "trajectory": [[round(float(v), 6) for v in row] for row in traj],
                }
                for uid, traj in sorted(self.trajectories.items())
            }
        }


@dataclass(frozen=True)
class SynthResult:
    browse: list[InteractionRecord]
    click: list[InteractionRecord]
    purchase: list[InteractionRecord]
    table: EmbeddingTable
    ground_truth: GroundTruth
    config: SynthConfig


def _softmax_pick(rng: np.random.Generator, scores: np.ndarray) -> int:
    z = scores - scores.max()
    w = np.exp(z)
    w /= w.sum()
    return int(rng.choice(len(scores), p=w))


def _pool_size(cfg: SynthConfig, is_follower: bool, day: int, base: int, floor: int) -> int:
    if not is_follower or cfg.narrowing_rate <= 0.0:
        return base
    frac = (1.0 - cfg.narrowing_rate) ** (day / cfg.narrowing_period_days)
    return max(floor, int(round(base * frac)))


def generate(config: SynthConfig) -> SynthResult:
    """Simulate the population and emit logs, embeddings, and ground truth.

    Deterministic for a fixed master seed: per-user randomness comes from
    seeds derived per user, and the output rows are canonically ordered
    by (timestamp, user_id, pv_id).
    """
    cfg = config
    cfg.validate()
    rng_pop = np.random.default_rng(derive_seed(cfg.master_seed, "population"))

    centers = cfg.component_scale * rng_pop.normal(size=(cfg.n_components, cfg.dim))
    assignments = rng_pop.integers(cfg.n_components, size=cfg.n_items)
    items = centers[assignments] + cfg.item_sigma * rng_pop.normal(size=(cfg.n_items, cfg.dim))
    item_ids = tuple(f"i{j:06d}" for j in range(cfg.n_items))
    items_ro = items.copy()
    items_ro.setflags(write=False)
    table = EmbeddingTable(dim=cfg.dim, ids=item_ids, matrix=items_ro)

    user_ids = [f"u{j:05d}" for j in range(cfg.n_users)]
    n_followers = int(round(cfg.n_users * cfg.follower_fraction))
    intent_flags = np.zeros(cfg.n_users, dtype=bool)
    intent_flags[rng_pop.choice(cfg.n_users, size=n_followers, replace=False)] = True
    homes = rng_pop.integers(cfg.n_components, size=cfg.n_users)
    prefs0 = centers[homes] + cfg.user_sigma * rng_pop.normal(size=(cfg.n_users, cfg.dim))
    slot_fracs = rng_pop.uniform(cfg.personal_slot_lo, cfg.personal_slot_hi, size=cfg.n_users)

    base_pool = max(cfg.pv_size * 2, int(round(cfg.base_pool_fraction * cfg.n_items)))
    base_pool = min(base_pool, cfg.n_items)
    pool_floor = min(cfg.pv_size * 2, cfg.n_items)
    rec_gap = cfg.pvs_per_day * (cfg.follower_pv_click_rate - cfg.ignorer_pv_click_rate)
    organic_rates = {
        FOLLOWER: cfg.organic_clicks_per_day,
        IGNORER: cfg.organic_clicks_per_day + (rec_gap if cfg.balance_click_volume else 0.0),
    }

    browse: list[InteractionRecord] = []
    clicks: list[InteractionRecord] = []
    purchases: list[InteractionRecord] = []
    intents: dict[str, str] = {}
    trajectories: dict[str, np.ndarray] = {}

    for u in range(cfg.n_users):
        uid = user_ids[u]
        is_follower = bool(intent_flags[u])
        intents[uid] = FOLLOWER if is_follower else IGNORER
        rng = np.random.default_rng(derive_seed(cfg.master_seed, "user", uid))
        pref = prefs0[u].copy()
        rs_profile = pref.copy()
        target = int(homes[u])
        beta = cfg.reinforcement_rate if is_follower else 0.0
        pv_click_rate = (
            cfg.follower_pv_click_rate if is_follower else cfg.ignorer_pv_click_rate
        )
        organic_rate = organic_rates[FOLLOWER if is_follower else IGNORER]
        trajectory = np.empty((cfg.n_days, cfg.dim))

        for day in range(cfg.n_days):
            day_start = cfg.start_time + day * 86400
            seq = 0
            if rng.random() < cfg.migration_prob:
                target = int(rng.integers(cfg.n_components))
            pref += cfg.drift_step * (centers[target] - pref)

            pool_n = _pool_size(cfg, is_follower, day, base_pool, pool_floor)
            d2 = ((items - rs_profile) ** 2).sum(axis=1)
            pool = np.argpartition(d2, pool_n - 1)[:pool_n]

            for p in range(cfg.pvs_per_day):
                pv_id = f"pv-{uid}-{day:03d}-{p}"
                ts = day_start + seq * 10 + 1
                seq += 1
                n_personal = int(rng.binomial(cfg.pv_size, slot_fracs[u]))
                picks = np.empty(cfg.pv_size, dtype=np.int64)
                if n_personal:
                    picks[:n_personal] = pool[rng.integers(pool_n, size=n_personal)]
                if n_personal < cfg.pv_size:
                    picks[n_personal:] = rng.integers(
                        cfg.n_items, size=cfg.pv_size - n_personal
                    )
                clicked_pos = -1
                if rng.random() < pv_click_rate:
                    scores = (items[picks] @ pref) / cfg.click_temperature
                    clicked_pos = _softmax_pick(rng, scores)
                for pos in range(cfg.pv_size):
                    browse.append(
                        InteractionRecord(
                            BROWSE, ts, pv_id, uid, item_ids[picks[pos]],
                            position=pos, clicked=pos == clicked_pos,
                        )
                    )
                if clicked_pos >= 0:
                    j = int(picks[clicked_pos])
                    click_ts = day_start + seq * 10 + 1
                    seq += 1
                    price = round(float(rng.uniform(1.0, 200.0)), 2)
                    clicks.append(
                        InteractionRecord(CLICK, click_ts, pv_id, uid, item_ids[j], price=price)
                    )
                    if rng.random() < cfg.purchase_probability:
                        buy_ts = day_start + seq * 10 + 1
                        seq += 1
                        purchases.append(
                            InteractionRecord(
                                PURCHASE, buy_ts, pv_id, uid, item_ids[j], price=price
                            )
                        )
                    pref += beta * (items[j] - pref)
                    rs_profile += cfg.rs_learning_rate * (items[j] - rs_profile)

            n_organic = int(rng.poisson(organic_rate))
            for o in range(n_organic):
                cands = rng.integers(cfg.n_items, size=cfg.organic_candidates)
                scores = (items[cands] @ pref) / cfg.click_temperature
                j = int(cands[_softmax_pick(rng, scores)])
                ts = day_start + seq * 10 + 1
                seq += 1
                pv_id = f"s-{uid}-{day:03d}-{o}"
                price = round(float(rng.uniform(1.0, 200.0)), 2)
                clicks.append(
                    InteractionRecord(CLICK, ts, pv_id, uid, item_ids[j], price=price)
                )
                if rng.random() < cfg.purchase_probability:
                    buy_ts = day_start + seq * 10 + 1
                    seq += 1
                    purchases.append(
                        InteractionRecord(PURCHASE, buy_ts, pv_id, uid, item_ids[j], price=price)
                    )
                pref += beta * (items[j] - pref)
                rs_profile += cfg.rs_learning_rate * (items[j] - rs_profile)

            trajectory[day] = pref
        trajectories[uid] = trajectory

    order_key = lambda r: (r.timestamp, r.user_id, r.pv_id, r.position or 0)
    browse.sort(key=order_key)
    clicks.sort(key=order_key)
    purchases.sort(key=order_key)

    return SynthResult(
        browse=browse,
        click=clicks,
        purchase=purchases,
        table=table,
        ground_truth=GroundTruth(intents=intents, trajectories=trajectories),
        config=cfg,
    )


def config_from_dict(data: dict) -> SynthConfig:
    """Build a SynthConfig from a JSON-style dict, rejecting unknown keys."""
    known = {f.name for f in SynthConfig.__dataclass_fields__.values()}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
    return SynthConfig(**data)


def ground_truth_json(result: SynthResult) -> str:
    payload = {
        "config": asdict(result.config),
        **result.ground_truth.to_json_dict(),
    }
    return json.dumps(payload, sort_keys=True, indent=2)
