"""Desk-scale synthetic card-transaction generator with clustered fraud bursts.

Genuine spending is card-specific: a handful of favourite merchants close
to the cardholder's home, a card-level amount scale and a preferred time of
day, so a card's history says something about its next transaction. Fraud
arrives as short episodes on a compromised card: several transactions
within a few hours, at fraud-prone merchants anywhere on the map, with
larger amounts and mostly at night. Merchant coordinates live on a
``map_size`` x ``map_size`` square.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd

from .transactions import SECONDS_PER_DAY, TransactionTable

CATEGORIES = (
    "grocery_pos", "gas_transport", "home", "shopping_pos", "kids_pets",
    "shopping_net", "entertainment", "food_dining", "personal_care",
    "health_fitness", "misc_pos", "misc_net", "grocery_net", "travel",
)
# categories fraudsters favour (online and resellable goods)
FRAUD_CATEGORIES = ("shopping_net", "misc_net", "grocery_net", "shopping_pos")

CATEGORICAL = ("category",)
NUMERIC = ("amount", "hour", "merch_lat", "merch_long")


@dataclass(frozen=True)
class GenConfig:
    n_cards: int = 300
    n_merchants: int = 200
    n_days: int = 45
    tx_per_card_per_day: float = 1.5
    fraud_rate: float = 0.01
    burst_length: float = 3.0
    burst_width_hours: float = 4.0
    fraud_merchant_share: float = 0.1
    favourite_merchants: int = 8
    genuine_amount_mu: float = 3.5
    card_amount_spread: float = 0.8
    genuine_amount_sigma: float = 0.35
    hour_spread: float = 3.5
    hour_sigma: float = 1.5
    map_size: float = 10.0
    fraud_amount_mu: float = 5.5
    fraud_amount_sigma: float = 0.6
    start_time: int = 1_577_836_800
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.fraud_rate < 1:
            raise ValueError("fraud_rate must be in (0, 1)")
        for name in ("n_cards", "n_merchants", "n_days", "favourite_merchants"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.tx_per_card_per_day <= 0 or self.burst_length < 1 or self.burst_width_hours <= 0:
            raise ValueError("rates and burst parameters must be positive (burst_length >= 1)")

    @property
    def expected_volume(self) -> float:
        return self.n_cards * self.n_days * self.tx_per_card_per_day

    def to_dict(self) -> dict:
        return asdict(self)


def _hour_of(seconds: np.ndarray) -> np.ndarray:
    return (seconds % SECONDS_PER_DAY) / 3600.0


def generate(config: GenConfig, return_episodes: bool = False):
    """Draw a transaction table; same config (incl. seed) gives the same table.

    With ``return_episodes`` also returns a list of tx_id arrays, one per
    fraud episode.
    """
    if config.fraud_rate * config.expected_volume < 1:
        raise ValueError(
            f"fraud_rate x expected volume = {config.fraud_rate * config.expected_volume:.3g} < 1; "
            "no fraud can be realized")
    rng = np.random.default_rng(config.seed)
    n_cards, n_merch = config.n_cards, config.n_merchants

    merch_cat = rng.integers(0, len(CATEGORIES), size=n_merch)
    fraud_cat_idx = [CATEGORIES.index(c) for c in FRAUD_CATEGORIES]
    n_fraud_merch = max(1, int(round(config.fraud_merchant_share * n_merch)))
    fraud_merchants = rng.choice(n_merch, size=n_fraud_merch, replace=False)
    merch_cat[fraud_merchants] = rng.choice(fraud_cat_idx, size=n_fraud_merch)
    regular = np.setdiff1d(np.arange(n_merch), fraud_merchants)
    if regular.size == 0:
        regular = np.arange(n_merch)

    merch_xy = rng.uniform(0.0, config.map_size, size=(n_merch, 2))

    # card profiles: favourites are the regular merchants nearest to home
    n_fav = min(config.favourite_merchants, regular.size)
    home = rng.uniform(0.0, config.map_size, size=(n_cards, 2))
    dist = np.linalg.norm(home[:, None, :] - merch_xy[regular][None, :, :], axis=2)
    favourites = regular[np.argsort(dist, axis=1, kind="stable")[:, :n_fav]]
    fav_weights = rng.dirichlet(np.ones(n_fav), size=n_cards)
    amount_mu = config.genuine_amount_mu + rng.normal(0.0, config.card_amount_spread, size=n_cards)
    hour_centre = np.clip(rng.normal(14.0, config.hour_spread, size=n_cards), 6.0, 22.0)

    # genuine arrivals: Poisson count per card-day, times around the card's usual hour
    counts = rng.poisson(config.tx_per_card_per_day, size=(n_cards, config.n_days))
    card_idx = np.repeat(np.repeat(np.arange(n_cards), config.n_days), counts.ravel())
    day_idx = np.repeat(np.tile(np.arange(config.n_days), n_cards), counts.ravel())
    n_gen = card_idx.size
    hours = np.clip(rng.normal(hour_centre[card_idx], config.hour_sigma), 0.0, 23.999)
    # mix in a uniform component so intra-day times are not too regular
    uniform = rng.random(n_gen) < 0.2
    hours[uniform] = rng.uniform(0.0, 24.0, size=int(uniform.sum()))
    g_time = day_idx * SECONDS_PER_DAY + np.floor(hours * 3600.0).astype(np.int64)
    # pin the earliest transaction to midnight so day buckets are calendar days
    g_time[np.argmin(g_time)] = 0
    cum = np.cumsum(fav_weights[card_idx], axis=1)
    pick = (rng.random(n_gen)[:, None] > cum).sum(axis=1)
    pick = np.minimum(pick, n_fav - 1)
    g_merch = favourites[card_idx, pick]
    g_amount = np.exp(rng.normal(amount_mu[card_idx], config.genuine_amount_sigma))

    # fraud episodes until the target count is reached
    n_fraud = int(round(config.fraud_rate / (1.0 - config.fraud_rate) * n_gen))
    n_fraud = max(n_fraud, 1)
    width = int(config.burst_width_hours * 3600)
    horizon = config.n_days * SECONDS_PER_DAY
    f_card, f_time, f_episode = [], [], []
    remaining = n_fraud
    n_episodes = 0
    # episode days cycle through shuffled passes over all days, so fraud
    # pressure is roughly constant per day
    day_cycle: list[int] = []
    while remaining > 0:
        length = min(remaining, 1 + int(rng.poisson(config.burst_length - 1.0)))
        card = int(rng.integers(0, n_cards))
        if not day_cycle:
            day_cycle = rng.permutation(config.n_days).tolist()
        day = day_cycle.pop()
        # most episodes start in the small hours; all stay within their day
        latest = max(24.0 - config.burst_width_hours, 0.0)
        if rng.random() < 0.7:
            start_hour = rng.uniform(0.0, min(5.0, latest))
        else:
            start_hour = rng.uniform(0.0, latest)
        start = min(day * SECONDS_PER_DAY + int(start_hour * 3600), horizon - width - 1)
        offsets = np.sort(rng.integers(0, width + 1, size=length))
        f_card.extend([card] * length)
        f_time.extend((start + offsets).tolist())
        f_episode.extend([n_episodes] * length)
        n_episodes += 1
        remaining -= length
    f_card = np.asarray(f_card, dtype=np.int64)
    f_time = np.asarray(f_time, dtype=np.int64)
    f_merch = rng.choice(fraud_merchants, size=n_fraud)
    f_amount = np.exp(rng.normal(config.fraud_amount_mu, config.fraud_amount_sigma, size=n_fraud))

    time = np.concatenate([g_time, f_time])
    card = np.concatenate([card_idx, f_card])
    merch = np.concatenate([g_merch, f_merch])
    amount = np.round(np.concatenate([g_amount, f_amount]), 2)
    label = np.concatenate([np.zeros(n_gen, np.int64), np.ones(n_fraud, np.int64)])

    order = np.lexsort((label, card, time))
    frame = pd.DataFrame({
        "tx_id": np.arange(time.size, dtype=np.int64),
        "time": config.start_time + time[order],
        "card_id": [f"C{c:05d}" for c in card[order]],
        "merchant_id": [f"M{m:05d}" for m in merch[order]],
        "label": label[order],
        "category": np.asarray(CATEGORIES)[merch_cat[merch[order]]],
        "amount": amount[order],
        "hour": np.round(_hour_of(time[order]), 4),
        "merch_lat": np.round(merch_xy[merch[order], 0], 4),
        "merch_long": np.round(merch_xy[merch[order], 1], 4),
    })
    table = TransactionTable.from_frame(frame, CATEGORICAL, NUMERIC)
    if not return_episodes:
        return table
    episode = np.concatenate([np.full(n_gen, -1), np.asarray(f_episode)])[order]
    episodes = [np.flatnonzero(episode == e).astype(np.int64) for e in range(n_episodes)]
    return table, episodes
