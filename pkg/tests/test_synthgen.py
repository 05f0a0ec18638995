import numpy as np
import pytest

from graphguard.synthgen import FRAUD_CATEGORIES, GenConfig, generate


def test_byte_identical(tmp_path):
    cfg = GenConfig(n_cards=50, n_days=10, seed=7)
    generate(cfg).write(tmp_path / "a.csv")
    generate(cfg).write(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_different_seed_differs():
    a = generate(GenConfig(n_cards=50, n_days=10, seed=1)).frame
    b = generate(GenConfig(n_cards=50, n_days=10, seed=2)).frame
    assert not a.equals(b)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_fraud_count_in_bounds(seed):
    # 400 cards x 50 days x 1.0 = 20,000 expected rows
    t = generate(GenConfig(n_cards=400, n_days=50, tx_per_card_per_day=1.0, seed=seed))
    n_fraud = int(t.frame.label.sum())
    assert 160 <= n_fraud <= 240


@pytest.mark.parametrize("seed", range(5))
def test_every_day_nonempty(seed):
    t = generate(GenConfig(n_cards=100, n_days=30, tx_per_card_per_day=1.0, seed=seed))
    assert t.days.max() == 29
    assert set(t.days.tolist()) == set(range(30))


def test_episodes_are_clustered():
    cfg = GenConfig(n_cards=200, n_days=20, seed=4)
    t, episodes = generate(cfg, return_episodes=True)
    f = t.frame.set_index("tx_id")
    assert sum(len(e) for e in episodes) == int(t.frame.label.sum())
    for ep in episodes:
        rows = f.loc[ep]
        assert rows.label.eq(1).all()
        assert rows.card_id.nunique() == 1
        assert rows.time.max() - rows.time.min() <= cfg.burst_width_hours * 3600
        assert rows.day.nunique() == 1
    assert np.mean([len(e) for e in episodes]) > 1.5


def test_fraud_looks_different():
    t = generate(GenConfig(n_cards=200, n_days=20, seed=5)).frame
    fraud, genuine = t[t.label == 1], t[t.label == 0]
    assert fraud.amount.mean() > genuine.amount.mean()
    assert fraud.category.isin(FRAUD_CATEGORIES).mean() > genuine.category.isin(FRAUD_CATEGORIES).mean()


def test_unrealizable_fraud_rate():
    with pytest.raises(ValueError):
        generate(GenConfig(n_cards=2, n_days=2, tx_per_card_per_day=1.0, fraud_rate=0.01))


def test_invalid_config():
    with pytest.raises(ValueError):
        GenConfig(fraud_rate=1.5)
    with pytest.raises(ValueError):
        GenConfig(n_cards=0)
