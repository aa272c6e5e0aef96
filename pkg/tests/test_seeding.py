import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ncolab.seeding import child_seed, derive_stream

labels = st.lists(st.one_of(st.integers(0, 10**6), st.text(max_size=8)), max_size=4)


@given(seed=st.integers(0, 2**63), labels=labels)
def test_same_inputs_same_draws(seed, labels):
    a = derive_stream(seed, *labels).random(1000)
    b = derive_stream(seed, *labels).random(1000)
    assert np.array_equal(a, b)


def test_replication_streams_uncorrelated():
    draws = [derive_stream(20240501, "TrueHTE-Primary", rep).standard_normal(10_000) for rep in range(6)]
    r = np.corrcoef(draws)
    off = r[~np.eye(6, dtype=bool)]
    assert np.max(np.abs(off)) < 0.05


def test_spec_id_streams_uncorrelated():
    ids = ["TrueHTE-Primary", "NoHTE-Primary", "TrueHTE-SmallSample", "NoHTE-RelaxedNCO"]
    draws = [derive_stream(20240501, sid, 0).standard_normal(10_000) for sid in ids]
    r = np.corrcoef(draws)
    assert np.max(np.abs(r[~np.eye(len(ids), dtype=bool)])) < 0.05


def test_label_type_and_order_matter():
    base = derive_stream(1, 2, "a").random(4)
    assert not np.array_equal(base, derive_stream(1, "2", "a").random(4))
    assert not np.array_equal(base, derive_stream(1, "a", 2).random(4))
    assert not np.array_equal(base, derive_stream(1, 2).random(4))
    assert not np.array_equal(base, derive_stream(2, 2, "a").random(4))


def test_bad_labels_rejected():
    with pytest.raises(TypeError):
        derive_stream(1, True)
    with pytest.raises(TypeError):
        derive_stream(1, 1.5)


def test_child_seed_range():
    rng = derive_stream(3, "x")
    seeds = [child_seed(rng) for _ in range(100)]
    assert all(0 <= s < 2**63 for s in seeds)
    assert len(set(seeds)) == 100
