import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from peakshave.curves import (
    SLOTS,
    CorruptionMask,
    DailyCurve,
    Dataset,
    NormalizationContext,
    Reading,
    augment_pairwise,
    corrupt,
    corrupt_array,
    count_meters,
    denormalize,
    ingest_readings,
    kfold,
    kfold_indices,
    normalize,
    read_curves_csv,
    read_readings_csv,
    split,
    synth_generate,
    write_curves_csv,
)
from peakshave.errors import (
    DataError,
    IncompleteDay,
    InsufficientData,
    InvalidFoldCount,
    InvalidNormalization,
    InvalidReading,
    InvalidSplit,
)

finite = st.floats(0.0, 1e3, allow_nan=False, allow_infinity=False)
curves48 = arrays(float, SLOTS, elements=finite)
keeps48 = arrays(bool, SLOTS)


def _readings(days=("d1",), meters=("m1", "m2"), kwh=lambda m, d, s: 1.0):
    return [Reading(m, d, s, kwh(m, d, s)) for d in days for m in meters for s in range(1, SLOTS + 1)]


# -- ingestion ---------------------------------------------------------------

def test_ingest_sums_meters_and_converts_to_kw():
    rows = _readings(meters=("a", "b", "c"), kwh=lambda m, d, s: 0.25 * s)
    data = ingest_readings(rows, 3)
    assert data.tags == ("d1",)
    # three meters, each 0.25*s kWh per half hour -> 1.5*s kW
    np.testing.assert_allclose(data.values[0], 1.5 * np.arange(1, SLOTS + 1))


def test_ingest_accepts_tuples_and_sorts_days():
    rows = [(r.meter_id, r.day, r.slot, r.kwh) for r in _readings(days=("b", "a"))]
    assert ingest_readings(rows, 2).tags == ("a", "b")


def test_ingest_missing_slot_names_day_and_slot():
    rows = [r for r in _readings(days=("2020-03-01",)) if not (r.meter_id == "m2" and r.slot == 17)]
    with pytest.raises(IncompleteDay) as exc:
        ingest_readings(rows, 2)
    assert exc.value.day == "2020-03-01" and exc.value.slot == 17
    assert "2020-03-01" in str(exc.value) and "17" in str(exc.value)


def test_ingest_slot_with_no_readings():
    rows = [r for r in _readings() if r.slot != 5]
    with pytest.raises(IncompleteDay) as exc:
        ingest_readings(rows, 2)
    assert exc.value.slot == 5


@pytest.mark.parametrize("bad", [-0.1, float("nan"), float("inf")])
def test_ingest_rejects_bad_values(bad):
    rows = _readings()
    rows[0] = Reading("m1", "d1", 1, bad)
    with pytest.raises(InvalidReading):
        ingest_readings(rows, 2)


def test_ingest_rejects_duplicates_and_bad_slots():
    rows = _readings()
    with pytest.raises(InvalidReading):
        ingest_readings(rows + [rows[0]], 2)
    with pytest.raises(InvalidReading):
        ingest_readings(rows + [Reading("m1", "d1", 49, 1.0)], 2)
    with pytest.raises(InsufficientData):
        ingest_readings([], 2)


def test_readings_csv(tmp_path):
    p = tmp_path / "r.csv"
    lines = ["meter_id,day,slot,kwh"] + [f"{r.meter_id},{r.day},{r.slot},{r.kwh}" for r in _readings()]
    p.write_text("\n".join(lines) + "\n")
    rows = read_readings_csv(p)
    assert count_meters(rows) == 2
    assert ingest_readings(rows, 2).values.shape == (1, SLOTS)
    p.write_text("meter,day,slot,kwh\n")
    with pytest.raises(DataError):
        read_readings_csv(p)


# -- value types -------------------------------------------------------------

def test_daily_curve_validation():
    c = DailyCurve(np.arange(SLOTS, dtype=float))
    assert c.peak == SLOTS - 1
    with pytest.raises(DataError):
        DailyCurve(np.ones(47))
    with pytest.raises(DataError):
        DailyCurve(-np.ones(SLOTS))
    with pytest.raises(ValueError):
        c.values[0] = 5.0


def test_mask_slot_range_is_one_based_inclusive():
    m = CorruptionMask.from_slot_range(29, 40, 0.5)
    assert m.n_masked == 12
    assert m.masked[0] == 28 and m.masked[-1] == 39
    assert m.same_geometry(m.with_value(0.1)) and m.with_value(0.1).mask_value == 0.1
    assert CorruptionMask.keep_all().n_masked == 0


def test_normalization_context():
    with pytest.raises(InvalidNormalization):
        NormalizationContext(0.0)
    data = synth_generate(5, 0)
    ctx = NormalizationContext.from_dataset(data)
    assert ctx.base_kw == data.values.max()
    pu = normalize(data, ctx)
    assert pu.unit == "pu" and pu.values.max() == 1.0
    with pytest.raises(InvalidNormalization):
        normalize(pu, ctx)
    with pytest.raises(InvalidNormalization):
        denormalize(data, ctx)


# -- augmentation ------------------------------------------------------------

def test_augment_two_curves():
    d = Dataset(np.array([np.full(SLOTS, 2.0), np.full(SLOTS, 4.0)]), ("a", "b"))
    out = augment_pairwise(d)
    assert len(out) == 3 and out.provenance == "augmented"
    np.testing.assert_array_equal(out.values[2], np.full(SLOTS, 3.0))


def test_augment_matches_brute_force_order():
    d = synth_generate(4, 1)
    out = augment_pairwise(d)
    expected = [(d.values[i] + d.values[j]) / 2 for i, j in itertools.combinations(range(4), 2)]
    np.testing.assert_array_equal(out.values[4:], np.array(expected))
    np.testing.assert_array_equal(out.values[:4], d.values)


def test_augment_needs_two():
    with pytest.raises(InsufficientData):
        augment_pairwise(synth_generate(1, 0))


@given(st.integers(2, 30))
def test_augment_count(n):
    d = Dataset(np.ones((n, SLOTS)), tuple(str(i) for i in range(n)))
    assert len(augment_pairwise(d)) == n + n * (n - 1) // 2


# -- corruption --------------------------------------------------------------

@given(curves48, keeps48, st.floats(0, 1))
def test_corrupt_properties(x, keep, c):
    m = CorruptionMask(keep, c)
    y = corrupt_array(x, m)
    np.testing.assert_array_equal(y[keep], x[keep])
    assert np.all(y[~keep] == c)
    np.testing.assert_array_equal(corrupt_array(y, m), y)


@given(curves48, st.floats(0, 1))
def test_corrupt_everything_gives_constant(x, c):
    y = corrupt_array(x, CorruptionMask(np.zeros(SLOTS, bool), c))
    assert np.all(y == c)


def test_corrupt_curve_and_batch():
    data = synth_generate(3, 0)
    m = CorruptionMask.from_slot_range(36, 48, 0.66)
    batch = corrupt_array(data.values, m)
    single = corrupt(data[1], m)
    np.testing.assert_array_equal(batch[1], single.values)
    with pytest.raises(DataError):
        corrupt_array(np.ones(10), m)


# -- normalization round trip --------------------------------------------------

@given(arrays(float, SLOTS, elements=st.floats(0, 1e4)), st.floats(1e-3, 1e4))
def test_normalize_round_trip(x, base):
    ctx = NormalizationContext(base)
    c = DailyCurve(x)
    back = denormalize(normalize(c, ctx), ctx)
    np.testing.assert_allclose(back.values, x, rtol=1e-12, atol=1e-9)


# -- splitting -----------------------------------------------------------------

def test_split_partitions_and_is_seeded():
    d = synth_generate(20, 0)
    tr, te = split(d, 15, seed=3)
    assert len(tr) == 15 and len(te) == 5
    assert sorted(tr.tags + te.tags) == sorted(d.tags)
    tr2, _ = split(d, 15, seed=3)
    assert tr.tags == tr2.tags
    for bad in (0, 20):
        with pytest.raises(InvalidSplit):
            split(d, bad, 0)


@given(st.integers(2, 60), st.integers(2, 10), st.integers(0, 100))
def test_kfold_indices_cover_once(n, k, seed):
    if k > n:
        with pytest.raises(InvalidFoldCount):
            kfold_indices(n, k, seed)
        return
    folds = kfold_indices(n, k, seed)
    assert len(folds) == k
    held = np.concatenate([va for _, va in folds])
    assert sorted(held.tolist()) == list(range(n))
    for tr, va in folds:
        assert set(tr.tolist()).isdisjoint(va.tolist())
        assert len(tr) + len(va) == n


def test_kfold_datasets():
    d = synth_generate(10, 0)
    parts = kfold(d, 5, 0)
    assert [len(va) for _, va in parts] == [2] * 5


# -- synthetic generator -------------------------------------------------------

def test_synth_is_reproducible_and_in_range():
    a = synth_generate(300, 11)
    b = synth_generate(300, 11)
    np.testing.assert_array_equal(a.values, b.values)
    assert a.provenance == "synthetic"
    assert a.tags[0] == "2020-01-01" and a.tags[31] == "2020-02-01"
    assert np.all(a.peaks >= 250 - 1e-9) and np.all(a.peaks <= 335 + 1e-9)
    peak_slot = a.values.argmax(axis=1) + 1
    assert np.all((peak_slot >= 29) & (peak_slot <= 40))
    assert not np.array_equal(a.values, synth_generate(300, 12).values)


# -- curve files ---------------------------------------------------------------

def test_curve_csv_round_trip_is_exact(tmp_path):
    d = synth_generate(7, 2)
    p = tmp_path / "c.csv"
    write_curves_csv(d, p)
    back = read_curves_csv(p)
    assert back.tags == d.tags
    np.testing.assert_array_equal(back.values, d.values)
    p.write_text("day,v1\nx,1\n")
    with pytest.raises(DataError):
        read_curves_csv(p)
