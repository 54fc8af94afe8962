import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mswecg.data import (
    Dataset,
    DatasetHeader,
    EcgRecord,
    SynthSpec,
    fold_split,
    load_dataset,
    save_dataset,
    standardize,
    synth_generate,
)
from mswecg.errors import DataError
from util import pairwise_auc


def small_dataset(n=10, n_leads=2, L=6, K=2, seed=0):
    rng = np.random.default_rng(seed)
    header = DatasetHeader(n_leads=n_leads, L=L, K=K, class_names=("A", "B")[:K])
    records = tuple(
        EcgRecord(
            id=f"r{i:03d}",
            signal=rng.normal(size=(n_leads, L)),
            labels=(rng.random(K) < 0.5).astype(np.int64),
            fold=(i % 10) + 1,
        )
        for i in range(n)
    )
    return Dataset(header=header, records=records)


# ---------------------------------------------------------------------------
# file round trip


def test_save_load_round_trip(tmp_path):
    ds = small_dataset(12)
    save_dataset(ds, tmp_path / "sig.bin", tmp_path / "lab.csv")
    back = load_dataset(tmp_path / "sig.bin", tmp_path / "lab.csv")
    assert back.header == ds.header
    assert len(back) == len(ds)
    for a, b in zip(ds.records, back.records):
        assert a.id == b.id and a.fold == b.fold
        assert np.array_equal(a.signal, b.signal)
        assert np.array_equal(a.labels, b.labels)


def test_load_validates_against_expected_header(tmp_path):
    ds = small_dataset()
    save_dataset(ds, tmp_path / "sig.bin", tmp_path / "lab.csv")
    good = load_dataset(tmp_path / "sig.bin", tmp_path / "lab.csv", header=ds.header)
    assert len(good) == len(ds)
    wrong_geom = DatasetHeader(n_leads=3, L=6, K=2, class_names=("A", "B"))
    with pytest.raises(DataError, match="does not match"):
        load_dataset(tmp_path / "sig.bin", tmp_path / "lab.csv", header=wrong_geom)
    wrong_names = DatasetHeader(n_leads=2, L=6, K=2, class_names=("A", "C"))
    with pytest.raises(DataError, match="unknown class name 'B'"):
        load_dataset(tmp_path / "sig.bin", tmp_path / "lab.csv", header=wrong_names)


def test_load_rejects_duplicate_id(tmp_path):
    ds = small_dataset(3)
    save_dataset(ds, tmp_path / "sig.bin", tmp_path / "lab.csv")
    text = (tmp_path / "lab.csv").read_text().replace("r001", "r000")
    (tmp_path / "lab.csv").write_text(text)
    with pytest.raises(DataError, match="duplicate id"):
        load_dataset(tmp_path / "sig.bin", tmp_path / "lab.csv")


def test_load_rejects_nonfinite_sample(tmp_path):
    ds = small_dataset(3)
    bad_signal = ds.records[1].signal.copy()
    bad_signal[0, 0] = np.nan
    records = list(ds.records)
    records[1] = EcgRecord(id="r001", signal=bad_signal, labels=records[1].labels, fold=2)
    save_dataset(Dataset(header=ds.header, records=tuple(records)),
                 tmp_path / "sig.bin", tmp_path / "lab.csv")
    with pytest.raises(DataError, match=r"row 1.*non-finite|non-finite"):
        load_dataset(tmp_path / "sig.bin", tmp_path / "lab.csv")


def test_load_rejects_truncated_blob(tmp_path):
    ds = small_dataset(3)
    save_dataset(ds, tmp_path / "sig.bin", tmp_path / "lab.csv")
    raw = (tmp_path / "sig.bin").read_bytes()
    (tmp_path / "sig.bin").write_bytes(raw[:-8])
    with pytest.raises(DataError, match="bytes"):
        load_dataset(tmp_path / "sig.bin", tmp_path / "lab.csv")


def test_signal_file_size_is_header_plus_blob(tmp_path):
    ds = small_dataset(7, n_leads=3, L=5)
    sig = tmp_path / "sig.bin"
    save_dataset(ds, sig, tmp_path / "lab.csv")
    header_len = len("3 5 2 100\n")
    assert sig.stat().st_size == header_len + 7 * 3 * 5 * 8


# ---------------------------------------------------------------------------
# folds and standardization


def test_fold_split_partition():
    ds = small_dataset(10)
    train, val, test = fold_split(ds)
    assert (len(train), len(val), len(test)) == (8, 1, 1)
    ids = {r.id for r in train} | {r.id for r in val} | {r.id for r in test}
    assert ids == {r.id for r in ds.records}


def test_fold_split_empty_val_warns():
    ds = small_dataset(8)  # folds 1..8 only
    with pytest.warns(UserWarning, match="validation fold"):
        train, val, test = fold_split(ds)
    assert len(val) == 0 and len(test) == 0 and len(train) == 8


def test_fold_split_rejects_bad_fold():
    ds = small_dataset(2)
    bad = EcgRecord(id="x", signal=ds.records[0].signal, labels=ds.records[0].labels, fold=11)
    broken = Dataset(header=ds.header, records=ds.records + (bad,))
    with pytest.raises(DataError, match="fold 11"):
        fold_split(broken)


@settings(max_examples=30, deadline=None)
@given(folds=st.lists(st.integers(min_value=1, max_value=10), min_size=1, max_size=40))
def test_fold_split_disjoint_and_covering(folds):
    header = DatasetHeader(n_leads=1, L=2, K=1, class_names=("A",))
    records = tuple(
        EcgRecord(id=f"r{i}", signal=np.zeros((1, 2)), labels=np.array([0]), fold=f)
        for i, f in enumerate(folds)
    )
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        train, val, test = fold_split(Dataset(header=header, records=records))
    assert len(train) + len(val) + len(test) == len(records)
    assert all(r.fold <= 8 for r in train)
    assert all(r.fold == 9 for r in val)
    assert all(r.fold == 10 for r in test)


def test_standardize_train_statistics():
    ds = standardize(small_dataset(40, seed=3))
    train = np.stack([r.signal for r in ds.records if r.fold <= 8])
    assert np.abs(train.mean(axis=(0, 2))).max() < 1e-9
    assert np.abs(train.std(axis=(0, 2)) - 1.0).max() < 1e-9


def test_standardize_does_not_leak_test_folds():
    ds = standardize(small_dataset(60, seed=4))
    held = np.stack([r.signal for r in ds.records if r.fold > 8])
    # Held-out statistics must come out shifted, not exactly 0/1.
    assert np.abs(held.mean(axis=(0, 2))).max() > 1e-9
    assert np.abs(held.std(axis=(0, 2)) - 1.0).max() > 1e-9


def test_standardize_constant_lead_maps_to_zero():
    header = DatasetHeader(n_leads=1, L=4, K=1, class_names=("A",))
    records = tuple(
        EcgRecord(id=f"r{i}", signal=np.full((1, 4), 2.5), labels=np.array([0]), fold=i + 1)
        for i in range(10)
    )
    ds = standardize(Dataset(header=header, records=records))
    assert np.array_equal(ds.records[0].signal, np.zeros((1, 4)))


def test_standardize_requires_training_folds():
    header = DatasetHeader(n_leads=1, L=4, K=1, class_names=("A",))
    records = (EcgRecord(id="a", signal=np.ones((1, 4)), labels=np.array([1]), fold=9),)
    with pytest.raises(DataError, match="training folds"):
        standardize(Dataset(header=header, records=records))


# ---------------------------------------------------------------------------
# synthetic generator


def test_synth_deterministic():
    a = synth_generate(SynthSpec(seed=5, n_records=20))
    b = synth_generate(SynthSpec(seed=5, n_records=20))
    for ra, rb in zip(a.records, b.records):
        assert ra.signal.tobytes() == rb.signal.tobytes()
        assert np.array_equal(ra.labels, rb.labels)


def test_synth_no_motifs_no_noise_is_constant_baseline():
    spec = SynthSpec(seed=0, n_records=6, noise_std=0.0, marginals=(0.0, 0.0, 0.0))
    ds = synth_generate(spec)
    base = ds.records[0].signal
    for rec in ds.records[1:]:
        assert np.array_equal(rec.signal, base)
    assert not np.array_equal(base, np.zeros_like(base))


def test_synth_round_robin_folds():
    ds = synth_generate(SynthSpec(seed=1, n_records=30))
    folds = [r.fold for r in ds.records]
    assert folds[:10] == list(range(1, 11))
    assert all(folds[i] == (i % 10) + 1 for i in range(30))


def test_synth_rejects_bad_spec():
    with pytest.raises(DataError):
        synth_generate(SynthSpec(n_records=0))
    with pytest.raises(DataError):
        synth_generate(SynthSpec(amp_leads=(9,)))


def test_synth_motifs_detectable_by_matched_filters():
    spec = SynthSpec(seed=7, n_records=200)
    ds = synth_generate(spec)
    labels = ds.label_matrix()
    t = np.arange(spec.L)

    def unit_template(width):
        tmpl = np.exp(-0.5 * ((t - spec.L / 2) / width) ** 2)
        return tmpl / np.linalg.norm(tmpl)

    wide = unit_template(spec.pulse_width * spec.wide_factor)
    narrow = unit_template(spec.pulse_width)
    others = [j for j in range(spec.n_leads) if j not in spec.amp_leads]
    stats = {0: [], 1: [], 2: []}
    lag_lo = int(spec.interval * 0.7)
    lag_hi = int(spec.interval * spec.interval_factor * 1.3)
    for rec in ds.records:
        xbar = rec.signal.mean(axis=0)
        stats[0].append(
            np.correlate(xbar, wide, mode="same").max()
            / np.correlate(xbar, narrow, mode="same").max()
        )
        rms_des = np.sqrt((rec.signal[list(spec.amp_leads)] ** 2).mean())
        rms_oth = np.sqrt((rec.signal[others] ** 2).mean())
        stats[1].append(rms_des / rms_oth)
        xc = xbar - xbar.mean()
        ac = np.correlate(xc, xc, mode="full")[len(xc) - 1 :]
        stats[2].append(lag_lo + int(np.argmax(ac[lag_lo:lag_hi])))
    for k in range(3):
        auc = pairwise_auc(np.array(stats[k]), labels[:, k])
        assert auc > 0.95, f"class {k}: matched-filter AUC {auc}"
