import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowrvae.features import (NUMERIC_FEATURES, AggFlow, NormalizerState, NotFittedError,
                               WindowConfig, aggregate_flows, aggregate_window, apply_normalizer,
                               build_sequences, feature_matrix, feature_names, fit_normalizer,
                               write_feature_csv)
from flowrvae.ingest import DEFAULT_VOCAB, FlowRecord, HostLabelSet

IDX = {n: i for i, n in enumerate(feature_names())}


def flow(ts=1.0, src="A", dst="B", sport=1000, dport=80, proto="tcp", service="http", dur=1.0,
         ob=10, rb=20, mb=0, op=1, rp=2, state="SF"):
    return FlowRecord(ts, src, sport, dst, dport, proto, service, dur, ob, rb, mb, op, rp, state)


def test_width_is_forty_with_default_vocab():
    assert len(feature_names()) == 40
    assert feature_names()[: len(NUMERIC_FEATURES)] == list(NUMERIC_FEATURES)


def test_three_flows_two_ports():
    fl = [flow(dport=80), flow(dport=80, sport=1001), flow(dport=443, sport=1002)]
    (a,) = aggregate_window(fl, 0)
    assert a.features[IDX["n_connections"]] == 3
    assert a.features[IDX["n_unique_dst_port"]] == 2
    assert a.features[IDX["n_unique_src_port"]] == 3


def test_single_flow_sums_equal_fields():
    f = flow(dur=2.5, ob=11, rb=22, mb=3, op=4, rp=5)
    (a,) = aggregate_window([f], 0)
    x = a.features
    assert x[IDX["sum_duration"]] == 2.5 and x[IDX["mean_duration"]] == 2.5
    assert (x[IDX["sum_orig_bytes"]], x[IDX["sum_resp_bytes"]], x[IDX["sum_missed_bytes"]]) == (11, 22, 3)
    assert (x[IDX["sum_orig_pkts"]], x[IDX["sum_resp_pkts"]]) == (4, 5)
    assert x[IDX["proto_tcp"]] == 1 and x[IDX["state_SF"]] == 1 and x[IDX["service_http"]] == 1


def test_two_sources_two_aggflows_sorted():
    out = aggregate_window([flow(ts=5.0, src="B"), flow(ts=2.0, src="A"), flow(ts=1.0, src="B")], 0)
    assert [(a.src_ip, a.group_first_ts) for a in out] == [("B", 1.0), ("A", 2.0)]


def test_empty_window():
    assert aggregate_window([], 0) == []


def test_labels_inherited_per_host():
    labels = HostLabelSet({"A": "malicious"})
    out = aggregate_window([flow(src="A"), flow(src="C")], 0, labels)
    assert {a.src_ip: a.label for a in out} == {"A": "malicious", "C": "normal"}


def test_windows_are_epoch_aligned():
    cfg = WindowConfig(duration_s=60)
    out = aggregate_flows([flow(ts=59.9), flow(ts=60.0), flow(ts=179.0)], cfg)
    assert [a.window_index for a in out] == [0, 1, 2]


def brute_force_aggregate(flows, width):
    """Independent per-source aggregation used as the oracle."""
    by_src = {}
    for f in flows:
        by_src.setdefault(f.src_ip, []).append(f)
    out = {}
    for src, fl in by_src.items():
        x = np.zeros(width)
        x[IDX["n_connections"]] = len(fl)
        x[IDX["n_unique_dst_ip"]] = len(set(f.dst_ip for f in fl))
        x[IDX["n_unique_dst_port"]] = len(set(f.dst_port for f in fl))
        x[IDX["n_unique_src_port"]] = len(set(f.src_port for f in fl))
        x[IDX["sum_duration"]] = sum(f.duration for f in fl)
        x[IDX["mean_duration"]] = x[IDX["sum_duration"]] / len(fl)
        for attr in ("orig_bytes", "resp_bytes", "missed_bytes", "orig_pkts", "resp_pkts"):
            x[IDX["sum_" + attr]] = sum(getattr(f, attr) for f in fl)
        for f in fl:
            x[IDX["proto_" + f.proto]] += 1
            x[IDX["state_" + f.conn_state]] += 1
            x[IDX["service_" + f.service]] += 1
        out[src] = x
    return out


flow_st = st.builds(
    flow, ts=st.floats(0.5, 59.0), src=st.sampled_from("ABC"), dst=st.sampled_from("XYZ"),
    sport=st.integers(0, 5), dport=st.sampled_from([22, 53, 80]),
    proto=st.sampled_from(DEFAULT_VOCAB.protocols), service=st.sampled_from(DEFAULT_VOCAB.services),
    dur=st.floats(0, 100), ob=st.integers(0, 10**6), rb=st.integers(0, 10**6),
    mb=st.integers(0, 10), op=st.integers(0, 50), rp=st.integers(0, 50),
    state=st.sampled_from(DEFAULT_VOCAB.conn_states),
)


@given(st.lists(flow_st, min_size=1, max_size=25))
@settings(max_examples=80, deadline=None)
def test_aggregate_matches_brute_force_and_conserves_counts(flows):
    out = aggregate_window(flows, 0)
    oracle = brute_force_aggregate(flows, len(IDX))
    assert {a.src_ip for a in out} == set(oracle)
    np_ = len(NUMERIC_FEATURES)
    n_proto, n_state = len(DEFAULT_VOCAB.protocols), len(DEFAULT_VOCAB.conn_states)
    for a in out:
        np.testing.assert_allclose(a.features, oracle[a.src_ip], rtol=1e-12)
        n = a.features[0]
        assert a.features[np_ : np_ + n_proto].sum() == n
        assert a.features[np_ + n_proto : np_ + n_proto + n_state].sum() == n
        assert a.features[np_ + n_proto + n_state :].sum() == n


def _agg(values, w=0, src="A", ts=0.0):
    return AggFlow(w, src, ts, np.asarray(values, dtype=float))


def test_normalizer_examples():
    aggs = [_agg([2.0, 5.0]), _agg([4.0, 5.0]), _agg([6.0, 5.0])]
    state = fit_normalizer(aggs)
    out = feature_matrix(apply_normalizer(state, aggs))
    np.testing.assert_allclose(out[:, 0], [0, 0.5, 1])
    np.testing.assert_allclose(out[:, 1], [0, 0, 0])


def test_normalizer_clamps_out_of_range():
    state = fit_normalizer([_agg([0.0]), _agg([8.0])])
    (a, b) = apply_normalizer(state, [_agg([10.0]), _agg([-3.0])])
    assert a.features[0] == 1.0 and b.features[0] == 0.0


def test_unfitted_normalizer_raises():
    with pytest.raises(NotFittedError):
        apply_normalizer(NormalizerState(), [_agg([1.0])])
    with pytest.raises(ValueError):
        fit_normalizer([])


def test_normalizer_dict_round_trip():
    state = fit_normalizer([_agg([1.0, 2.0]), _agg([3.0, 9.0])], ["a", "b"])
    back = NormalizerState.from_dict(state.to_dict())
    np.testing.assert_array_equal(back.mins, state.mins)
    np.testing.assert_array_equal(back.maxs, state.maxs)
    assert back.feature_names == ["a", "b"]


@given(st.lists(st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=3), min_size=1, max_size=20),
       st.lists(st.lists(st.floats(-1e7, 1e7), min_size=3, max_size=3), min_size=1, max_size=20))
@settings(max_examples=60, deadline=None)
def test_normalized_values_in_unit_interval(train, test):
    state = fit_normalizer([_agg(v) for v in train])
    assert np.all(state.maxs >= state.mins)
    X = feature_matrix(apply_normalizer(state, [_agg(v) for v in test]))
    assert np.all((X >= 0) & (X <= 1))


def test_build_sequences_examples():
    cfg = WindowConfig(windows_per_sequence=3, max_sequence_len=128)
    aggs = [_agg([0.0], w=w, src=s) for w, s in [(0, "A"), (0, "B"), (1, "A"), (2, "C"), (2, "D")]]
    (seq,) = build_sequences(aggs, cfg)
    assert len(seq) == 5 and seq.mask.sum() == 5 and seq.window_span == (0, 2)

    many = [_agg([0.0], w=0, src=f"h{i:03d}", ts=float(i)) for i in range(300)]
    assert [len(s) for s in build_sequences(many, cfg)] == [128, 128, 44]

    six = [_agg([0.0], w=w) for w in range(6)]
    spans = [s.window_span for s in build_sequences(six, cfg)]
    assert spans == [(0, 2), (3, 5)]


@given(st.lists(st.tuples(st.integers(0, 12), st.floats(0, 1e3), st.sampled_from("ABCDE")),
                max_size=80),
       st.integers(1, 4), st.integers(1, 10))
@settings(max_examples=60, deadline=None)
def test_sequences_partition_and_order(items, n, L):
    aggs = [_agg([0.0], w=w, src=s, ts=t) for w, t, s in items]
    seqs = build_sequences(aggs, WindowConfig(windows_per_sequence=n, max_sequence_len=L))
    assert sum(len(s) for s in seqs) == len(aggs)
    seen = [id(a) for s in seqs for a in s.agg_flows]
    assert sorted(seen) == sorted(id(a) for a in aggs)
    for s in seqs:
        keys = [(a.window_index, a.group_first_ts) for a in s.agg_flows]
        assert keys == sorted(keys)
        assert s.mask.sum() == len(s) <= L
        assert len({a.window_index // n for a in s.agg_flows}) == 1


def test_feature_csv(tmp_path):
    aggs = aggregate_window([flow(src="A"), flow(src="B", dport=53)], 0)
    path = tmp_path / "f.csv"
    write_feature_csv(path, aggs, feature_names())
    lines = path.read_text().splitlines()
    assert lines[0].split(",")[:5] == ["window_index", "src_ip", "group_first_ts", "label", "tag"]
    assert len(lines) == 3 and len(lines[1].split(",")) == 45


def test_feature_matrix_deterministic():
    fl = [flow(ts=float(i), src="AB"[i % 2], dport=i) for i in range(10)]
    a = feature_matrix(aggregate_window(fl, 0))
    b = feature_matrix(aggregate_window(list(fl), 0))
    assert a.tobytes() == b.tobytes()


def test_window_config_validation():
    with pytest.raises(ValueError):
        WindowConfig(duration_s=0)
    with pytest.raises(ValueError):
        WindowConfig(windows_per_sequence=0)
