import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowrvae.ingest import (DEFAULT_INDICATORS, FlowRecord, HostLabelSet, ParseError, Vocabulary,
                             WeirdEvent, derive_labels, parse_conn_log, parse_flow_csv,
                             parse_weird_log)

# Field order of the hand-built line below.
HAND_FIELDS = ("ts uid id.orig_h id.orig_p id.resp_h id.resp_p proto service duration orig_bytes "
               "resp_bytes missed_bytes conn_state history orig_pkts orig_ip_bytes resp_pkts").split()
HAND_LINE = "1.5\tC1\t10.0.0.2\t1337\t10.0.0.9\t80\ttcp\thttp\t0.2\t100\t200\t0\tSF\tShADad\t3\t260\t4"


def _with_header(fields, rows):
    return ["#separator \\x09", "#fields\t" + "\t".join(fields), *rows]


def test_hand_constructed_conn_line():
    (rec,) = parse_conn_log([HAND_LINE], field_spec=HAND_FIELDS)
    assert rec == FlowRecord(ts=1.5, src_ip="10.0.0.2", src_port=1337, dst_ip="10.0.0.9", dst_port=80,
                             proto="tcp", service="http", duration=0.2, orig_bytes=100,
                             resp_bytes=200, missed_bytes=0, orig_pkts=3, resp_pkts=4,
                             conn_state="SF")


def test_header_fields_used_when_no_spec():
    (rec,) = parse_conn_log(_with_header(HAND_FIELDS, [HAND_LINE]))
    assert rec.dst_port == 80 and rec.resp_pkts == 4


def test_absent_duration_is_zero():
    line = HAND_LINE.replace("\t0.2\t", "\t-\t")
    (rec,) = parse_conn_log([line], field_spec=HAND_FIELDS)
    assert rec.duration == 0.0


def test_empty_stream():
    assert list(parse_conn_log([])) == []
    assert list(parse_weird_log([])) == []


def test_short_line_is_skipped_with_line_number():
    lines = _with_header(HAND_FIELDS, [HAND_LINE, "2.0\tC2\t10.0.0.3", HAND_LINE])
    out = parse_conn_log(lines)
    assert len(out) == 2
    assert [n for n, _ in out.skipped] == [4]


def test_invalid_values_are_skipped():
    bad_port = HAND_LINE.replace("\t1337\t", "\t70000\t")
    neg_bytes = HAND_LINE.replace("\t100\t", "\t-5\t")
    out = parse_conn_log([bad_port, neg_bytes, HAND_LINE], field_spec=HAND_FIELDS)
    assert len(out) == 1 and len(out.skipped) == 2


def test_malformed_header_is_fatal():
    with pytest.raises(ParseError):
        parse_conn_log(["#fields", HAND_LINE])
    with pytest.raises(ParseError):
        parse_conn_log([HAND_LINE])  # no header and no spec


def test_unknown_categories_map_to_other():
    line = HAND_LINE.replace("\ttcp\thttp\t", "\tsctp\tgopher\t").replace("\tSF\t", "\tZZ\t")
    (rec,) = parse_conn_log([line], field_spec=HAND_FIELDS)
    assert (rec.proto, rec.service, rec.conn_state) == ("other", "other", "OTH")


def test_absent_service_is_none_bucket():
    (rec,) = parse_conn_log([HAND_LINE.replace("\thttp\t", "\t-\t")], field_spec=HAND_FIELDS)
    assert rec.service == "none"


def test_output_follows_input_order():
    lines = [HAND_LINE.replace("1.5", ts, 1) for ts in ("9.0", "3.0", "5.0")]
    assert [r.ts for r in parse_conn_log(lines, field_spec=HAND_FIELDS)] == [9.0, 3.0, 5.0]


WEIRD_FIELDS = ("ts", "uid", "id.orig_h", "id.orig_p", "id.resp_h", "id.resp_p", "name", "addl",
                "notice", "peer")


def test_weird_line():
    line = "10.0\tW1\t10.0.0.5\t4000\t1.2.3.4\t6667\tirc_line_too_short\t-\tF\tzeek"
    (ev,) = parse_weird_log(_with_header(WEIRD_FIELDS, [line]))
    assert ev == WeirdEvent(ts=10.0, src_ip="10.0.0.5", name="irc_line_too_short")


def test_weird_unknown_name_passes_through():
    line = "10.0\tW1\t10.0.0.5\t4000\t1.2.3.4\t53\tsomething_odd\t-\tF\tzeek"
    (ev,) = parse_weird_log(_with_header(WEIRD_FIELDS, [line]))
    assert ev.name == "something_odd"


def test_derive_labels_examples():
    events = [WeirdEvent(1.0, "A", "irc_line_too_short"), WeirdEvent(2.0, "B", "dns_unmatched_reply")]
    labels = derive_labels(events)
    assert labels == {"A": "malicious"}
    assert labels["B"] == "normal"
    assert derive_labels([]) == {}
    both = [WeirdEvent(1.0, "A", "dns_unmatched_reply"), WeirdEvent(2.0, "A", "irc_invalid_line")]
    assert derive_labels(both).is_malicious("A")


def test_default_indicators_are_the_two_irc_events():
    assert DEFAULT_INDICATORS == {"irc_line_too_short", "irc_invalid_line"}


def test_empty_indicator_set_rejected():
    with pytest.raises(ValueError):
        derive_labels([], indicator_set=[])


def test_host_label_set_rejects_unknown_label():
    with pytest.raises(ValueError):
        HostLabelSet({"A": "suspicious"})


names = st.sampled_from(["irc_line_too_short", "irc_invalid_line", "dns_unmatched_reply", "x"])
hosts = st.sampled_from(["A", "B", "C", "D"])
events_st = st.lists(st.builds(WeirdEvent, st.just(1.0), hosts, names), max_size=20)


@given(events_st, events_st)
@settings(max_examples=60, deadline=None)
def test_label_monotonicity(first, extra):
    before = set(derive_labels(first).malicious_hosts())
    after = set(derive_labels(first + extra).malicious_hosts())
    assert before <= after


CSV = """ts,src_ip,src_port,dst_ip,dst_port,proto,service,duration,orig_bytes,resp_bytes,orig_pkts,resp_pkts,conn_state
100.5,10.0.0.1,5000,8.8.8.8,53,udp,dns,0.01,40,120,1,1,SF
2011/08/10 09:46:53.047,10.0.0.2,5001,1.1.1.1,443,tcp,ssl,1.5,500,9000,8,12,S1
"""


def test_flow_csv_two_rows():
    a, b = parse_flow_csv(io.StringIO(CSV))
    assert (a.ts, a.src_ip, a.dst_port, a.proto, a.service, a.orig_bytes, a.resp_pkts) == (
        100.5, "10.0.0.1", 53, "udp", "dns", 40, 1)
    assert b.ts == pytest.approx(1312969613.047)
    assert (b.dst_port, b.service, b.resp_bytes, b.conn_state) == (443, "ssl", 9000, "S1")
    assert a.missed_bytes == 0  # column absent


def test_flow_csv_missing_optional_column_defaults():
    text = "ts,src_ip,dst_ip\n5.0,10.0.0.1,10.0.0.2\n"
    (rec,) = parse_flow_csv(io.StringIO(text))
    assert (rec.src_port, rec.duration, rec.proto, rec.service) == (0, 0.0, "other", "none")


def test_flow_csv_header_only_and_required_columns():
    assert list(parse_flow_csv(io.StringIO("ts,src_ip,dst_ip\n"))) == []
    with pytest.raises(ParseError):
        parse_flow_csv(io.StringIO("ts,src_ip\n1,2\n"))


def test_flow_csv_custom_schema():
    text = "StartTime,SrcAddr,DstAddr,Dport\n7.0,10.0.0.1,10.0.0.2,80\n"
    schema = {"ts": "StartTime", "src_ip": "SrcAddr", "dst_ip": "DstAddr", "dst_port": "Dport"}
    (rec,) = parse_flow_csv(io.StringIO(text), schema=schema)
    assert (rec.ts, rec.dst_port) == (7.0, 80)


def test_vocabulary_needs_other_bucket():
    with pytest.raises(ValueError):
        Vocabulary(protocols=("tcp", "udp"))
    v = Vocabulary(services=("http", "other"))
    assert v.service("dns") == "other"
