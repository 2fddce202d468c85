import numpy as np

from flowrvae import ingest
from flowrvae.features import WindowConfig, aggregate_flows
from flowrvae.synth import (FixtureConfig, cyclic_prototypes, cyclic_sequences, generate_fixture,
                            two_domain_task, write_fixture)


def test_fixture_size_and_labels():
    conn, weird, bots = generate_fixture()
    flows = ingest.parse_conn_log(conn)
    assert not flows.skipped
    labels = ingest.derive_labels(ingest.parse_weird_log(weird))
    assert sorted(labels.malicious_hosts()) == sorted(bots)
    assert len(bots) == FixtureConfig().n_bots
    aggs = aggregate_flows(flows, WindowConfig(duration_s=60), labels)
    assert len(aggs) >= 2000
    assert 0 < sum(a.is_malicious for a in aggs) < len(aggs)


def test_fixture_is_seeded(tmp_path):
    a = write_fixture(tmp_path / "a", FixtureConfig(n_windows=10))
    b = write_fixture(tmp_path / "b", FixtureConfig(n_windows=10))
    assert all(x.read_bytes() == y.read_bytes() for x, y in zip(a, b))
    c, _, _ = generate_fixture(FixtureConfig(n_windows=10, seed=1))
    assert c != a[0].read_text().splitlines()


def test_shuffled_sequences_keep_the_marginal():
    rng = np.random.default_rng(0)
    protos = cyclic_prototypes(6, 4, rng)
    ordered = cyclic_sequences(protos, 50, 12, rng, noise=0.0)
    shuffled = cyclic_sequences(protos, 50, 12, rng, noise=0.0, shuffled=True)
    as_rows = lambda seqs: sorted(map(tuple, np.concatenate(seqs)))  # noqa: E731
    assert as_rows(ordered) == as_rows(shuffled)


def test_two_domain_task_shapes():
    d = two_domain_task(0)
    assert len(d.target_normal) * 10 == len(d.source_normal)
    assert d.test_x and len(d.test_x) == len(d.test_y) and 0 < d.test_y.sum() < len(d.test_y)
