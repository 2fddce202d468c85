import numpy as np
import pytest

from flowrvae.neuralcore import Tensor, check_gradients, no_grad
from flowrvae.neuralcore import tensor as T
from flowrvae.rvae import (MlpVaeModel, RvaeModel, TrainConfig, anomaly_scores, beta_at,
                           binary_entropy, carry_lowest, collate, decode, encode, kl_divergence,
                           load_model, reparameterize, save_model, score_sequences, source_loss,
                           target_loss, train_semisupervised, train_transfer_with_label,
                           train_transfer_without_label)
from flowrvae.synth import cyclic_prototypes, cyclic_sequences


def zero_model(F=4, H=3, Z=2):
    m = RvaeModel(F, hidden=H, latent=Z, seed=0)
    for p in m.parameters():
        p.data[...] = 0.0
    return m


def toy(seed=0, n=40, length=6, F=5):
    rng = np.random.default_rng(seed)
    protos = cyclic_prototypes(F, 3, rng)
    return cyclic_sequences(protos, n, length, rng)


def test_zero_weights_encode_to_standard_normal():
    mu, lv = encode(zero_model(), np.random.default_rng(0).random((7, 4)))
    np.testing.assert_array_equal(mu, 0.0)
    np.testing.assert_array_equal(lv, 0.0)
    assert mu.shape == (2,)


def test_encode_is_order_sensitive():
    m = RvaeModel(4, hidden=6, latent=3, seed=1)
    x = np.random.default_rng(2).random((5, 4))
    assert not np.allclose(encode(m, x)[0], encode(m, x[::-1])[0])


def test_reparameterize_examples():
    mu, lv = Tensor(np.array([[1.0, -2.0]])), Tensor(np.zeros((1, 2)))
    assert reparameterize(mu, lv, None) is mu
    z = reparameterize(mu, Tensor(np.full((1, 2), -200.0)), np.random.default_rng(0))
    np.testing.assert_allclose(z.data, mu.data, atol=1e-30)


def test_reparameterize_moments():
    mu = Tensor(np.full((20000, 1), 1.5))
    lv = Tensor(np.full((20000, 1), np.log(4.0)))
    z = reparameterize(mu, lv, np.random.default_rng(3)).data
    # standard error of the mean is 2/sqrt(20000) ~ 0.014
    assert abs(z.mean() - 1.5) < 0.06 and abs(z.std() - 2.0) < 0.06


def test_decode_outputs():
    m = RvaeModel(4, hidden=5, latent=3, seed=0)
    p = decode(m, np.ones(3), 6)
    assert p.shape == (6, 4) and np.all((p > 0) & (p < 1))
    assert decode(m, np.ones(3), 1).shape == (1, 4)
    np.testing.assert_array_equal(decode(zero_model(), np.zeros(2), 3), 0.5)


def test_kl_zero_at_prior_and_closed_form():
    z = Tensor(np.zeros((2, 3)))
    np.testing.assert_array_equal(kl_divergence(z, z).data, 0.0)
    mu, lv = np.array([[0.5, -1.0]]), np.array([[0.2, -0.7]])
    s2 = np.exp(lv)
    oracle = 0.5 * np.sum(s2 + mu**2 - 1.0 - lv)
    np.testing.assert_allclose(kl_divergence(Tensor(mu), Tensor(lv)).data, [oracle], rtol=1e-12)


def test_reconstruction_is_ln2_per_feature_at_half():
    m = zero_model(F=4)
    x = np.random.default_rng(0).random((3, 4))
    recon, kl = m.instance_losses(collate([x]), None)
    np.testing.assert_allclose(recon.data, [4 * np.log(2)], rtol=1e-12)
    np.testing.assert_allclose(kl.data, [0.0])


def test_full_loss_gradients():
    m = RvaeModel(3, hidden=4, latent=2, layers=2, seed=5)
    batch = collate([np.random.default_rng(1).random((4, 3)), np.random.default_rng(2).random((2, 3))])
    params = dict(m.named_parameters())

    def f():
        return m.loss(batch, 0.7, np.random.default_rng(9))[0]

    errs = check_gradients(f, params)
    assert max(errs.values()) < 1e-5, errs


def test_padding_does_not_change_loss():
    m = RvaeModel(3, hidden=4, latent=2, seed=0)
    a = np.random.default_rng(1).random((2, 3))
    b = np.random.default_rng(2).random((6, 3))
    with no_grad():
        alone, _ = m.instance_losses(collate([a]), None)
        padded, _ = m.instance_losses(collate([a, b]), None)
    np.testing.assert_allclose(padded.data[0], alone.data[0], rtol=1e-12)


def test_scores_bounded_below_by_entropy():
    m = RvaeModel(5, hidden=6, latent=3, seed=0)
    x = np.random.default_rng(0).random((4, 5))
    recs = anomaly_scores(m, x)
    assert len(recs) == 4
    floor = binary_entropy(x).sum(axis=1)
    assert all(np.isfinite(r.score) and r.score >= f - 1e-12 for r, f in zip(recs, floor))
    with pytest.raises(ValueError):
        anomaly_scores(None, x)


def test_score_sequences_matches_single():
    m = RvaeModel(5, hidden=6, latent=3, seed=0)
    seqs = toy(n=5)
    batched = [r.score for r in score_sequences(m, seqs, batch_size=2)]
    single = [r.score for s in seqs for r in anomaly_scores(m, s)]
    np.testing.assert_allclose(batched, single, rtol=1e-10)


def test_training_reduces_loss_and_flags_perturbed_step():
    seqs = toy(n=40)
    m = RvaeModel(5, hidden=16, latent=4, seed=0)
    cfg = TrainConfig(epochs=25, batch_size=8, beta_final=0.1, beta_anneal_steps=50)
    m, tlog = train_semisupervised(m, seqs, cfg)
    losses = tlog.epoch_losses()
    assert losses[-1] < losses[0]
    x = seqs[0].copy()
    x[3] = 1.0 - x[3]
    s = [r.score for r in anomaly_scores(m, x)]
    base = [r.score for r in anomaly_scores(m, seqs[0])]
    assert s[3] > base[3] and s[3] == max(s)


def test_beta_schedule():
    cfg = TrainConfig(beta_final=1.0, beta_anneal_steps=500)
    assert beta_at(0, cfg) == 0.0 and beta_at(250, cfg) == 0.5
    assert beta_at(500, cfg) == 1.0 and beta_at(10_000, cfg) == 1.0


def test_same_seed_same_parameters():
    seqs = toy(n=12)
    cfg = TrainConfig(epochs=2, batch_size=4, seed=7)
    a, _ = train_semisupervised(RvaeModel(5, hidden=4, latent=2, seed=1), seqs, cfg)
    b, _ = train_semisupervised(RvaeModel(5, hidden=4, latent=2, seed=1), seqs, cfg)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and pa.data.tobytes() == pb.data.tobytes()


def test_empty_training_set_rejected():
    with pytest.raises(ValueError):
        train_semisupervised(RvaeModel(5, 4, 2), [], TrainConfig(epochs=1))


def test_margin_is_half_lambda_for_equal_errors():
    m = zero_model(F=3)
    x = np.random.default_rng(0).random((2, 3))
    loss, parts = source_loss(m, [x], [x], beta=0.0, margin_weight=2.0, rng=None)
    assert parts["margin"] == pytest.approx(0.5)
    assert loss.item() == pytest.approx(parts["recon"] - 2.0 * 0.5)


def test_zero_margin_weight_is_plain_vae_loss():
    m = RvaeModel(3, hidden=4, latent=2, seed=0)
    x = [np.random.default_rng(i).random((3, 3)) for i in range(3)]
    loss, _ = source_loss(m, x, x[:1], beta=0.3, margin_weight=0.0, rng=None)
    plain, _, _ = m.loss(collate(x), 0.3, None)
    assert loss.item() == pytest.approx(plain.item(), rel=1e-12)


def test_target_loss_counts_duplicates():
    m = RvaeModel(3, hidden=4, latent=2, seed=0)
    a, b = (np.random.default_rng(i).random((3, 3)) for i in range(2))
    ra, _, _ = m.loss(collate([a]), 0.0)
    rb, _, _ = m.loss(collate([b]), 0.0)
    dup, parts = target_loss(m, [a, b, a], 0.0, None)
    assert parts["m_t"] == 3
    assert dup.item() == pytest.approx((2 * ra.item() + rb.item()) / 3, rel=1e-12)


def test_carry_lowest():
    scores = np.array([5, 1, 9, 3, 7, 2, 8, 0, 6, 4], dtype=float)
    idx = carry_lowest(scores, 0.5)
    assert len(idx) == 5 and sorted(scores[idx]) == [0, 1, 2, 3, 4]
    assert len(carry_lowest(scores, 0.01)) == 1
    rng = np.random.default_rng(0)
    for _ in range(50):
        s = rng.random(rng.integers(1, 40))
        r = rng.uniform(0.01, 0.99)
        k = carry_lowest(s, r)
        rest = np.setdiff1d(np.arange(len(s)), k)
        assert len(k) == max(1, int(np.floor(r * len(s) + 1e-9)))
        assert rest.size == 0 or s[k].max() <= s[rest].min()


def test_transfer_update_counts_equal():
    seqs = toy(n=20)
    cfg = TrainConfig(epochs=2, batch_size=4, warmup_epochs=1)
    for fn in (train_transfer_with_label, train_transfer_without_label):
        _, tlog = fn(RvaeModel(5, hidden=4, latent=2), seqs[:12], [1 - s for s in seqs[:3]],
                     seqs[12:], cfg)
        assert tlog.source_updates == tlog.target_updates == 2 * 3  # ceil(12 / 4) per epoch


def test_transfer_rejects_empty_sets():
    seqs = toy(n=4)
    with pytest.raises(ValueError):
        train_transfer_with_label(RvaeModel(5, 4, 2), seqs, [], seqs, TrainConfig(epochs=1))


def test_mlp_baseline_scores_each_timestep():
    m = MlpVaeModel(5, hidden=(6, 6), latent=2, seed=0)
    x = toy(n=2)
    batch = collate([x[0], x[1][:3]])
    scores = m.timestep_scores(batch)
    assert np.isnan(scores[3:, 1]).all() and np.isfinite(scores[:, 0]).all()
    floor = binary_entropy(x[0]).sum(axis=1)
    assert np.all(scores[:, 0] >= floor - 1e-12)


@pytest.mark.parametrize("model", [RvaeModel(5, hidden=4, latent=2, seed=3),
                                   MlpVaeModel(5, hidden=(4,), latent=2, seed=3)])
def test_save_load_round_trip(tmp_path, model):
    save_model(tmp_path / "m.ckpt", model, {"note": "x"})
    back, meta = load_model(tmp_path / "m.ckpt")
    assert meta["note"] == "x" and type(back) is type(model)
    x = toy(n=1)[0]
    np.testing.assert_array_equal(back.timestep_scores(collate([x])),
                                  model.timestep_scores(collate([x])))


def test_bce_logits_matches_clamped_bce_in_interior():
    y = np.array([0.2, 0.9])
    logits = np.array([0.3, -1.2])
    p = 1 / (1 + np.exp(-logits))
    oracle = -(y * np.log(p) + (1 - y) * np.log(1 - p))
    np.testing.assert_allclose(T.bce_with_logits(Tensor(logits), y).data, oracle, rtol=1e-12)


def test_reparameterize_at_prior_returns_eps():
    rng_a, rng_b = np.random.default_rng(4), np.random.default_rng(4)
    z = reparameterize(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))), rng_a)
    np.testing.assert_array_equal(z.data, rng_b.standard_normal((2, 3)))


def test_without_label_carries_only_after_warmup(monkeypatch):
    from flowrvae.rvae import train as train_mod

    seen = []
    real = train_mod.target_loss

    def spy(model, seqs, beta, rng):
        seen.append(len(seqs))
        return real(model, seqs, beta, rng)

    monkeypatch.setattr(train_mod, "target_loss", spy)
    seqs = toy(n=24)
    cfg = TrainConfig(epochs=3, batch_size=4, warmup_epochs=1, r_s=0.5)
    # 8 source normals and 8 targets give 2 iterations per epoch
    train_transfer_without_label(RvaeModel(5, hidden=4, latent=2), seqs[:8], seqs[8:10],
                                 seqs[16:], cfg)
    per_epoch = [seen[i : i + 2] for i in range(0, len(seen), 2)]
    assert per_epoch[0] == [4, 4]  # warmup: M_t = batch size
    # after warmup the carried set restarts empty at each epoch
    assert per_epoch[1] == [4, 6] and per_epoch[2] == [4, 6]
