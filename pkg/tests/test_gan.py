import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from edgeseg.gan import (Checkpoint, DiscriminatorCollapse, FeatureSet, GanConfig,
                         RandomConvEmbedder, adversarial_loss, adversarial_loss_logits,
                         build_gan, compute_fid, feature_matching_loss, load_checkpoint,
                         select_checkpoint, total_generator_loss, train_gan, translate,
                         translate_batch)
from edgeseg.gan.training import read_log
from edgeseg.toy import gan_smoke_pairs
from helpers import D64, autograd, check_grad, fid_oracle, standardised


# adversarial loss ------------------------------------------------------------------

def test_indifference_point():
    half = torch.full((4, 4), 0.5, dtype=D64)
    loss_d, loss_g = adversarial_loss(half, half, "log")
    assert loss_d.item() == pytest.approx(1.3863, abs=1e-4)
    assert loss_d.item() == pytest.approx(2 * math.log(2), abs=1e-12)
    assert loss_g.item() == pytest.approx(math.log(2), abs=1e-12)


def test_perfect_discriminator_limit():
    prev = math.inf
    for eps in (1e-2, 1e-4, 1e-6, 1e-8):
        loss_d, _ = adversarial_loss(torch.tensor([1 - eps], dtype=D64), torch.tensor([eps], dtype=D64))
        assert loss_d.item() < prev
        prev = loss_d.item()
    assert prev < 1e-7


@pytest.mark.parametrize("bad", [0.0, 1.0, -0.2, 1.5])
def test_log_form_rejects_out_of_range(bad):
    ok = torch.tensor([0.5])
    with pytest.raises(ValueError):
        adversarial_loss(torch.tensor([bad]), ok)
    with pytest.raises(ValueError):
        adversarial_loss(ok, torch.tensor([bad]))


def test_unknown_form():
    with pytest.raises(ValueError):
        adversarial_loss(torch.tensor([0.5]), torch.tensor([0.5]), "hinge")


def test_least_squares_values():
    real = torch.tensor([1.0, 0.5], dtype=D64)
    fake = torch.tensor([0.0, 0.5], dtype=D64)
    loss_d, loss_g = adversarial_loss(real, fake, "least_squares")
    assert loss_d.item() == pytest.approx(0.125 + 0.125)
    assert loss_g.item() == pytest.approx(0.5 + 0.125)


@settings(max_examples=50)
@given(st.lists(st.floats(-6, 6), min_size=6, max_size=6))
def test_logit_form_matches_probability_form(vals):
    z = torch.tensor(vals, dtype=D64)
    a = adversarial_loss_logits(z[:3], z[3:], "log")
    b = adversarial_loss(torch.sigmoid(z[:3]), torch.sigmoid(z[3:]), "log")
    for x, y in zip(a, b):
        assert x.item() == pytest.approx(y.item(), rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("form", ["log", "least_squares"])
@pytest.mark.parametrize("which", [0, 1])
def test_adversarial_gradients(form, which):
    rng = np.random.default_rng(10 + which)
    for _ in range(20):
        if form == "log":
            x = rng.uniform(0.05, 0.95, size=8)
        else:
            x = rng.normal(0.5, 1.0, size=8)
        err = check_grad(lambda t: adversarial_loss(t[:4], t[4:], form)[which], x)
        assert err < 1e-4


def test_generator_gradient_wrt_fake_score():
    # non-saturating loss: d/ds (-log s) averaged over n scores = -1 / (n s)
    s = np.array([0.2, 0.7, 0.4])
    g = autograd(lambda t: adversarial_loss(torch.full((2,), 0.5, dtype=D64), t)[1], s)
    np.testing.assert_allclose(g, -1.0 / (3 * s), rtol=1e-12)


# feature matching ---------------------------------------------------------------------

def test_fm_identical_is_zero():
    f = [torch.randn(2, 3, 4, 4), torch.randn(2, 5, 2, 2)]
    assert feature_matching_loss(f, [x.clone() for x in f]).item() == 0.0


def test_fm_hand_example():
    real = [torch.ones(4, dtype=D64)]
    fake = [torch.zeros(4, dtype=D64)]
    assert feature_matching_loss(real, fake).item() == 1.0


def test_fm_tripling_gap_triples_loss():
    rng = np.random.default_rng(0)
    real = [torch.tensor(rng.normal(size=(2, 3, 4)), dtype=D64), torch.tensor(rng.normal(size=(2, 6)), dtype=D64)]
    gap = [torch.tensor(rng.normal(size=r.shape), dtype=D64) for r in real]
    one = feature_matching_loss(real, [r + g for r, g in zip(real, gap)]).item()
    three = feature_matching_loss(real, [r + 3 * g for r, g in zip(real, gap)]).item()
    assert three == pytest.approx(3 * one, rel=1e-12)


def test_fm_per_layer_normalisation():
    # layer sizes differ, so each layer is normalised by its own unit count
    real = [torch.zeros(2, dtype=D64), torch.zeros(8, dtype=D64)]
    fake = [torch.full((2,), 2.0, dtype=D64), torch.full((8,), 1.0, dtype=D64)]
    assert feature_matching_loss(real, fake).item() == 3.0


def test_fm_shape_errors():
    with pytest.raises(ValueError):
        feature_matching_loss([torch.zeros(3)], [torch.zeros(4)])
    with pytest.raises(ValueError):
        feature_matching_loss([torch.zeros(3)], [torch.zeros(3), torch.zeros(3)])
    with pytest.raises(ValueError):
        feature_matching_loss([], [])


def test_fm_gradients():
    rng = np.random.default_rng(20)
    shapes = [(2, 3), (4,), (1, 2, 2)]
    sizes = [int(np.prod(s)) for s in shapes]
    real = [torch.tensor(rng.normal(size=s), dtype=D64) for s in shapes]

    def f(t):
        parts = torch.split(t, sizes)
        return feature_matching_loss(real, [p.reshape(s) for p, s in zip(parts, shapes)])

    for _ in range(20):
        x = np.concatenate([r.numpy().ravel() for r in real])
        # stay well away from the kinks of |.|
        x = x + rng.choice([-1, 1], size=x.size) * rng.uniform(0.1, 1.0, size=x.size)
        assert check_grad(f, x) < 1e-4


# total loss -------------------------------------------------------------------------------

def test_total_lambda_zero_is_adv_sum():
    adv = [torch.tensor(0.5), torch.tensor(0.25), torch.tensor(1.0)]
    fm = [torch.tensor(3.0)] * 3
    assert total_generator_loss(adv, fm, 0.0).item() == 1.75


def test_total_default_lambda_is_ten():
    adv = [torch.tensor(0.0)]
    fm = [torch.tensor(1.0)]
    assert total_generator_loss(adv, fm).item() == 10.0


@settings(max_examples=100)
@given(st.lists(st.integers(-512, 512), min_size=6, max_size=6), st.integers(0, 64))
def test_total_exactly_linear_in_lambda(ints, c_int):
    # dyadic rationals keep every sum exact in binary floating point
    adv = [torch.tensor(v / 64, dtype=D64) for v in ints[:3]]
    fm = [torch.tensor(abs(v) / 64, dtype=D64) for v in ints[3:]]
    c = c_int / 8

    def total(lam):
        return total_generator_loss(adv, fm, lam).item()

    assert total(2 * c) - total(0) == 2 * (total(c) - total(0))


def test_total_three_identical_discriminators():
    adv, fm = torch.tensor(0.7, dtype=D64), torch.tensor(0.3, dtype=D64)
    one = total_generator_loss([adv], [fm], 10.0).item()
    three = total_generator_loss([adv] * 3, [fm] * 3, 10.0).item()
    assert three == pytest.approx(3 * one, rel=1e-15)


def test_total_length_mismatch():
    with pytest.raises(ValueError):
        total_generator_loss([torch.tensor(1.0)] * 3, [torch.tensor(1.0)] * 2)


def test_total_gradients():
    rng = np.random.default_rng(30)

    def f(t):
        # three discriminators: fake scores (2 each) and fake features (3 each)
        adv, fm = [], []
        for k in range(3):
            s = t[5 * k:5 * k + 2]
            feats = t[5 * k + 2:5 * k + 5]
            adv.append(adversarial_loss(torch.full((2,), 0.6, dtype=D64), s, "log")[1])
            fm.append(feature_matching_loss([torch.zeros(3, dtype=D64)], [feats]))
        return total_generator_loss(adv, fm, 10.0)

    for _ in range(20):
        x = np.empty(15)
        for k in range(3):
            x[5 * k:5 * k + 2] = rng.uniform(0.1, 0.9, 2)
            x[5 * k + 2:5 * k + 5] = rng.choice([-1, 1], 3) * rng.uniform(0.1, 1.0, 3)
        assert check_grad(f, x) < 1e-4


# FID ---------------------------------------------------------------------------------

def test_fid_identical_sets():
    x = np.random.default_rng(0).normal(size=(50, 8))
    assert abs(compute_fid(FeatureSet(x), FeatureSet(x.copy()))) < 1e-6


def test_fid_1d_closed_form():
    rng = np.random.default_rng(1)
    a = standardised(rng, 40)            # mean 0, variance 1
    b = 1.0 + 2.0 * standardised(rng, 60)  # mean 1, variance 4
    assert compute_fid(FeatureSet(a), FeatureSet(b)) == pytest.approx(2.0, abs=1e-9)


def test_fid_symmetric_nonnegative_and_matches_sqrtm():
    rng = np.random.default_rng(2)
    for _ in range(100):
        d = int(rng.integers(1, 6))
        a = rng.normal(rng.normal(size=d), rng.uniform(0.5, 2), size=(int(rng.integers(d + 1, 40)), d))
        b = rng.normal(rng.normal(size=d), rng.uniform(0.5, 2), size=(int(rng.integers(d + 1, 40)), d))
        ab = compute_fid(FeatureSet(a), FeatureSet(b))
        ba = compute_fid(FeatureSet(b), FeatureSet(a))
        assert ab >= 0
        assert abs(ab - ba) < 1e-9
        assert ab == pytest.approx(max(fid_oracle(a, b), 0.0), rel=1e-6, abs=1e-8)


def test_fid_degenerate_sets_non_negative():
    rng = np.random.default_rng(3)
    for _ in range(20):
        # rank-deficient covariances exercise the eigenvalue clamp
        base = rng.normal(size=(30, 2))
        a = base @ rng.normal(size=(2, 5))
        assert compute_fid(FeatureSet(a), FeatureSet(a + 1e-9 * rng.normal(size=a.shape))) >= 0


def test_fid_needs_enough_rows():
    with pytest.raises(ValueError):
        compute_fid(FeatureSet(np.zeros((4, 4))), FeatureSet(np.zeros((10, 4))))
    with pytest.raises(ValueError):
        compute_fid(FeatureSet(np.zeros((10, 3))), FeatureSet(np.zeros((10, 4))))


def test_feature_set_rejects_non_finite():
    with pytest.raises(ValueError):
        FeatureSet(np.array([[0.0, np.nan]]))


def test_fid_depends_only_on_features():
    rng = np.random.default_rng(4)
    imgs_a = [rng.random((16, 16)) for _ in range(20)]
    imgs_b = [rng.random((16, 16)) ** 2 for _ in range(20)]
    emb = RandomConvEmbedder(dim=4, seed=0)
    fa, fb = emb.features(imgs_a), emb.features(imgs_b)
    assert fa.extractor_id == "randconv-d4-s0"
    assert compute_fid(fa, fb) == compute_fid(FeatureSet(fa.matrix.copy(), "x"), FeatureSet(fb.matrix.copy(), "y"))
    again = RandomConvEmbedder(dim=4, seed=0).features(imgs_a)
    np.testing.assert_array_equal(again.matrix, fa.matrix)


# networks -----------------------------------------------------------------------------

def test_generator_shape_and_range():
    b = build_gan(GanConfig(image_size=64))
    out = b.generator(torch.rand(2, 1, 64, 64))
    assert out.shape == (2, 1, 64, 64)
    assert out.min() >= 0 and out.max() <= 1


def test_discriminator_pyramid():
    b = build_gan(GanConfig(image_size=64))
    x = torch.rand(1, 2, 64, 64)
    pyr = b.discriminator.pyramid(x)
    assert [p.shape[-1] for p in pyr] == [64, 32, 16]
    torch.testing.assert_close(pyr[1], torch.nn.functional.avg_pool2d(x, 3, 2, 1, count_include_pad=False))
    outs = b.discriminator(x)
    assert len(outs) == 3 and all(isinstance(o, list) for o in outs)


def test_parameter_count_grows_with_base_channels():
    counts = [sum(p.numel() for p in build_gan(GanConfig(base_channels=c)).generator.parameters())
              for c in (4, 8, 16)]
    assert counts[0] < counts[1] < counts[2]


@pytest.mark.parametrize("kwargs", [
    {"num_discriminators": 0}, {"lambda_fm": -1.0}, {"adv_loss_form": "wgan"},
    {"image_size": 48}, {"image_size": 8, "n_downsample": 2}, {"epochs": 0},
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        GanConfig(**kwargs)


# training -----------------------------------------------------------------------------

SMOKE = dict(image_size=8, base_channels=8, n_downsample=1, n_blocks=1, d_layers=1,
             batch_size=4, fid_dim=8)


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("gan")
    pairs = gan_smoke_pairs(np.random.default_rng(0), 60)
    cfg = GanConfig(epochs=3, **SMOKE)
    bundle, cks, rows = train_gan(pairs, cfg, np.random.default_rng(1), out_dir=out)
    return cfg, pairs, bundle, cks, rows, out


def test_checkpoint_count_equals_epochs(smoke_run):
    cfg, _, _, cks, rows, out = smoke_run
    assert [c.epoch for c in cks] == [1, 2, 3]
    assert [r["epoch"] for r in rows] == [0, 1, 2, 3]
    assert sorted(p.name for p in out.glob("ckpt_epoch*.pt")) == [f"ckpt_epoch{e:03d}.pt" for e in (1, 2, 3)]
    logged = read_log(out / "gan_log.tsv")
    assert [r["fid"] for r in logged] == [r["fid"] for r in rows]


def test_epoch_one_losses_deterministic(smoke_run):
    cfg, pairs, _, _, rows, _ = smoke_run
    again = train_gan(pairs, GanConfig(epochs=1, **SMOKE), np.random.default_rng(1))[2]
    assert again[1] == rows[1]


def test_checkpoint_round_trip(smoke_run):
    cfg, pairs, bundle, cks, _, out = smoke_run
    loaded, ck = load_checkpoint(out / "ckpt_epoch003.pt")
    assert ck.epoch == 3 and ck.fid == cks[-1].fid
    d = pairs[0][0]
    np.testing.assert_array_equal(translate(loaded, d), translate(bundle, d))


def test_translate_contracts(smoke_run):
    _, pairs, bundle, _, _, _ = smoke_run
    ds = [p[0] for p in pairs[:5]]
    np.testing.assert_array_equal(translate(bundle, ds[0]), translate(bundle, ds[0]))
    zero = translate(bundle, np.zeros((8, 8)))
    assert zero.shape == (8, 8) and zero.min() >= 0 and zero.max() <= 1
    batch = translate_batch(bundle, ds)
    for d, img in zip(ds, batch):
        np.testing.assert_array_equal(img, translate(bundle, d))
    with pytest.raises(ValueError):
        translate(bundle, np.zeros((16, 16)))


def test_train_gan_input_errors():
    cfg = GanConfig(epochs=1, **SMOKE)
    pairs = gan_smoke_pairs(np.random.default_rng(0), 7)
    with pytest.raises(ValueError):
        train_gan(pairs, cfg, np.random.default_rng(0))
    with pytest.raises(ValueError):
        # 12 pairs leave 2 for validation, too few for 8-dimensional FID
        train_gan(gan_smoke_pairs(np.random.default_rng(0), 12), cfg, np.random.default_rng(0))


def test_collapse_guard():
    cfg = GanConfig(epochs=5, **SMOKE)
    pairs = gan_smoke_pairs(np.random.default_rng(0), 50)
    # any positive loss counts as collapsed when the threshold is huge
    with pytest.raises(DiscriminatorCollapse):
        train_gan(pairs, cfg, np.random.default_rng(0), collapse_eps=1e9)


def test_select_checkpoint_rules():
    ck = lambda e, f: Checkpoint(e, {}, f)  # noqa: E731
    assert select_checkpoint([ck(4, 1.0)]) == 4
    assert select_checkpoint([ck(e, 10.0 - e) for e in range(1, 8)]) == 7
    assert select_checkpoint([ck(1, 2.0), ck(2, 1.0), ck(3, 1.0)]) == 2
    with pytest.raises(ValueError):
        select_checkpoint([])


def test_select_checkpoint_recomputes(smoke_run):
    cfg, pairs, bundle, cks, _, _ = smoke_run
    val = pairs[:20]
    emb = RandomConvEmbedder(cfg.fid_dim, seed=cfg.seed)
    real = emb.features([p[1] for p in val])
    fids = []
    for c in cks:
        bundle.generator.load_state_dict(c.generator_state)
        fids.append(compute_fid(emb.features(translate_batch(bundle, [p[0] for p in val])), real))
    # stored values are deliberately scrambled; only the recomputed ones may count
    scrambled = [Checkpoint(c.epoch, c.generator_state, -c.epoch) for c in cks]
    got = select_checkpoint(scrambled, [p[0] for p in val], [p[1] for p in val], emb, bundle)
    assert got == cks[int(np.argmin(fids))].epoch
