import hashlib
import json

import numpy as np
import pytest
from scipy.stats import spearmanr

from specbias import artifacts
from specbias.embedders import (
    DEFAULT_BANDS, AEArch, EmbeddingSet, MaskConfig, MaskedAEModel, TrainingDiverged,
    embed_ae, embed_bandpower, embed_logpsd, export_embeddings, import_embeddings,
    init_params, masked_loss_and_grads, sample_mask, train_masked_ae,
)
from specbias.optim import TrainConfig
from specbias.spectrum import EpochSet, Peak, SignalConfig, SpectralParams, SweepSpec, stream, sweep, synthesize

CFG = SignalConfig()


def epochs_of(params, n, seed=0):
    return EpochSet(np.array([synthesize(params, CFG, stream(seed, i)) for i in range(n)]), CFG.fs)


class TestLogPSD:
    def test_aperiodic_features_have_slope_minus_beta(self):
        emb = embed_logpsd(epochs_of(SpectralParams(beta=1.7, peaks=()), 50))
        f = np.array(emb.extra["freqs"])
        sel = (f >= 2) & (f <= 50)
        slope = np.polyfit(np.log10(f[sel]), emb.data.mean(axis=0)[sel], 1)[0]
        assert slope == pytest.approx(-1.7, abs=0.05)

    def test_offset_change_is_a_constant_shift(self):
        a = synthesize(SpectralParams(ap_offset=1.0, peaks=()), CFG, stream(3))
        b = synthesize(SpectralParams(ap_offset=1.6, peaks=()), CFG, stream(3))
        emb = embed_logpsd(EpochSet(np.vstack([a, b]), CFG.fs))
        f = np.array(emb.extra["freqs"])
        diff = (emb.data[1] - emb.data[0])[(f >= 1) & (f <= 55)]
        assert np.allclose(diff, 0.6, atol=1e-6)

    def test_mean_features_stable_under_phase_redraw(self):
        """Spread of the 50-draw mean feature across 20 independent re-draws stays below 0.05 per bin."""
        x = embed_logpsd(epochs_of(SpectralParams(), 1000, seed=9)).data
        means = x.reshape(20, 50, -1).mean(axis=1)
        assert means.std(axis=0, ddof=1).max() < 0.05

    def test_row_order_preserved(self):
        es = epochs_of(SpectralParams(), 4)
        rev = EpochSet(es.data[::-1].copy(), es.fs)
        assert np.array_equal(embed_logpsd(rev).data, embed_logpsd(es).data[::-1])

    def test_beta_sweep_ols_oracle(self):
        es, theta = sweep(SweepSpec("beta", 1.0, 2.0, n_samples=300))
        x = embed_logpsd(es).data
        design = np.column_stack([x, np.ones(len(x))])
        coef, *_ = np.linalg.lstsq(design, theta, rcond=None)
        resid = theta - design @ coef
        assert 1 - resid @ resid / np.sum((theta - theta.mean()) ** 2) >= 0.99

    def test_bins_and_rejections(self):
        emb = embed_logpsd(epochs_of(SpectralParams(), 2))
        f = np.array(emb.extra["freqs"])
        assert f[0] == 1.0 and f[-1] == 90.0 and emb.data.shape == (2, len(f))
        with pytest.raises(ValueError, match="too low"):
            embed_logpsd(EpochSet(np.zeros((2, 500)), 100.0))
        with pytest.raises(ValueError, match="single-channel"):
            embed_logpsd(EpochSet(np.zeros((2, 1000)), 200.0, n_channels=2))


class TestBandpower:
    def test_alpha_peak_raises_alpha_band(self):
        peaked = epochs_of(SpectralParams(peaks=(Peak(10.0, 3.0, 2.0),)), 1)
        flat = epochs_of(SpectralParams(peaks=()), 1)
        alpha = DEFAULT_BANDS.index((8.0, 13.0))
        assert embed_bandpower(peaked).data[0, alpha] > embed_bandpower(flat).data[0, alpha]

    def test_zero_signal_hits_floor(self):
        emb = embed_bandpower(EpochSet(np.zeros((1, 1000)), 200.0))
        assert np.allclose(emb.data, -12.0)

    def test_beta_band_monotone_in_20hz_amplitude(self):
        base = SpectralParams(peaks=(Peak(20.0, 1.0, 2.0),))
        es, theta = sweep(SweepSpec("a_osc", 0.1, 3.0, n_samples=100, base=base))
        beta_band = DEFAULT_BANDS.index((13.0, 30.0))
        rho = spearmanr(theta, embed_bandpower(es).data[:, beta_band])[0]
        assert rho > 0.95

    def test_band_validation(self):
        es = EpochSet(np.zeros((1, 1000)), 200.0)
        with pytest.raises(ValueError, match="no frequency bins"):
            embed_bandpower(es, bands=[(10.1, 10.2)])
        with pytest.raises(ValueError, match="inside"):
            embed_bandpower(es, bands=[(50.0, 120.0)])


def _numeric_grad(p, x, keep, name, idx, eps=1e-4):
    old = p[name][idx]
    p[name][idx] = old + eps
    up = masked_loss_and_grads(p, x, keep, with_grads=False)
    p[name][idx] = old - eps
    down = masked_loss_and_grads(p, x, keep, with_grads=False)
    p[name][idx] = old
    return (up - down) / (2 * eps)


class TestMaskedAE:
    def toy(self, seed=0, length=12):
        rng = np.random.default_rng(seed)
        p = init_params(length, AEArch(hidden=7, latent=3, init_scale=1.0), rng)
        for k in p:
            if k.endswith(".b"):
                p[k] = rng.normal(0, 0.3, p[k].shape)
        x = rng.normal(size=(3, length))
        keep = sample_mask(rng, 3, length, MaskConfig(patch_len=2))
        keep[0, :2] = 0.0  # at least one masked patch
        keep[:, -2:] = 1.0  # and one patch visible everywhere
        return p, x, keep

    def test_gradient_matches_finite_differences(self):
        p, x, keep = self.toy()
        _, grads = masked_loss_and_grads(p, x, keep)
        worst = 0.0
        for name, g in grads.items():
            for idx in np.ndindex(g.shape):
                num = _numeric_grad(p, x, keep, name, idx)
                denom = max(abs(num), abs(g[idx]), 1e-8)
                worst = max(worst, abs(num - g[idx]) / denom)
        assert worst < 1e-3

    def test_fully_visible_example_contributes_nothing(self):
        p, x, keep = self.toy()
        keep[2] = 1.0
        loss_all, g_all = masked_loss_and_grads(p, x, keep)
        loss_sub, g_sub = masked_loss_and_grads(p, x[:2], keep[:2])
        assert loss_all == pytest.approx(loss_sub, rel=1e-14)
        for k in g_all:
            assert np.allclose(g_all[k], g_sub[k], rtol=1e-12, atol=1e-15)

    def test_nothing_masked_gives_zero(self):
        p, x, _ = self.toy()
        loss, grads = masked_loss_and_grads(p, x, np.ones_like(x))
        assert loss == 0.0 and all(not g.any() for g in grads.values())

    def test_decoder_output_at_visible_index_is_ignored(self):
        p, x, keep = self.toy()
        j = int(np.flatnonzero(keep.all(axis=0))[0])
        before = masked_loss_and_grads(p, x, keep, with_grads=False)
        p["dec2.b"][j] += 100.0
        assert masked_loss_and_grads(p, x, keep, with_grads=False) == before

    def test_visible_input_acts_only_through_encoder(self):
        p, x, keep = self.toy()
        j = int(np.flatnonzero(keep.all(axis=0))[0])
        p["enc1.w"][j] = 0.0
        before = masked_loss_and_grads(p, x, keep, with_grads=False)
        x2 = x.copy()
        x2[:, j] += 5.0
        assert masked_loss_and_grads(p, x2, keep, with_grads=False) == before

    def test_mask_patches(self):
        keep = sample_mask(stream(0), 4, 100, MaskConfig(patch_len=25))
        blocks = keep.reshape(4, 4, 25)
        assert np.all(blocks.min(axis=2) == blocks.max(axis=2))
        with pytest.raises(ValueError, match="divide"):
            sample_mask(stream(0), 1, 99, MaskConfig(patch_len=25))

    def test_mask_config_validation(self):
        with pytest.raises(ValueError):
            MaskConfig(mask_frac=1.0)
        with pytest.raises(ValueError):
            MaskConfig(patch_len=0)

    def test_identity_capable_arch_learns_toy_set(self):
        rng = np.random.default_rng(0)
        t = np.arange(20)
        x = np.array([a * np.sin(2 * np.pi * t / 20 + ph)
                      for a, ph in zip(rng.uniform(0.5, 2, 50), rng.uniform(0, 2 * np.pi, 50))])
        model = train_masked_ae(EpochSet(x, 100.0), MaskConfig(patch_len=1), AEArch(hidden=32, latent=20),
                                TrainConfig(epochs=300, batch=5, lr=1e-2))
        scaled = x / model.input_scale
        assert model.train_log[-1] < 0.1 * scaled.var()
        assert model.train_log[-1] < model.train_log[0]

    def test_training_is_deterministic_and_embeds(self, tmp_path):
        es = epochs_of(SpectralParams(), 40)
        kw = dict(mask=MaskConfig(patch_len=50), arch=AEArch(hidden=16, latent=4),
                  train=TrainConfig(epochs=2, batch=4, lr=1e-3))
        a, b = train_masked_ae(es, **kw), train_masked_ae(es, **kw)
        for k in a.params:
            assert a.params[k].tobytes() == b.params[k].tobytes()
        emb = embed_ae(a, es)
        assert emb.data.shape == (40, 4) and emb.embedder_id == "masked_ae"
        assert np.array_equal(emb.data, embed_ae(a, es).data)
        a.save(tmp_path / "m.npz")
        back = MaskedAEModel.load(tmp_path / "m.npz")
        assert np.array_equal(embed_ae(back, es).data, emb.data)
        assert embed_ae(back, es).config_digest == emb.config_digest

    def test_zero_encoder_returns_latent_bias(self):
        es = epochs_of(SpectralParams(), 40)
        model = train_masked_ae(es, MaskConfig(), AEArch(hidden=8, latent=3),
                                TrainConfig(epochs=1, batch=4, lr=1e-3))
        for k in ("enc1.w", "enc1.b", "enc2.w"):
            model.params[k][...] = 0.0
        model.params["enc2.b"][:] = [0.5, -1.0, 2.0]
        emb = embed_ae(model, es)
        assert np.allclose(emb.data, [0.5, -1.0, 2.0])
        assert emb.extra["latent_bias"] == [0.5, -1.0, 2.0]

    def test_row_scaling_option(self):
        es = epochs_of(SpectralParams(), 40)
        model = train_masked_ae(es, MaskConfig(), AEArch(hidden=8, latent=3, input_scaling="row"),
                                TrainConfig(epochs=1, batch=4, lr=1e-3))
        z1 = embed_ae(model, es).data
        z2 = embed_ae(model, EpochSet(es.data * 7.0, es.fs)).data
        assert np.allclose(z1, z2)

    def test_rejections(self):
        es = epochs_of(SpectralParams(), 30)
        with pytest.raises(ValueError, match="at least"):
            train_masked_ae(es, train=TrainConfig(batch=64))
        model = train_masked_ae(es, MaskConfig(), AEArch(hidden=4, latent=2),
                                TrainConfig(epochs=1, batch=3, lr=1e-3))
        with pytest.raises(ValueError, match="does not match"):
            embed_ae(model, EpochSet(np.zeros((2, 500)), 200.0))

    def test_divergence_reports_step(self):
        es = EpochSet(np.full((20, 100), 1e200), 200.0)
        with pytest.raises(TrainingDiverged) as err, np.errstate(all="ignore"):
            train_masked_ae(es, MaskConfig(patch_len=10), AEArch(hidden=4, latent=2, input_scaling="none"),
                            TrainConfig(epochs=1, batch=2, lr=1e-3))
        assert err.value.step == 0


class TestEmbeddingFiles:
    def test_round_trip_bit_identical(self, tmp_path):
        data = np.random.default_rng(0).normal(size=(10, 4)).astype(np.float32).astype(float)
        emb = EmbeddingSet(data, "ext", "abc")
        export_embeddings(emb, tmp_path / "e")
        back = import_embeddings(tmp_path / "e.emb.f32")
        assert back.data.tobytes() == data.tobytes()
        assert back.embedder_id == "ext" and back.config_digest == "abc"

    def test_row_count_mismatch_names_counts(self, tmp_path):
        export_embeddings(EmbeddingSet(np.ones((10, 4)), "ext", "abc"), tmp_path / "e")
        payload = tmp_path / "e.emb.f32"
        payload.write_bytes(payload.read_bytes()[: 9 * 16])
        with pytest.raises(artifacts.ArtifactError, match="expects 10 rows, found 9"):
            import_embeddings(payload)

    def test_truncated_payload(self, tmp_path):
        export_embeddings(EmbeddingSet(np.ones((10, 4)), "ext", "abc"), tmp_path / "e")
        payload = tmp_path / "e.emb.f32"
        payload.write_bytes(payload.read_bytes()[:-2])
        with pytest.raises(artifacts.ArtifactError, match="truncated"):
            import_embeddings(payload)

    def test_non_finite_row_reported(self, tmp_path):
        export_embeddings(EmbeddingSet(np.ones((6, 2)), "ext", "abc"), tmp_path / "e")
        payload, manifest_path = tmp_path / "e.emb.f32", tmp_path / "e.emb.json"
        mat = np.ones((6, 2), dtype="<f4")
        mat[4, 1] = np.nan
        payload.write_bytes(mat.tobytes())
        manifest = json.loads(manifest_path.read_text())
        manifest["payload_sha256"] = hashlib.sha256(mat.tobytes()).hexdigest()
        manifest_path.write_text(json.dumps(manifest))
        with pytest.raises(artifacts.ArtifactError, match="row 4"):
            import_embeddings(payload)

    def test_in_memory_validation(self):
        with pytest.raises(ValueError, match="row 1"):
            EmbeddingSet(np.array([[0.0], [np.inf]]), "x", "y")
