import numpy as np
import pytest

from dirsep.separation import (
    SeparationMask,
    apply_mask,
    ideal_binary_mask,
    ideal_ratio_mask,
    load_mask,
    save_mask,
    write_sources,
)
from dirsep.spectral import AudioClip, ComplexGrid, StftConfig, normalize_magnitude, read_wav, stft

CFG = StftConfig(256, 64)


@pytest.fixture
def mixture(rng):
    return stft(AudioClip(rng.standard_normal((3, 4000)), 16000), CFG)


def random_grid(rng, shape=(129, 20)):
    values = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return ComplexGrid(values, CFG, 16000, 1000)


class TestSeparationMask:
    def test_valid(self):
        m = SeparationMask(np.full((2, 3, 4), 0.5))
        assert m.n_sources == 2 and m.shape == (3, 4)

    @pytest.mark.parametrize("bad", [np.full((2, 3, 4), 0.6), np.full((3, 4), 1.0),
                                     np.stack([np.full((3, 4), 1.5), np.full((3, 4), -0.5)])])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            SeparationMask(bad)


class TestApplyMask:
    def test_uniform_mask_splits_evenly(self, mixture):
        mix = mixture.values.shape
        outputs = apply_mask(mixture, np.full((2,) + mix[1:], 0.5))
        reference = apply_mask(mixture, np.ones((1,) + mix[1:]))[0].samples
        for clip in outputs:
            np.testing.assert_allclose(clip.samples, reference / 2, atol=1e-6)

    def test_all_ones_reproduces_channel(self, rng):
        x = rng.standard_normal((3, 4000))
        grid = stft(AudioClip(x, 16000), CFG)
        (out,) = apply_mask(grid, np.ones((1,) + grid.shape), channel=2)
        assert out.channels == 1 and len(out) == 4000
        np.testing.assert_allclose(out.samples[0], x[2], atol=1e-6)

    def test_binary_halves_sum_to_mixture(self, rng):
        x = rng.standard_normal(4000)
        grid = stft(AudioClip(x, 16000), CFG)
        low = np.zeros(grid.shape)
        low[:64] = 1.0
        outputs = apply_mask(grid, np.stack([low, 1 - low]))
        np.testing.assert_allclose(outputs[0].samples + outputs[1].samples, x[None], atol=1e-6)

    def test_spectrogram_magnitude_equivalent(self, mixture, rng):
        m = rng.uniform(size=(2,) + mixture.shape)
        m /= m.sum(axis=0)
        spec = normalize_magnitude(mixture)
        a = apply_mask(mixture, m)
        b = apply_mask(mixture, m, spec)
        for x, y in zip(a, b):
            np.testing.assert_allclose(x.samples, y.samples, atol=1e-9)

    def test_conservation_of_magnitude(self, mixture, rng):
        m = rng.uniform(size=(3,) + mixture.shape)
        m /= m.sum(axis=0)
        mag = np.abs(mixture.values[0])
        np.testing.assert_allclose((m * mag).sum(axis=0), mag, rtol=1e-12)

    def test_shape_mismatch(self, mixture):
        with pytest.raises(ValueError, match="does not match"):
            apply_mask(mixture, np.ones((1, 10, 10)))


class TestOracleMasks:
    def test_irm_equal_magnitudes(self, rng):
        g = random_grid(rng)
        m = ideal_ratio_mask([g, g, g]).m
        np.testing.assert_allclose(m, 1 / 3, rtol=1e-15)

    def test_irm_silent_source(self, rng):
        g = random_grid(rng)
        silent = ComplexGrid(np.zeros_like(g.values), CFG, 16000, 1000)
        m = ideal_ratio_mask([g, silent]).m
        np.testing.assert_array_equal(m[0], 1.0)
        np.testing.assert_array_equal(m[1], 0.0)

    def test_irm_definition(self, rng):
        grids = [random_grid(rng) for _ in range(3)]
        mags = np.stack([np.abs(g.values[0]) for g in grids])
        np.testing.assert_allclose(ideal_ratio_mask(grids).m, mags / mags.sum(axis=0),
                                   rtol=0, atol=1e-12)

    def test_irm_empty_bins_uniform(self):
        zero = ComplexGrid(np.zeros((129, 3)), CFG, 16000, 300)
        np.testing.assert_array_equal(ideal_ratio_mask([zero, zero]).m, 0.5)

    def test_ibm_dominance(self, rng):
        grids = [random_grid(rng) for _ in range(3)]
        mags = np.stack([np.abs(g.values[0]) for g in grids])
        m = ideal_binary_mask(grids).m
        np.testing.assert_array_equal(m, (mags == mags.max(axis=0)).astype(float))
        assert set(np.unique(m)) <= {0.0, 1.0}
        np.testing.assert_array_equal(m.sum(axis=0), 1.0)

    def test_ibm_ties_and_empty_bins_go_to_source_zero(self, rng):
        g = random_grid(rng)
        m = ideal_binary_mask([g, g]).m
        np.testing.assert_array_equal(m[0], 1.0)
        zero = ComplexGrid(np.zeros((129, 3)), CFG, 16000, 300)
        np.testing.assert_array_equal(ideal_binary_mask([zero, zero]).m[0], 1.0)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError, match="mismatched"):
            ideal_ratio_mask([random_grid(rng), random_grid(rng, (129, 21))])


class TestIO:
    def test_mask_round_trip(self, tmp_path, rng):
        m = rng.uniform(size=(2, 5, 7))
        m /= m.sum(axis=0)
        save_mask(tmp_path / "mask.bin", m)
        assert (tmp_path / "mask.bin.json").exists()
        assert (tmp_path / "mask.bin").stat().st_size == m.size * 8
        np.testing.assert_array_equal(load_mask(tmp_path / "mask.bin").m, m)

    def test_write_sources(self, tmp_path, rng):
        clips = [AudioClip(rng.uniform(-0.5, 0.5, 800), 16000) for _ in range(2)]
        paths = write_sources(tmp_path / "out", clips, "FLOAT")
        assert [p.name for p in paths] == ["source_0.wav", "source_1.wav"]
        np.testing.assert_allclose(read_wav(paths[1]).samples, clips[1].samples, atol=1e-7)

    def test_write_sources_type_checked(self, tmp_path):
        with pytest.raises(TypeError):
            write_sources(tmp_path, [np.zeros(10)])
