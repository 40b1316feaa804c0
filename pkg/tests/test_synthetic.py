import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, settings
from hypothesis import strategies as st

from pulsecan import synthetic as syn


def spec(label="real", **kw):
    base = dict(
        identity_id="id000", label=label,
        pulse=syn.PulseParams(heart_rate=1.2, amplitude=0.02, phase=0.4),
        seed=7, duration=2.0, fps=15, frame_side=32,
    )
    base.update(kw)
    return syn.SyntheticVideoSpec(**base)


class TestBvpSignal:
    def test_periodicity(self):
        p = syn.PulseParams(heart_rate=1.5, amplitude=0.01, phase=0.3)
        t = np.linspace(0.0, 2.0, 50)
        period = 1.0 / p.heart_rate
        assert np.max(np.abs(syn.bvp_signal(t, p) - syn.bvp_signal(t + period, p))) < 1e-9

    def test_harmonic_decomposition(self):
        p = syn.PulseParams(heart_rate=1.0, amplitude=0.01, phase=0.0)
        t = np.array([0.125])
        want = np.sin(2 * np.pi * 0.125) + 0.5 * np.sin(4 * np.pi * 0.125)
        assert np.isclose(syn.bvp_signal(t, p)[0], want, atol=1e-15)

    @given(st.floats(0.7, 4.0), st.floats(0.0, 2 * np.pi))
    @settings(max_examples=25, deadline=None)
    def test_amplitude_bound(self, hr, phase):
        p = syn.PulseParams(heart_rate=hr, amplitude=0.01, phase=phase)
        vals = syn.bvp_signal(np.linspace(0, 10, 2000), p)
        assert np.max(np.abs(vals)) <= 1.5 + 1e-12

    def test_out_of_band_heart_rate_rejected(self):
        with pytest.raises(ValueError):
            syn.PulseParams(heart_rate=0.5, amplitude=0.01)
        with pytest.raises(ValueError):
            syn.PulseParams(heart_rate=4.5, amplitude=0.01)


class TestFaceMask:
    def test_center_inside_corners_outside(self):
        mask = syn.face_ellipse_mask(32)
        assert mask[16, 16]
        assert not mask[0, 0] and not mask[31, 31]

    def test_vertical_symmetry(self):
        mask = syn.face_ellipse_mask(31)
        assert np.array_equal(mask, mask[:, ::-1])
        assert np.array_equal(mask, mask[::-1, :])

    def test_area_matches_ellipse(self):
        side = 200
        mask = syn.face_ellipse_mask(side)
        want = np.pi * (0.38 * side) * (0.30 * side)
        assert abs(mask.sum() - want) / want < 0.01


class TestRenderVideo:
    def test_deterministic(self):
        a = syn.render_video(spec())
        b = syn.render_video(spec())
        assert a.frames.tobytes() == b.frames.tobytes()
        assert np.array_equal(a.pulse_truth, b.pulse_truth)

    def test_frame_count_and_extent(self):
        seq = syn.render_video(spec(duration=2.0, fps=15, frame_side=32))
        assert seq.frames.shape == (30, 32, 32, 3)
        assert seq.fps == 15

    def test_fake_pulse_truth_is_zero(self):
        seq = syn.render_video(spec(label="fake"))
        assert not seq.pulse_truth.any()

    def test_real_pulse_truth_is_bvp(self):
        s = spec()
        seq = syn.render_video(s)
        times = np.arange(30) / 15
        assert np.allclose(seq.pulse_truth, syn.bvp_signal(times, s.pulse))

    def test_zero_amplitude_labels_pixel_identical(self):
        pulse = syn.PulseParams(heart_rate=1.2, amplitude=0.0)
        real = syn.render_video(spec(label="real", pulse=pulse))
        fake = syn.render_video(spec(label="fake", pulse=pulse))
        assert real.frames.tobytes() == fake.frames.tobytes()

    def test_noise_free_fake_is_static(self):
        seq = syn.render_video(spec(label="fake", noise_std=0.0))
        assert np.all(seq.frames == seq.frames[0])

    def test_pulse_stays_inside_face_region(self):
        pulse = syn.PulseParams(heart_rate=1.2, amplitude=0.05)
        real = syn.render_video(spec(label="real", pulse=pulse, noise_std=0.0))
        fake = syn.render_video(spec(label="fake", pulse=pulse, noise_std=0.0))
        diff = real.frames.astype(int) != fake.frames.astype(int)
        outside = ~syn.face_ellipse_mask(32)
        assert not diff[:, outside, :].any()
        assert diff.any()

    def test_background_pulse_reaches_border_for_fake(self):
        pulse = syn.PulseParams(heart_rate=1.2, amplitude=0.05)
        plain = syn.render_video(spec(label="fake", pulse=pulse, noise_std=0.0))
        with_bg = syn.render_video(spec(label="fake", pulse=pulse, noise_std=0.0,
                                        background_pulse=True))
        diff = plain.frames.astype(int) != with_bg.frames.astype(int)
        strip = syn.border_strip_mask(32)
        assert diff[:, strip, :].any()
        assert not diff[:, ~strip, :].any()

    def test_green_channel_tracks_bvp(self):
        s = spec(noise_std=0.0, duration=4.0,
                 pulse=syn.PulseParams(heart_rate=1.2, amplitude=0.03, phase=0.9))
        seq = syn.render_video(s)
        face = syn.face_ellipse_mask(32)
        green = seq.frames[:, face, 1].mean(axis=1)
        bvp = seq.pulse_truth
        corr = np.corrcoef(green, bvp)[0, 1]
        assert corr > 0.99

    def test_heart_rate_recoverable_by_dft(self):
        fps, duration, hr = 15, 8.0, 1.5  # 12 cycles over 120 frames
        s = spec(noise_std=0.2, duration=duration, fps=fps,
                 pulse=syn.PulseParams(heart_rate=hr, amplitude=0.03))
        seq = syn.render_video(s)
        face = syn.face_ellipse_mask(32)
        green = seq.frames[:, face, 1].mean(axis=1)
        green = green - green.mean()
        spectrum = np.abs(np.fft.rfft(green))
        freqs = np.fft.rfftfreq(green.size, d=1.0 / fps)
        peak = freqs[np.argmax(spectrum)]
        assert abs(peak - hr) < freqs[1] + 1e-9  # within one DFT bin

    def test_drift_modulates_brightness(self):
        s = spec(label="fake", noise_std=0.0, drift_amplitude=0.1,
                 drift_frequency=0.25, duration=4.0)
        seq = syn.render_video(s)
        brightness = seq.frames.astype(np.float64).mean(axis=(1, 2, 3))
        assert brightness.max() - brightness.min() > 10.0


class TestGenerateDataset:
    def params(self, **kw):
        base = dict(n_identities=4, clips_per_identity=4, duration=1.0,
                    fps=8, frame_side=16)
        base.update(kw)
        return syn.DatasetParams(**base)

    def test_counts_and_label_balance(self):
        clips = syn.generate_dataset(self.params(), 0)
        assert len(clips) == 16
        labels = [c.label for c in clips]
        assert labels.count("real") == labels.count("fake") == 8

    def test_deterministic(self):
        a = syn.generate_dataset(self.params(), 3)
        b = syn.generate_dataset(self.params(), 3)
        for x, y in zip(a, b):
            assert x.frames.tobytes() == y.frames.tobytes()

    def test_seed_changes_data(self):
        a = syn.generate_dataset(self.params(), 1)
        b = syn.generate_dataset(self.params(), 2)
        assert a[0].frames.tobytes() != b[0].frames.tobytes()

    def test_identities_are_distinct_colors(self):
        clips = syn.generate_dataset(self.params(noise_std=0.0,
                                                 pulse_amplitude=0.0), 5)
        first_frames = {}
        for c in clips:
            first_frames.setdefault(c.identity_id, c.frames[0].tobytes())
        assert len(set(first_frames.values())) == 4

    def test_too_few_identities_rejected(self):
        with pytest.raises(ValueError):
            syn.generate_dataset(self.params(n_identities=1), 0)


class TestSplitByIdentity:
    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("frac", [0.3, 0.5, 0.7])
    def test_disjoint_and_complete(self, seed, frac):
        clips = syn.generate_dataset(
            syn.DatasetParams(n_identities=6, clips_per_identity=2,
                              duration=0.5, fps=8, frame_side=16), 9)
        dev, ev = syn.split_by_identity(clips, frac, seed)
        dev_ids = {c.identity_id for c in dev}
        ev_ids = {c.identity_id for c in ev}
        assert not dev_ids & ev_ids
        assert len(dev) + len(ev) == len(clips)
        assert len(dev_ids) == int(np.ceil(frac * 6))

    def test_deterministic(self):
        clips = syn.generate_dataset(
            syn.DatasetParams(n_identities=4, clips_per_identity=1,
                              duration=0.5, fps=8, frame_side=16), 0)
        a = syn.split_by_identity(clips, 0.5, 11)
        b = syn.split_by_identity(clips, 0.5, 11)
        assert [c.identity_id for c in a[0]] == [c.identity_id for c in b[0]]
