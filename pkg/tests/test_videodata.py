"""Synthetic dataset, clip sampling, and disk IO.

The two oracle tests at the bottom are the load-bearing ones: they verify,
from pixels alone, that the class signal is exactly where it is documented
to be — in the growth of motion over time, and nowhere a single frame or an
instantaneous reading could pick it up.
"""

import numpy as np
import pytest

from tempossl.rng import named_stream
from tempossl.videodata import (
    Clip,
    ClipSampleConfig,
    SyntheticDataConfig,
    VideoDataset,
    Video,
    clip_frame_indices,
    generate_synthetic_video,
    is_static,
    load_manifest,
    load_video_frames,
    make_synthetic_specs,
    max_clip_start,
    render_frames,
    sample_clip,
    sample_clip_start,
    uniform_clip_starts,
    write_manifest,
    write_video_frames,
)


def small_cfg(n=8, frames=16):
    return SyntheticDataConfig(num_videos=n, num_frames=frames)


class TestSpecs:
    def test_same_seed_same_specs(self):
        cfg = small_cfg()
        a = make_synthetic_specs(cfg, named_stream(7, "data"))
        b = make_synthetic_specs(cfg, named_stream(7, "data"))
        assert a == b

    def test_different_seed_different_specs(self):
        cfg = small_cfg()
        a = make_synthetic_specs(cfg, named_stream(7, "data"))
        b = make_synthetic_specs(cfg, named_stream(8, "data"))
        assert a != b

    def test_classes_balanced_round_robin(self):
        specs = make_synthetic_specs(small_cfg(n=12), named_stream(0, "data"))
        assert [s.motion_class for s in specs] == [0, 1, 2, 3] * 3

    def test_accel_follows_class(self):
        cfg = small_cfg(n=8)
        specs = make_synthetic_specs(cfg, named_stream(0, "data"))
        for s in specs:
            assert s.accel_total == cfg.accel_by_class[s.motion_class]

    def test_pulse_period_shared_phase_random(self):
        cfg = small_cfg(n=50)
        specs = make_synthetic_specs(cfg, named_stream(3, "data"))
        assert {s.pulse_period for s in specs} == {cfg.pulse_period_frames}
        assert {s.pulse_amplitude for s in specs} == {cfg.pulse_amplitude}
        phases = np.array([s.pulse_phase_deg for s in specs])
        assert phases.min() >= 0 and phases.max() < 360
        assert phases.std() > 30  # actually randomized, not constant

    def test_pulse_modulates_shape_luminance(self):
        spec = make_synthetic_specs(small_cfg(n=1, frames=32), named_stream(9, "data"))[0]
        frames = render_frames(spec, range(32))
        peaks = frames.reshape(32, -1).max(1)
        # the 32 frames cover two full periods, so the brightest pixel's
        # swing across frames reflects the full pulse amplitude
        assert peaks.max() - peaks.min() > spec.pulse_amplitude * 0.5

    def test_accel_class_count_mismatch_rejected(self):
        with pytest.raises(ValueError, match="accel_by_class"):
            SyntheticDataConfig(num_classes=3).validate()


class TestRendering:
    def test_render_deterministic(self):
        spec = make_synthetic_specs(small_cfg(n=1), named_stream(0, "data"))[0]
        a = render_frames(spec, range(spec.length))
        b = render_frames(spec, range(spec.length))
        np.testing.assert_array_equal(a, b)

    def test_frame_range_and_dtype(self):
        spec = make_synthetic_specs(small_cfg(n=1), named_stream(1, "data"))[0]
        fr = render_frames(spec, [0, 5, 15])
        assert fr.shape == (3, spec.height, spec.width, 3)
        assert fr.dtype == np.float32
        assert fr.min() >= 0.0 and fr.max() <= 1.0

    def test_partial_render_matches_full(self):
        spec = make_synthetic_specs(small_cfg(n=1), named_stream(2, "data"))[0]
        full = render_frames(spec, range(spec.length))
        part = render_frames(spec, [3, 9, 12])
        np.testing.assert_array_equal(part, full[[3, 9, 12]])

    def test_videos_move(self):
        specs = make_synthetic_specs(small_cfg(n=4), named_stream(0, "data"))
        for s in specs:
            v = generate_synthetic_video(s)
            assert not is_static(v.frames)

    def test_is_static_flags_constant_frames(self):
        frames = np.full((5, 16, 16, 3), 0.5, dtype=np.float32)
        assert is_static(frames)


class TestDatasetAndManifest:
    def test_lazy_frames_match_full_video(self):
        specs = make_synthetic_specs(small_cfg(n=2), named_stream(0, "data"))
        ds = VideoDataset.from_specs(specs)
        v = ds.get_video(1)
        np.testing.assert_array_equal(ds.get_frames(1, [0, 7]), v.frames[[0, 7]])
        assert v.id == 1
        assert ds.class_label(1) == specs[1].motion_class

    def test_memoized_and_direct_render_agree(self):
        specs = make_synthetic_specs(small_cfg(n=2), named_stream(2, "data"))
        cached = VideoDataset.from_specs(specs)
        direct = VideoDataset([{"spec": s, "class": s.motion_class} for s in specs],
                              cache_videos=False)
        idx = [3, 0, 5]
        np.testing.assert_array_equal(cached.get_frames(0, idx), direct.get_frames(0, idx))
        # repeated reads come from the memo and stay identical
        np.testing.assert_array_equal(cached.get_frames(0, idx), cached.get_frames(0, idx))
        assert direct._frame_cache == {}

    def test_frame_reads_cannot_corrupt_the_memo(self):
        specs = make_synthetic_specs(small_cfg(n=1), named_stream(2, "data"))
        ds = VideoDataset.from_specs(specs)
        first = ds.get_frames(0, [0, 1])
        first[:] = -1.0
        assert ds.get_frames(0, [0, 1]).min() >= 0.0

    def test_manifest_round_trip(self, tmp_path):
        specs = make_synthetic_specs(small_cfg(n=6), named_stream(4, "data"))
        ds = VideoDataset.from_specs(specs)
        path = str(tmp_path / "manifest.jsonl")
        write_manifest(ds, path)
        back = load_manifest(path)
        assert len(back) == len(ds)
        for i in range(len(ds)):
            assert back.class_label(i) == ds.class_label(i)
            assert back.spec(i) == ds.spec(i)
        np.testing.assert_array_equal(back.get_frames(3, [2]), ds.get_frames(3, [2]))

    def test_manifest_missing_file(self):
        with pytest.raises(FileNotFoundError):
            load_manifest("/nonexistent/manifest.jsonl")

    def test_manifest_bad_json(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text('{"id": 0, "class": 1, "synthetic"\n')
        with pytest.raises(ValueError, match="invalid JSON"):
            load_manifest(str(p))

    def test_manifest_row_without_source(self, tmp_path):
        p = tmp_path / "nosrc.jsonl"
        p.write_text('{"id": 0, "class": 1}\n')
        with pytest.raises(ValueError, match="'synthetic' or 'path'"):
            load_manifest(str(p))

    def test_png_round_trip(self, tmp_path):
        spec = make_synthetic_specs(small_cfg(n=1, frames=4), named_stream(5, "data"))[0]
        v = generate_synthetic_video(spec)
        out = str(tmp_path / "vid0")
        write_video_frames(v, out)
        back = load_video_frames(out)
        assert back.frames.shape == v.frames.shape
        assert np.abs(back.frames - v.frames).max() <= 1.0 / 255.0 + 1e-6

    def test_frame_dir_manifest_entry(self, tmp_path):
        spec = make_synthetic_specs(small_cfg(n=1, frames=4), named_stream(6, "data"))[0]
        v = generate_synthetic_video(spec)
        vid_dir = str(tmp_path / "framedir")
        write_video_frames(v, vid_dir)
        ds = VideoDataset([{"path": vid_dir, "class": 2}])
        assert ds.class_label(0) == 2
        assert ds.num_frames(0) == 4
        assert ds.get_video(0).frames.shape == v.frames.shape


class TestClipSampling:
    CFG = ClipSampleConfig(num_frames=8, stride=8)

    def test_span(self):
        assert self.CFG.span == 57
        assert ClipSampleConfig(num_frames=8, stride=1).span == 8

    def test_max_start(self):
        assert max_clip_start(64, self.CFG) == 7
        assert max_clip_start(57, self.CFG) == 0

    def test_too_short_video_rejected(self):
        with pytest.raises(ValueError, match="requires at least"):
            max_clip_start(56, self.CFG)

    def test_indices_arithmetic(self):
        np.testing.assert_array_equal(
            clip_frame_indices(3, self.CFG), 3 + 8 * np.arange(8)
        )

    def test_sampled_starts_stay_in_bounds(self):
        rng = named_stream(0, "sampling")
        starts = {sample_clip_start(64, self.CFG, rng) for _ in range(200)}
        assert min(starts) >= 0 and max(starts) <= 7
        assert len(starts) == 8  # every valid start eventually drawn

    def test_begin_policy(self):
        cfg = ClipSampleConfig(num_frames=8, stride=8, start_policy="begin")
        assert sample_clip_start(64, cfg, named_stream(0, "sampling")) == 0

    def test_uniform_starts_single_span_video(self):
        starts = uniform_clip_starts(57, self.CFG, 10)
        np.testing.assert_array_equal(starts, [0])

    def test_uniform_starts_sorted_unique_bounded(self):
        starts = uniform_clip_starts(64, self.CFG, 10)
        assert list(starts) == sorted(set(starts))
        assert starts[0] == 0 and starts[-1] == 7

    def test_sample_clip_slices_video(self):
        spec = make_synthetic_specs(small_cfg(n=1, frames=64), named_stream(0, "data"))[0]
        v = generate_synthetic_video(spec)
        clip = sample_clip(v, self.CFG, named_stream(1, "sampling"))
        assert isinstance(clip, Clip)
        np.testing.assert_array_equal(
            clip.frames, v.frames[clip_frame_indices(clip.start, self.CFG)]
        )


# ---------------------------------------------------------------------------
# separability oracles (pixels only — no access to renderer internals)


def _circular_centroids(frames: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Shape centers via background-subtracted circular (torus) centroids."""
    lum = frames.mean(-1)
    w = np.clip(lum - lum.mean(0, keepdims=True), 0, None)
    H, W = lum.shape[1:]
    ys = np.exp(2j * np.pi * np.arange(H) / H)[None, :, None]
    xs = np.exp(2j * np.pi * np.arange(W) / W)[None, None, :]
    wy = (w * ys).sum((1, 2)) / (w.sum((1, 2)) + 1e-12)
    wx = (w * xs).sum((1, 2)) / (w.sum((1, 2)) + 1e-12)
    cy = (np.angle(wy) * H / (2 * np.pi)) % H
    cx = (np.angle(wx) * W / (2 * np.pi)) % W
    return cy, cx


def _circ_diff(a: np.ndarray, b: np.ndarray, period: int) -> np.ndarray:
    d = (b - a) % period
    return np.where(d > period / 2, d - period, d)


def _log_speed_slope(spec) -> float:
    """Estimated total log-growth of displacement over one video."""
    S = 2
    starts = np.arange(0, spec.length - S, 3)
    idx = np.stack([starts, starts + S], 1).ravel()
    fr = render_frames(spec, idx)
    cy, cx = _circular_centroids(fr)
    dy = _circ_diff(cy[0::2], cy[1::2], spec.height)
    dx = _circ_diff(cx[0::2], cx[1::2], spec.width)
    d = np.hypot(dy, dx)
    slope = np.polyfit(starts + S / 2, np.log(np.clip(d, 1e-2, None)), 1)[0]
    return float(slope * spec.length)


@pytest.fixture(scope="module")
def oracle_sample():
    cfg = SyntheticDataConfig(num_videos=120)
    specs = make_synthetic_specs(cfg, named_stream(0, "data"))
    return cfg, specs


def test_motion_growth_identifies_class(oracle_sample):
    """Nearest-centroid on the displacement growth rate recovers the class."""
    cfg, specs = oracle_sample
    slopes = np.array([_log_speed_slope(s) for s in specs])
    labels = np.array([s.motion_class for s in specs])
    half = len(specs) // 2
    cents = np.array(
        [slopes[:half][labels[:half] == c].mean() for c in range(cfg.num_classes)]
    )
    pred = np.argmin(np.abs(slopes[half:][:, None] - cents[None, :]), axis=1)
    acc = float((pred == labels[half:]).mean())
    assert acc >= 0.85, f"growth-rate oracle at {acc:.3f}; classes not separable by motion growth"


def test_single_frame_carries_no_class_signal(oracle_sample):
    """Nearest class-mean frame classifies at chance: appearance is a nuisance."""
    cfg, specs = oracle_sample
    frames = np.array([render_frames(s, [0])[0].reshape(-1) for s in specs])
    labels = np.array([s.motion_class for s in specs])
    half = len(specs) // 2
    cents = np.array(
        [frames[:half][labels[:half] == c].mean(0) for c in range(cfg.num_classes)]
    )
    d = ((frames[half:, None, :] - cents[None, :, :]) ** 2).sum(-1)
    acc = float((np.argmin(d, 1) == labels[half:]).mean())
    assert acc <= 0.40, f"single frames classify at {acc:.3f}; appearance leaks the class"
