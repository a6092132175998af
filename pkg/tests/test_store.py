"""Dataset serialization, back-labeling, and sampling-mode tests."""

import json
import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dirl.errors import InsufficientDataError
from dirl.sim.core import Action
from dirl.store import (
    EPISODE_MAGIC,
    EpisodeRecord,
    EpisodeStore,
    Frame,
    back_label_collisions,
    collision_label_count,
    read_episode,
    write_episode,
)

from conftest import synthetic_episode


class TestBinaryLayout:
    def test_file_bytes_match_hand_packed_layout(self, tmp_path):
        """Byte-for-byte oracle: magic, length-prefixed JSON header, then per
        frame RGB bytes, f32 speed, 2xf32 action, presence byte + 2xf32
        expert action, one collision byte."""
        img = np.arange(2 * 3 * 3, dtype=np.uint8).reshape(2, 3, 3)
        fr0 = Frame(image=img, speed=1.25, action=Action(-0.5, 0.75),
                    expert_action=Action(0.25, 1.0), collision=0)
        fr1 = Frame(image=img[::-1].copy(), speed=0.5, action=Action(0.0, 0.0),
                    expert_action=None, collision=1)
        ep = EpisodeRecord(id="x", source="expert", dt=0.1,
                           frames=(fr0, fr1), ended_in_collision=True)
        path = tmp_path / "ep.bin"
        write_episode(path, ep)

        header = json.dumps(
            {"id": "x", "source": "expert", "dt": 0.1, "width": 3, "height": 2,
             "n_frames": 2, "ended_in_collision": True},
            sort_keys=True,
        ).encode()
        want = EPISODE_MAGIC + struct.pack("<I", len(header)) + header
        want += img.tobytes() + struct.pack("<f", 1.25) + struct.pack("<2f", -0.5, 0.75)
        want += b"\x01" + struct.pack("<2f", 0.25, 1.0) + b"\x00"
        want += img[::-1].tobytes() + struct.pack("<f", 0.5) + struct.pack("<2f", 0.0, 0.0)
        want += b"\x00" + struct.pack("<2f", 0.0, 0.0) + b"\x01"
        assert path.read_bytes() == want

    def test_round_trip_identity(self, tmp_path):
        rng = np.random.default_rng(0)
        ep = synthetic_episode(rng, 12, size=6, collision=True, episode_id="rt")
        path = tmp_path / "rt.bin"
        write_episode(path, ep)
        back = read_episode(path)
        assert back.id == ep.id and back.source == ep.source
        assert back.dt == ep.dt and back.ended_in_collision == ep.ended_in_collision
        assert len(back) == len(ep)
        for a, b in zip(ep.frames, back.frames):
            assert np.array_equal(a.image, b.image)
            assert np.float32(a.speed) == np.float32(b.speed)
            assert np.float32(a.action.steering) == np.float32(b.action.steering)
            assert np.float32(a.action.throttle) == np.float32(b.action.throttle)
            assert (a.expert_action is None) == (b.expert_action is None)
            assert a.collision == b.collision

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "bad.bin"
        p.write_bytes(b"NOTANEP!" + b"\x00" * 16)
        with pytest.raises(ValueError):
            read_episode(p)


class TestBackLabeling:
    def test_ten_hz_labels_five_frames(self):
        assert collision_label_count(0.1) == 5

    def test_spec_episode_labels_last_five_of_57(self):
        rng = np.random.default_rng(1)
        ep = synthetic_episode(rng, 57, dt=0.1, collision=True)
        labels = [f.collision for f in ep.frames]
        assert labels == [0] * 52 + [1] * 5

    def test_rejects_non_collision_episode(self):
        rng = np.random.default_rng(2)
        ep = synthetic_episode(rng, 10, collision=False)
        with pytest.raises(ValueError):
            back_label_collisions(ep)

    @settings(max_examples=1000, deadline=None)
    @given(
        n_frames=st.integers(1, 80),
        dt=st.floats(0.01, 1.0),
        seed=st.integers(0, 2**32 - 1),
    )
    def test_labeled_window_is_exactly_min_k_t_trailing(self, n_frames, dt, seed):
        ratio = 0.5 / dt
        if abs(ratio - math.floor(ratio) - 0.5) < 1e-12:
            return  # half-integer boundary: rounding direction is unspecified
        rng = np.random.default_rng(seed)
        ep = synthetic_episode(rng, n_frames, dt=dt, collision=True)
        k = min(round(ratio), n_frames)
        labels = [f.collision for f in ep.frames]
        assert labels == [0] * (n_frames - k) + [1] * k


class TestStoreAppend:
    def test_fresh_store_counts(self, synth_store):
        assert synth_store.n_episodes == 3
        assert synth_store.n_frames == 30 + 25 + 20

    def test_collision_frame_count_increases_by_k(self, tmp_path):
        rng = np.random.default_rng(3)
        store = EpisodeStore(tmp_path / "d")
        before = store.collision_frame_count
        store.append_episode(synthetic_episode(rng, 30, dt=0.1, collision=True, episode_id="c1"))
        assert store.collision_frame_count == before + 5

    def test_duplicate_id_rejected(self, tmp_path):
        rng = np.random.default_rng(4)
        store = EpisodeStore(tmp_path / "d")
        store.append_episode(synthetic_episode(rng, 5, episode_id="same"))
        with pytest.raises(ValueError):
            store.append_episode(synthetic_episode(rng, 5, episode_id="same"))

    def test_mislabeled_collision_episode_rejected(self, tmp_path):
        rng = np.random.default_rng(5)
        store = EpisodeStore(tmp_path / "d")
        frames = [
            Frame(image=np.zeros((4, 4, 3), np.uint8), speed=0.0, action=Action(0, 0),
                  expert_action=Action(0, 0), collision=1 if i == 3 else 0)
            for i in range(8)
        ]
        ep = EpisodeRecord(id="bad", source="expert", dt=0.1,
                           frames=tuple(frames), ended_in_collision=False)
        with pytest.raises(ValueError):
            store.append_episode(ep)

    def test_reload_from_disk_is_identical(self, synth_store):
        again = EpisodeStore(synth_store.root)
        assert again.n_episodes == synth_store.n_episodes
        for a, b in zip(synth_store.episodes, again.episodes):
            assert a.id == b.id and len(a) == len(b)
            for fa, fb in zip(a.frames, b.frames):
                assert np.array_equal(fa.image, fb.image)
                assert fa.collision == fb.collision

    def test_memory_store_skips_disk(self):
        rng = np.random.default_rng(6)
        store = EpisodeStore(None)
        store.append_episode(synthetic_episode(rng, 5, episode_id="m"))
        assert store.n_episodes == 1


class TestSequenceSampling:
    def test_windows_stay_within_episodes(self, synth_store):
        rng = np.random.default_rng(0)
        for seqs in (synth_store.sample_sequences(64, 11, rng) for _ in range(3)):
            for seq in seqs:
                assert len(seq) == 11

    def test_valid_start_enumeration(self, synth_store):
        # episodes of 30/25/20 frames, window 11 -> 20+15+10 starts
        starts = synth_store.sequence_starts(11)
        assert len(starts) == 20 + 15 + 10

    def test_uniform_over_valid_starts(self, synth_store):
        """Chi-square check that window starts are uniform across all
        (episode, offset) slots, identified by their first frame's bytes."""
        rng = np.random.default_rng(123)
        length = 11
        slot_of = {}
        for i, t in synth_store.sequence_starts(length):
            slot_of[synth_store.episodes[i].frames[t].image.tobytes()] = (i, t)
        counts = {key: 0 for key in slot_of.values()}
        draws = 9000
        for seq in synth_store.sample_sequences(draws, length, rng):
            counts[slot_of[seq[0].image.tobytes()]] += 1
        expected = draws / len(counts)
        chi2 = sum((c - expected) ** 2 / expected for c in counts.values())
        # 45 slots -> dof 44; p=0.999 cutoff ~ 81
        assert chi2 < 81.0

    def test_insufficient_data_raises(self, tmp_path):
        rng = np.random.default_rng(9)
        store = EpisodeStore(tmp_path / "d")
        store.append_episode(synthetic_episode(rng, 5, episode_id="short"))
        with pytest.raises(InsufficientDataError):
            store.sample_sequences(4, 10, rng)


class TestFrameAnchors:
    def test_spec_example_collision_at_57_h10(self):
        """Expert episode with impact at frame 57 (1-based), horizon 10:
        anchors need 10 consecutive clean expert frames, so 1..43 qualify."""
        rng = np.random.default_rng(10)
        ep = synthetic_episode(rng, 57, dt=0.1, collision=True, episode_id="a57")
        store = EpisodeStore(None)
        store.append_episode(ep)
        anchors = store.frame_anchors(collision_free_expert_only=True, horizon=10)
        assert len(anchors) == 43
        zero_based = [t for (_, t) in anchors]
        assert min(zero_based) == 0 and max(zero_based) == 42

    def test_policy_episodes_excluded(self):
        rng = np.random.default_rng(11)
        ep = synthetic_episode(rng, 20, episode_id="p", source="policy", with_expert=False)
        store = EpisodeStore(None)
        store.append_episode(ep)
        assert store.frame_anchors(collision_free_expert_only=True, horizon=5) == []

    def test_filter_off_any_frame_eligible(self):
        rng = np.random.default_rng(12)
        store = EpisodeStore(None)
        store.append_episode(synthetic_episode(rng, 20, episode_id="e", collision=True))
        anchors = store.frame_anchors(collision_free_expert_only=False, horizon=1)
        assert len(anchors) == 20

    def test_all_collision_frames_insufficient(self):
        rng = np.random.default_rng(13)
        ep = synthetic_episode(rng, 3, dt=0.1, collision=True, episode_id="allc")
        store = EpisodeStore(None)
        store.append_episode(ep)
        assert store.frame_anchors(collision_free_expert_only=True, horizon=1) == []
        with pytest.raises(InsufficientDataError):
            store.sample_il_batch(4, 1, np.random.default_rng(0))

    def test_il_batch_targets_are_expert_actions(self, synth_store):
        rng = np.random.default_rng(14)
        frames, targets = synth_store.sample_il_batch(6, 3, rng)
        assert targets.shape == (6, 3, 2) and targets.dtype == np.float32
        assert len(frames) == 6
