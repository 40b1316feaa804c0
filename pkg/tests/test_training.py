import numpy as np
import pytest

from pulsecan import model as can
from pulsecan import synthetic as syn
from pulsecan import training as tr

TINY_CAN = can.CanConfig(input_side=8, conv_filters=(2, 3), fc_size=6)


def tiny_clips(n_identities=2, clips_per_identity=2, seed=0):
    params = syn.DatasetParams(
        n_identities=n_identities, clips_per_identity=clips_per_identity,
        duration=1.0, fps=8, frame_side=16, pulse_amplitude=0.05,
        noise_std=0.2)
    return syn.generate_dataset(params, seed)


def tiny_train_config(**kw):
    base = dict(epochs_pretrain=2, epochs_finetune=2, batch_size=8, seed=3)
    base.update(kw)
    return tr.TrainConfig(**base)


class TestTrainConfig:
    def test_defaults(self):
        cfg = tr.TrainConfig()
        assert cfg.learning_rate_pretrain == 1e-3
        assert cfg.learning_rate_finetune == 1e-2
        assert cfg.epochs_pretrain == 15
        assert cfg.epochs_finetune == 10
        assert cfg.batch_size == 32
        assert cfg.early_stop_patience == 3

    @pytest.mark.parametrize("kw", [dict(learning_rate_pretrain=0.0),
                                    dict(batch_size=0),
                                    dict(epochs_pretrain=-1),
                                    dict(early_stop_patience=0)])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            tr.TrainConfig(**kw)


class TestSampleBank:
    def test_counts_one_pair_per_frame_transition(self):
        clips = tiny_clips()
        bank = tr.build_sample_bank(clips, 8)
        assert bank.n_samples == sum(c.frames.shape[0] - 1 for c in clips)
        assert bank.motion.dtype == np.float32

    def test_pulse_target_is_first_difference(self):
        clips = tiny_clips()
        bank = tr.build_sample_bank(clips, 8)
        clip0 = clips[0]
        t_len = clip0.frames.shape[0] - 1
        want = np.diff(clip0.pulse_truth)
        assert np.allclose(bank.pulse_target[:t_len], want, atol=1e-7)

    def test_label_targets(self):
        clips = tiny_clips()
        bank = tr.build_sample_bank(clips, 8)
        for ci, clip in enumerate(clips):
            rows = bank.clip_index == ci
            want = 1.0 if clip.label == "real" else 0.0
            assert np.all(bank.label_target[rows] == want)

    def test_batch_upcasts_to_float64(self):
        bank = tr.build_sample_bank(tiny_clips(), 8)
        motion, appearance = bank.batch(np.array([0, 1]))
        assert motion.dtype == np.float64
        assert appearance.dtype == np.float64


class TestTrainStep:
    def test_reduces_loss_on_fixed_batch(self):
        rng = np.random.default_rng(0)
        w = can.init_weights(TINY_CAN, 1)
        motion = rng.standard_normal((8, 3, 8, 8))
        appearance = rng.standard_normal((8, 3, 8, 8))
        targets = rng.standard_normal(8) * 0.1
        losses = [tr.train_step(w, motion, appearance, targets, "mse", 1e-2)
                  for _ in range(20)]
        assert losses[-1] < losses[0]

    def test_empty_batch_rejected(self):
        w = can.init_weights(TINY_CAN, 0)
        with pytest.raises(ValueError):
            tr.train_step(w, np.zeros((0, 3, 8, 8)), np.zeros((0, 3, 8, 8)),
                          np.zeros(0), "mse", 1e-3)

    def test_unknown_loss_rejected(self):
        w = can.init_weights(TINY_CAN, 0)
        with pytest.raises(ValueError):
            tr.train_step(w, np.zeros((1, 3, 8, 8)), np.zeros((1, 3, 8, 8)),
                          np.zeros(1), "hinge", 1e-3)

    def test_gradients_cleared_after_step(self):
        rng = np.random.default_rng(1)
        w = can.init_weights(TINY_CAN, 2)
        tr.train_step(w, rng.standard_normal((4, 3, 8, 8)),
                      rng.standard_normal((4, 3, 8, 8)), np.zeros(4),
                      "mse", 1e-3)
        for p in w.param_list():
            assert not p.grad.any()


class TestPretrain:
    def test_runs_and_logs(self):
        clips = tiny_clips()
        w, log = tr.pretrain_hr(tiny_train_config(), clips, TINY_CAN)
        assert w.head == "regression"
        assert len(log.records) == 2
        assert all(r.phase == "pretrain" for r in log.records)

    def test_deterministic(self):
        clips = tiny_clips()
        a, _ = tr.pretrain_hr(tiny_train_config(), clips, TINY_CAN)
        b, _ = tr.pretrain_hr(tiny_train_config(), clips, TINY_CAN)
        for n in can.PARAM_ORDER:
            assert a.params[n].value.tobytes() == b.params[n].value.tobytes()

    def test_improves_over_init(self):
        clips = tiny_clips(n_identities=3, seed=4)
        cfg = tiny_train_config(epochs_pretrain=5)
        bank = tr.build_sample_bank(clips, TINY_CAN.input_side)
        init = can.init_weights(TINY_CAN, cfg.seed)
        before = tr._mean_mse(init, bank, bank.pulse_target)
        w, log = tr.pretrain_hr(cfg, clips, TINY_CAN, bank)
        after = tr._mean_mse(w, bank, bank.pulse_target)
        assert after < before

    def test_zero_epochs_returns_init(self):
        clips = tiny_clips()
        cfg = tiny_train_config(epochs_pretrain=1)
        # epochs_pretrain=0 returns the seeded init untouched
        w0, log = tr.pretrain_hr(tiny_train_config(epochs_pretrain=0), clips,
                                 TINY_CAN)
        init = can.init_weights(TINY_CAN, cfg.seed)
        assert not log.records
        for n in can.PARAM_ORDER:
            assert w0.params[n].value.tobytes() == init.params[n].value.tobytes()

    def test_rejects_missing_pulse_truth(self):
        clips = tiny_clips()
        from pulsecan.preprocessing import FrameSequence
        bad = FrameSequence(clips[0].frames, clips[0].fps, "idX", "real", None)
        with pytest.raises(ValueError, match="pulse_truth"):
            tr.pretrain_hr(tiny_train_config(), [bad], TINY_CAN)

    def test_rejects_classification_config(self):
        with pytest.raises(ValueError):
            tr.pretrain_hr(tiny_train_config(), tiny_clips(),
                           can.CanConfig(input_side=8, conv_filters=(2, 3),
                                         fc_size=6, head="classification"))


class TestFinetune:
    def pretrained(self, clips):
        return tr.pretrain_hr(tiny_train_config(), clips, TINY_CAN)[0]

    def test_trunk_untouched_bitwise(self):
        clips = tiny_clips()
        pre = self.pretrained(clips)
        det, log = tr.finetune_detector(tiny_train_config(), pre, clips)
        assert det.head == "classification"
        for n in can.TRUNK_NAMES:
            assert det.params[n].value.tobytes() == pre.params[n].value.tobytes()
            assert det.params[n].frozen
        assert all(r.phase == "finetune" for r in log.records)

    def test_deterministic(self):
        clips = tiny_clips()
        pre = self.pretrained(clips)
        a, _ = tr.finetune_detector(tiny_train_config(), pre, clips)
        b, _ = tr.finetune_detector(tiny_train_config(), pre, clips)
        for n in can.PARAM_ORDER:
            assert a.params[n].value.tobytes() == b.params[n].value.tobytes()

    def test_rejects_unlabeled_clip(self):
        from pulsecan.preprocessing import FrameSequence
        clips = tiny_clips()
        pre = self.pretrained(clips)
        bad = FrameSequence(clips[0].frames, clips[0].fps, "idX", "unlabeled")
        with pytest.raises(ValueError, match="unlabeled"):
            tr.finetune_detector(tiny_train_config(), pre, clips + [bad])

    def test_rejects_classification_input(self):
        clips = tiny_clips()
        pre = self.pretrained(clips)
        det, _ = tr.finetune_detector(tiny_train_config(), pre, clips)
        with pytest.raises(ValueError):
            tr.finetune_detector(tiny_train_config(), det, clips)

    def test_metric_is_dev_auc(self):
        clips = tiny_clips()
        pre = self.pretrained(clips)
        _, log = tr.finetune_detector(tiny_train_config(), pre, clips)
        for r in log.records:
            assert 0.0 <= r.metric <= 1.0


class TestTrainLog:
    def test_csv_format(self, tmp_path):
        log = tr.TrainLog()
        log.append(tr.EpochRecord(0, "pretrain", 0.5, 0.25, 1.0))
        log.append(tr.EpochRecord(1, "pretrain", 0.4, 0.2, 1.1))
        path = tmp_path / "log.csv"
        log.write_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "epoch,phase,loss,metric,seconds"
        assert lines[1].startswith(f"0,pretrain,{0.5:.12f},{0.25:.12f},")
        assert len(lines) == 3
