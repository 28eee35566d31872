import numpy as np
import pytest
import torch

from DistilPy.base import BatchTooSmallError, GeometryError, ValidationError
from DistilPy.core.types import *
from DistilPy.data.datasets import load_dataset
from DistilPy.pretrain.encoders import build_encoder, encoder_fingerprint
from DistilPy.teacher import *

FAST = PretrainHParams(epochs=1, batch_size=8, augmentation="none")


def _clean(count=24):
    return load_dataset("SYNTH-TINY", Split.TRAIN).subset(np.arange(count))


def _poisoned(seed=3):
    encoder = build_encoder("tiny-cnn", seed)
    encoder.eval()
    return encoder


def test_ft_zero_epochs_is_identity():
    poisoned = _poisoned()
    teacher = make_teacher_ft(poisoned, _clean(), 0, seed=0, pretrain_hparams=FAST)
    assert encoder_fingerprint(teacher) == encoder_fingerprint(poisoned)
    assert teacher.metadata["strategy"] == "T-FT"
    assert teacher.metadata["stage"] == "teacher-ft"


def test_ft_leaves_poisoned_unmodified():
    poisoned = _poisoned()
    before = encoder_fingerprint(poisoned)
    teacher = make_teacher_ft(poisoned, _clean(), 2, seed=0, pretrain_hparams=FAST)
    assert encoder_fingerprint(poisoned) == before
    assert encoder_fingerprint(teacher) != before
    assert len(teacher.metadata["loss_trace"]) == 2


def test_rank_channels_directions_and_ties():
    scores = [1.0, 2.0, 2.0, 0.0]
    assert list(rank_channels(scores, PruneDirection.MOST)) == [1, 2, 0, 3]
    assert list(rank_channels(scores, "LEAST")) == [3, 0, 1, 2]
    assert list(rank_channels(np.zeros(5))) == [0, 1, 2, 3, 4]


def test_channel_activity_shape():
    activity = channel_activity(_poisoned(), _clean(), tap=0, batch_size=5)
    assert activity.shape == (16,)
    assert np.all(activity >= 0)


def test_fp_prunes_most_active_channels():
    poisoned = _poisoned()
    clean = _clean()
    expected = sorted(int(c) for c in rank_channels(channel_activity(poisoned, clean))[:8])
    teacher = make_teacher_fp(poisoned, clean, 0.25, seed=0, finetune_epochs=0,
                              pretrain_hparams=FAST)

    assert teacher.metadata["strategy"] == "T-FP"
    assert teacher.metadata["pruned"] == {"tap": 1, "channels": expected}
    assert teacher.gates[-1].pruned() == expected
    with torch.no_grad():
        taps = teacher(torch.rand(4, 3, 16, 16))[1]
    assert torch.all(taps[-1][:, expected] == 0)


def test_fp_least_direction():
    poisoned = _poisoned()
    clean = _clean()
    expected = sorted(int(c) for c in
                      rank_channels(channel_activity(poisoned, clean), "LEAST")[:3])
    teacher = make_teacher_fp(poisoned, clean, 0.1, seed=0, direction="LEAST",
                              finetune_epochs=0, pretrain_hparams=FAST)
    assert teacher.metadata["pruned"]["channels"] == expected


def test_fp_zero_fraction_is_finetune_only():
    poisoned = _poisoned()
    teacher = make_teacher_fp(poisoned, _clean(), 0.0, seed=0, finetune_epochs=0,
                              pretrain_hparams=FAST)
    assert teacher.gates[-1].pruned() == []
    assert encoder_fingerprint(teacher) == encoder_fingerprint(poisoned)


def test_fp_rejects_fraction_of_one():
    with pytest.raises(ValidationError) as info:
        make_teacher_fp(_poisoned(), _clean(), 1.0, seed=0)
    assert info.value.field == "prune_fraction"


def test_pruned_channels_stay_zero_after_finetuning():
    teacher = make_teacher_fp(_poisoned(), _clean(), 0.25, seed=0, finetune_epochs=1,
                              pretrain_hparams=FAST)
    channels = teacher.metadata["pruned"]["channels"]
    with torch.no_grad():
        taps = teacher(torch.rand(3, 3, 16, 16))[1]
    assert torch.all(taps[-1][:, channels] == 0)


def test_pruning_is_idempotent():
    teacher = _poisoned()
    teacher.gates[-1].prune([1, 4])
    once = encoder_fingerprint(teacher)
    teacher.gates[-1].prune([1, 4])
    assert encoder_fingerprint(teacher) == once


def test_anp_dead_channel_scores_zero():
    encoder = _poisoned()
    encoder.gates[-1].prune([5])
    scores = anp_sensitivity(encoder, _clean(), 0.4, seed=0, pretrain_hparams=FAST)
    assert len(scores) == 1
    assert scores[0].shape == (32,)
    assert scores[0][5] == 0.0
    assert np.all(scores[0] >= 0)


def test_anp_scope_all_scores_every_tap():
    scores = anp_sensitivity(_poisoned(), _clean(), 0.4, seed=0, scope=AnpScope.ALL,
                             pretrain_hparams=FAST)
    assert [s.shape for s in scores] == [(16,), (32,)]


def test_anp_scores_are_first_order_estimates():
    encoder = _poisoned()
    small = anp_sensitivity(encoder, _clean(), 0.2, seed=0, pretrain_hparams=FAST)[0]
    large = anp_sensitivity(encoder, _clean(), 0.4, seed=0, pretrain_hparams=FAST)[0]
    assert large == pytest.approx(2.0 * small, rel=1e-9, abs=1e-7)
    for gate in encoder.gates:
        assert torch.count_nonzero(gate.noise) == 0


def test_anp_tiny_budget_falls_back_to_lowest_index():
    poisoned = _poisoned()
    clean = _clean()
    scores = anp_sensitivity(poisoned, clean, 1e-12, seed=0, pretrain_hparams=FAST)
    assert np.all(scores[0] == 0)

    teacher = make_teacher_anp(poisoned, clean, 1e-12, 0.25, seed=0, finetune_epochs=0,
                               pretrain_hparams=FAST)
    assert teacher.metadata["strategy"] == "T-ANP"
    assert teacher.metadata["pruned"] == {"1": list(range(8))}
    assert teacher.gates[-1].pruned() == list(range(8))


def test_anp_leaves_poisoned_unmodified():
    poisoned = _poisoned()
    before = encoder_fingerprint(poisoned)
    make_teacher_anp(poisoned, _clean(), 0.4, 0.1, seed=0, finetune_epochs=0,
                     pretrain_hparams=FAST)
    assert encoder_fingerprint(poisoned) == before
    assert all(torch.all(gate.noise == 0) for gate in poisoned.gates)


def test_anp_errors():
    with pytest.raises(ValidationError):
        anp_sensitivity(_poisoned(), _clean(), 0.0, seed=0)
    with pytest.raises(ValidationError):
        anp_sensitivity(_poisoned(), _clean(1), 0.4, seed=0)
    with pytest.raises(ValidationError):
        make_teacher_anp(_poisoned(), _clean(), -1.0, 0.1, seed=0)


def test_inversion_zero_steps_is_initialization():
    estimate = invert_trigger(_poisoned(), _clean(), (3, 3), 0, seed=0)
    assert estimate.pattern.shape == (16, 16, 3)
    assert np.allclose(estimate.pattern, 0.5)
    assert np.allclose(estimate.mask, 0.5)
    assert len(estimate.inversion_loss_trace) == 1


def test_inversion_trace_never_increases():
    estimate = invert_trigger(_poisoned(), _clean(), (3, 3), 6, seed=0, batch_size=8)
    trace = estimate.inversion_loss_trace
    assert len(trace) == 7
    assert all(later <= earlier for earlier, later in zip(trace, trace[1:]))
    assert estimate.mask.min() >= 0 and estimate.mask.max() <= 1


def test_inversion_penalizes_the_whole_mask_by_default():
    encoder = _poisoned()

    def initial_loss(trigger_shape, **options):
        return invert_trigger(encoder, _clean(), trigger_shape, 0, seed=0, mask_sparsity=1.0,
                              **options).inversion_loss_trace[0]

    plain = initial_loss((3, 3))
    assert plain == initial_loss((3, 3), mask_penalty=MaskPenalty.L1)
    assert plain == pytest.approx(initial_loss((16, 16)), abs=1e-6)
    # Half-transparent 16x16 initialization: L1 area 128
    assert plain - initial_loss((3, 3), mask_penalty="budget") == pytest.approx(9.0, abs=1e-4)
    assert plain - initial_loss((16, 16), mask_penalty="budget") == pytest.approx(128.0, abs=1e-4)


def test_inversion_is_seeded():
    first = invert_trigger(_poisoned(), _clean(), (3, 3), 3, seed=4, batch_size=8)
    second = invert_trigger(_poisoned(), _clean(), (3, 3), 3, seed=4, batch_size=8)
    assert np.array_equal(first.mask, second.mask)
    assert first.inversion_loss_trace == second.inversion_loss_trace


def test_inversion_errors():
    with pytest.raises(GeometryError):
        invert_trigger(_poisoned(), _clean(), (17, 2), 1, seed=0)
    with pytest.raises(GeometryError):
        invert_trigger(_poisoned(), _clean(), (0, 2), 1, seed=0)
    with pytest.raises(BatchTooSmallError):
        invert_trigger(_poisoned(), _clean(1), (3, 3), 1, seed=0)


def test_trigger_estimate_validation_and_storage(tmp_path):
    with pytest.raises(ValidationError):
        TriggerEstimate(np.zeros((4, 4, 3)), np.full((4, 4), 1.5))
    with pytest.raises(ValidationError):
        TriggerEstimate(np.zeros((4, 4, 3)), np.zeros((3, 4)))

    mask = np.zeros((4, 4))
    mask[:2, :2] = 1.0
    estimate = TriggerEstimate(np.full((4, 4, 3), 0.25), mask, [0.5, 0.25, 0.125])
    assert estimate.mask_area == 4.0
    save_trigger_estimate(estimate, str(tmp_path / "est"))
    loaded = load_trigger_estimate(str(tmp_path / "est"))
    assert np.array_equal(loaded.pattern, estimate.pattern)
    assert np.array_equal(loaded.mask, estimate.mask)
    assert loaded.inversion_loss_trace == [0.5, 0.25, 0.125]


def test_apply_inverted_trigger_layouts_agree():
    mask = np.zeros((4, 4))
    mask[1:3, 1:3] = 1.0
    estimate = TriggerEstimate(np.ones((4, 4, 3)), mask)
    images = np.random.default_rng(0).uniform(size=(2, 4, 4, 3)).astype(np.float32)

    stamped = apply_inverted_trigger(images, estimate)
    assert np.all(stamped[:, 1:3, 1:3] == 1.0)
    assert np.array_equal(stamped[:, 0], images[:, 0])
    as_tensor = apply_inverted_trigger(torch.from_numpy(images).permute(0, 3, 1, 2), estimate)
    assert np.allclose(as_tensor.permute(0, 2, 3, 1).numpy(), stamped)


def test_mean_pairwise_cosine():
    assert float(mean_pairwise_cosine(torch.ones(3, 4))) == pytest.approx(1.0)
    assert float(mean_pairwise_cosine(torch.eye(3))) == pytest.approx(0.0)
    with pytest.raises(BatchTooSmallError):
        mean_pairwise_cosine(torch.ones(1, 4))


def test_moth_zero_epochs_is_identity():
    poisoned = _poisoned()
    estimate = TriggerEstimate(np.full((16, 16, 3), 0.5), np.full((16, 16), 0.5))
    teacher = make_teacher_moth(poisoned, _clean(), estimate, 0, seed=0, pretrain_hparams=FAST)
    assert encoder_fingerprint(teacher) == encoder_fingerprint(poisoned)
    assert teacher.metadata["strategy"] == "T-MOTH"
    assert teacher.metadata["inverted_mask_area"] == pytest.approx(128.0)


def test_moth_unlearning_pulls_stamped_toward_clean():
    poisoned = _poisoned()
    clean = _clean()
    mask = np.zeros((16, 16))
    mask[-4:, -4:] = 1.0
    estimate = TriggerEstimate(np.ones((16, 16, 3)), mask)
    images = clean.to_tensor()

    before = stamped_clean_cosine(poisoned, images, estimate)
    teacher = make_teacher_moth(poisoned, clean, estimate, 3, seed=0, pretrain_hparams=FAST)
    assert stamped_clean_cosine(teacher, images, estimate) > before
    assert len(teacher.metadata["loss_trace"]) == 3


def test_make_teacher_none_is_a_copy():
    poisoned = _poisoned()
    teacher = make_teacher("NONE", poisoned, _clean())
    assert teacher is not poisoned
    assert encoder_fingerprint(teacher) == encoder_fingerprint(poisoned)
    assert teacher.metadata["strategy"] == "T-NONE"


def test_make_teacher_dispatch_leaves_poisoned_unmodified():
    poisoned = _poisoned()
    before = encoder_fingerprint(poisoned)
    hparams = TeacherHParams(finetune_epochs=1, unlearn_epochs=1, inversion_steps=2,
                             prune_fraction=0.25)
    strategies = {}
    for method in TeacherMethod:
        teacher = make_teacher(method, poisoned, _clean(), hparams, seed=0,
                               pretrain_hparams=FAST, trigger_shape=(3, 3))
        strategies[method.value] = teacher.metadata["strategy"]
        assert encoder_fingerprint(poisoned) == before
    assert strategies == {"NONE": "T-NONE", "FT": "T-FT", "FP": "T-FP", "ANP": "T-ANP",
                          "MOTH": "T-MOTH"}


def test_make_teacher_moth_records_inversion_trace():
    hparams = TeacherHParams(unlearn_epochs=1, inversion_steps=2)
    teacher = make_teacher(TeacherMethod.MOTH, _poisoned(), _clean(), hparams, seed=0,
                           pretrain_hparams=FAST, trigger_shape=(3, 3))
    assert len(teacher.metadata["inversion_loss_trace"]) == 3
    assert teacher.metadata["inverted_mask_area"] >= 0
