import numpy as np
import pytest
import torch

from DistilPy.base import BatchTooSmallError, ValidationError
from DistilPy.core.store import ArtifactStore, dataset_ref
from DistilPy.core.types import *
from DistilPy.data.datasets import load_dataset
from DistilPy.distill import *
from DistilPy.pretrain.encoders import build_encoder, encoder_fingerprint, parameter_vector, \
    void_encoder

LOSSES = (loss_fitnets, loss_cc, loss_atd, loss_afd, loss_sp, loss_kd)

FAST = PretrainHParams(epochs=0, batch_size=8, augmentation="none")


def _view(seed=0, batch=2, student=None):
    rng = np.random.default_rng(seed)
    shapes = [(batch, 3, 2, 2), (batch, 2, 2, 2)]
    teacher_taps = [torch.from_numpy(rng.normal(size=s)) for s in shapes]
    teacher_embedding = torch.from_numpy(rng.normal(size=(batch, 4)))
    if student is None:
        student_taps = [torch.from_numpy(rng.normal(size=s)) for s in shapes]
        student_embedding = torch.from_numpy(rng.normal(size=(batch, 4)))
    else:
        student_taps, student_embedding = student(teacher_taps, teacher_embedding)
    return DistillBatchView(teacher_taps, teacher_embedding, student_taps, student_embedding)


def _normalized_attention(tap, p=2.0):
    values = (np.abs(tap) ** p).sum(axis=1).reshape(len(tap), -1)
    return values / np.linalg.norm(values, axis=1, keepdims=True)


def _attention_oracle(teacher, student):
    gap = _normalized_attention(student.numpy()) - _normalized_attention(teacher.numpy())
    return np.linalg.norm(gap, axis=1).mean()


def _softmax(x, axis=1):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def test_attention_map_example():
    tap = torch.tensor([[[[1., 2.], [3., 4.]], [[0., 1.], [1., 0.]]]])
    assert torch.equal(attention_map(tap, 2).values, torch.tensor([[[1., 5.], [10., 16.]]]))


def test_attention_map_edge_cases():
    assert torch.all(attention_map(torch.zeros(2, 3, 4, 4)).values == 0)
    tap = torch.randn(2, 1, 3, 3)
    assert torch.allclose(attention_map(tap, 2).values, tap[:, 0] ** 2)
    with pytest.raises(ValidationError):
        attention_map(tap, 0.5)


def test_every_loss_vanishes_on_identical_views():
    view = _view(1, batch=3, student=lambda taps, embedding: (
        [t.clone() for t in taps], embedding.clone()))
    for loss in LOSSES:
        assert float(loss(view)) == pytest.approx(0.0, abs=1e-12), loss.__name__


def test_every_loss_is_non_negative():
    for seed in range(5):
        view = _view(seed, batch=3)
        for loss in LOSSES:
            assert float(loss(view)) >= 0.0, loss.__name__


def test_atd_matches_oracle():
    view = _view(2)
    expected = sum(_attention_oracle(t, s) for t, s in view.pairs())
    assert abs(float(loss_atd(view)) - expected) < 1e-10


def test_atd_and_sp_ignore_positive_scaling_of_student_taps():
    scale = torch.tensor([0.5, 3.0], dtype=torch.float64).view(-1, 1, 1, 1)
    view = _view(3, student=lambda taps, embedding: (
        [t * scale for t in taps], embedding.clone()))
    assert float(loss_atd(view)) == pytest.approx(0.0, abs=1e-10)
    assert float(loss_sp(view)) == pytest.approx(0.0, abs=1e-10)


def test_fitnets_shift_and_oracle():
    shift = torch.tensor([1.0, -2.0, 0.5, 0.0], dtype=torch.float64)
    view = _view(4, batch=3, student=lambda taps, embedding: (taps, embedding + shift))
    assert float(loss_fitnets(view)) == pytest.approx(float(shift.pow(2).sum()) / 4)

    view = _view(5, batch=3)
    expected = np.mean((view.student_embedding.numpy() - view.teacher_embedding.numpy()) ** 2)
    assert float(loss_fitnets(view)) == pytest.approx(expected, abs=1e-12)


def test_cc_matches_gram_oracle():
    view = _view(6, batch=3)

    def cosine_gram(x):
        unit = x / np.linalg.norm(x, axis=1, keepdims=True)
        return unit @ unit.T

    gap = cosine_gram(view.student_embedding.numpy()) - cosine_gram(view.teacher_embedding.numpy())
    assert float(loss_cc(view)) == pytest.approx(np.linalg.norm(gap) / 9, abs=1e-12)


def test_cc_ignores_rotations():
    q, _ = np.linalg.qr(np.random.default_rng(7).normal(size=(4, 4)))
    rotation = torch.from_numpy(q)
    view = _view(8, batch=4, student=lambda taps, embedding: (taps, embedding @ rotation))
    assert float(loss_cc(view)) == pytest.approx(0.0, abs=1e-10)


def test_sp_matches_gram_oracle():
    view = _view(9)

    def gram(tap):
        rows = tap.numpy().reshape(len(tap), -1)
        rows = rows / np.linalg.norm(rows, axis=1, keepdims=True)
        g = rows @ rows.T
        return g / np.linalg.norm(g, axis=1, keepdims=True)

    expected = sum(((gram(s) - gram(t)) ** 2).sum() / 4 for t, s in view.pairs())
    assert float(loss_sp(view)) == pytest.approx(expected, abs=1e-12)


def test_afd_matches_weighted_oracle():
    view = _view(10)
    masses = np.array([(np.abs(t.numpy()) ** 2).sum(axis=1).mean() / t.shape[1]
                       for t in view.teacher_taps])
    weights = _softmax(masses, axis=0)
    assert np.allclose(afd_weights(view).numpy(), weights)
    expected = sum(w * _attention_oracle(t, s) for w, (t, s) in zip(weights, view.pairs()))
    assert float(loss_afd(view)) == pytest.approx(expected, abs=1e-10)


def test_afd_dead_teacher_tap_gets_uniform_weight():
    def dead_first(taps, embedding):
        return [t.clone() + 1.0 for t in taps], embedding

    view = _view(11, student=dead_first)
    view = DistillBatchView([torch.zeros_like(view.teacher_taps[0]), view.teacher_taps[1]],
                            view.teacher_embedding, view.student_taps, view.student_embedding)
    assert np.allclose(afd_weights(view).numpy(), [0.5, 0.5])
    assert float(loss_afd(view)) == pytest.approx(0.5 * float(loss_atd(view)), abs=1e-12)


def test_kd_matches_oracle():
    view = _view(12)
    t = 2.0

    def kl(teacher, student):
        p = _softmax(teacher / t)
        q = _softmax(student / t)
        return (p * (np.log(p) - np.log(q))).sum(axis=1).mean()

    expected = kl(view.teacher_embedding.numpy(), view.student_embedding.numpy())
    assert float(loss_kd(view, t, include_taps=False)) == pytest.approx(t * t * expected,
                                                                       abs=1e-10)
    for teacher, student in view.pairs():
        expected += kl(teacher.numpy().mean(axis=(2, 3)), student.numpy().mean(axis=(2, 3)))
    assert float(loss_kd(view, t)) == pytest.approx(t * t * expected, abs=1e-10)


def test_kd_large_temperature_limit():
    view = _view(13)
    assert float(loss_kd(view, 1e6, scale_by_t2=False)) < 1e-6
    with pytest.raises(ValidationError):
        loss_kd(view, 0.0)


def test_kd_gradient_vanishes_exactly_on_identical_outputs():
    def copy(taps, embedding):
        return ([tap.clone().requires_grad_(True) for tap in taps],
                embedding.clone().requires_grad_(True))
    view = _view(15, batch=4, student=copy)
    loss = loss_kd(view, 4.0)
    loss.backward()
    assert float(loss) == 0.0
    for tensor in list(view.student_taps) + [view.student_embedding]:
        assert torch.count_nonzero(tensor.grad) == 0


def test_batch_relational_losses_need_two_examples():
    view = _view(14, batch=1)
    with pytest.raises(BatchTooSmallError):
        loss_cc(view)
    with pytest.raises(BatchTooSmallError):
        loss_sp(view)


def test_losses_are_permutation_invariant():
    view = _view(15, batch=4)
    order = torch.tensor([2, 0, 3, 1])
    permuted = DistillBatchView([t[order] for t in view.teacher_taps], view.teacher_embedding[order],
                                [s[order] for s in view.student_taps], view.student_embedding[order])
    for loss in LOSSES:
        assert float(loss(permuted)) == pytest.approx(float(loss(view)), rel=1e-10, abs=1e-14)


def test_view_rejects_mismatched_shapes():
    view = _view(16)
    with pytest.raises(ValidationError):
        DistillBatchView(view.teacher_taps, view.teacher_embedding, view.student_taps[:1],
                         view.student_embedding)
    with pytest.raises(ValidationError):
        DistillBatchView(view.teacher_taps, view.teacher_embedding,
                         [view.student_taps[0], view.student_taps[0]], view.student_embedding)


@pytest.mark.parametrize("loss", LOSSES, ids=lambda loss: loss.__name__)
def test_loss_gradients_match_finite_differences(loss):
    for seed in range(50):
        view = _view(100 + seed)
        inputs = [s.clone().requires_grad_(True) for s in view.student_taps] + \
            [view.student_embedding.clone().requires_grad_(True)]

        def objective(*student):
            return loss(DistillBatchView(view.teacher_taps, view.teacher_embedding,
                                         list(student[:-1]), student[-1]))

        assert torch.autograd.gradcheck(objective, inputs, eps=1e-6, atol=1e-6, rtol=1e-4)


def test_distillation_loss_dispatch():
    view = _view(17)
    assert float(distillation_loss("ATD", view)) == pytest.approx(float(loss_atd(view)))
    assert float(distillation_loss(LossKind.KD, view, DistillOptions(kd_include_taps=False))) == \
        pytest.approx(float(loss_kd(view, include_taps=False)))
    assert loss_label("SP") == "L-SP"
    assert [loss_label(kind) for kind in LossKind] == \
        ["F-FitNets", "F-CC", "AT-AFD", "AT-ATD", "L-SP", "L-KD"]


def _clean(count=16):
    return load_dataset("SYNTH-TINY", Split.TRAIN).subset(np.arange(count))


def test_init_student_strategies():
    poisoned = build_encoder("tiny-cnn", 5)
    clean = _clean()

    raw = init_student("RAW", poisoned, clean, FAST, seed=1)
    assert torch.equal(parameter_vector(raw), parameter_vector(poisoned))
    assert raw.metadata["strategy"] == "RAW"

    void_a = init_student("VOID", poisoned, clean, FAST, seed=1)
    void_b = init_student(StudentStrategy.VOID, poisoned, clean, FAST, seed=1)
    assert encoder_fingerprint(void_a) == encoder_fingerprint(void_b)
    assert encoder_fingerprint(void_a) == encoder_fingerprint(void_encoder("tiny-cnn", 1))

    warm = init_student("WARMUP", poisoned, clean, FAST, seed=1)
    assert encoder_fingerprint(warm) == encoder_fingerprint(void_a)

    with pytest.raises(ValidationError):
        init_student("RAW", poisoned, clean, FAST, seed=1, architecture="RN18")


def test_distill_zero_epochs_keeps_student():
    teacher = build_encoder("tiny-cnn", 1)
    student = build_encoder("tiny-cnn", 2)
    distilled = distill(teacher, student, _clean(), "ATD", 0, seed=0)
    assert encoder_fingerprint(distilled) == encoder_fingerprint(student)
    assert distilled.metadata["loss_kind"] == "ATD"
    assert distilled.metadata["teacher"] == encoder_fingerprint(teacher)


@pytest.mark.parametrize("kind", list(LossKind), ids=lambda kind: kind.value)
def test_distill_fixed_point_of_identical_networks(kind):
    teacher = build_encoder("tiny-cnn", 3)
    student = build_encoder("tiny-cnn", 3)
    distilled = distill(teacher, student, _clean(), kind, 2,
                        OptimizerHParams(batch_size=8), seed=0, augmentation="none")
    trace = distilled.metadata["loss_trace"]
    assert len(trace) == 2
    assert all(value <= 1e-6 for value in trace)


def test_distill_moves_student_and_freezes_teacher():
    teacher = build_encoder("tiny-cnn", 1)
    student = build_encoder("tiny-cnn", 2)
    before = encoder_fingerprint(teacher), encoder_fingerprint(student)
    distilled = distill(teacher, student, _clean(), "FITNETS", 3,
                        OptimizerHParams(batch_size=8), seed=0, augmentation="none")
    assert (encoder_fingerprint(teacher), encoder_fingerprint(student)) == before
    assert encoder_fingerprint(distilled) != before[1]
    assert distilled.metadata["loss_trace"][-1] < distilled.metadata["loss_trace"][0]


def test_distill_rejects_tap_mismatch():
    with pytest.raises(ValidationError):
        distill(build_encoder("tiny-cnn", 1), build_encoder("RN18", 1), _clean(), "ATD", 1)


def _iterative_config(**changes):
    config = ExperimentConfig(
        pretrain_dataset="SYNTH-TINY", downstream_dataset="SYNTH-TINY", architecture="tiny-cnn",
        attack=AttackSpec(trigger=solid_trigger(3)), distill_epochs=1,
        optimizer=OptimizerHParams(batch_size=8),
        pretrain=PretrainHParams(epochs=1, batch_size=8, augmentation="none"),
        teacher=TeacherHParams(finetune_epochs=1))
    return config.replace(**changes)


def test_iterative_distill_lineage(tmp_path):
    store = ArtifactStore(str(tmp_path))
    poisoned = build_encoder("tiny-cnn", 9)
    poisoned_ref = dataset_ref("poisoned", "p0150ed")
    clean_ref = dataset_ref("clean", "c1ea4")
    config = _iterative_config(iterations=3)

    chain = iterative_distill(poisoned, config, 3, _clean(), poisoned_ref, clean_ref, store)
    assert len(chain) == 3
    assert [teacher.iteration_index for teacher, _ in chain] == [0, 1, 2]
    assert [student.iteration_index for _, student in chain] == [0, 1, 2]
    assert store.read_manifest(chain[0][0])["parents"] == [poisoned_ref.artifact_hash,
                                                          clean_ref.artifact_hash]
    for iteration in (1, 2):
        teacher, student = chain[iteration]
        previous = chain[iteration - 1][1]
        assert store.read_manifest(teacher)["parents"] == [previous.artifact_hash,
                                                           clean_ref.artifact_hash]
        assert teacher.parent_hash == previous.artifact_hash
        assert store.read_manifest(student)["parents"] == [teacher.artifact_hash,
                                                           previous.artifact_hash,
                                                           clean_ref.artifact_hash]


def test_iterative_distill_single_shot_and_cache(tmp_path):
    store = ArtifactStore(str(tmp_path))
    poisoned = build_encoder("tiny-cnn", 9)
    refs = dataset_ref("poisoned", "p0150ed"), dataset_ref("clean", "c1ea4")
    config = _iterative_config(student_strategy="RAW")

    first = iterative_distill(poisoned, config, 1, _clean(), *refs, store=store)
    assert len(first) == 1
    misses = store.misses
    again = iterative_distill(poisoned, config, 1, _clean(), *refs, store=store)
    assert again == first
    assert store.misses == misses


def test_iterative_distill_keys_on_the_clean_subset(tmp_path):
    store = ArtifactStore(str(tmp_path))
    poisoned = build_encoder("tiny-cnn", 9)
    poisoned_ref = dataset_ref("poisoned", "p0150ed")
    config = _iterative_config(student_strategy="RAW")

    small = iterative_distill(poisoned, config, 1, _clean(), poisoned_ref,
                              dataset_ref("clean", "5ma11"), store)
    large = iterative_distill(poisoned, config, 1, _clean(), poisoned_ref,
                              dataset_ref("clean", "1a29e"), store)
    assert small[0][0].path != large[0][0].path
    assert small[0][1].path != large[0][1].path


def test_iterative_distill_validation(tmp_path):
    store = ArtifactStore(str(tmp_path))
    refs = dataset_ref("poisoned", "p0150ed"), dataset_ref("clean", "c1ea4")
    poisoned = build_encoder("tiny-cnn", 9)
    with pytest.raises(ValidationError):
        iterative_distill(poisoned, _iterative_config(), 0, _clean(), *refs, store=store)
    with pytest.raises(ValidationError):
        iterative_distill(poisoned, _iterative_config(teacher_method="FP"), 2, _clean(), *refs,
                          store=store)
