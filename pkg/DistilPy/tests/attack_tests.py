import math

import numpy as np
import pytest
import torch
import torch.nn as nn

from DistilPy.base import AttackConstructionError, NumericalDegeneracyError
from DistilPy.core.types import *
from DistilPy.data.datasets import LabeledDataset, load_dataset
from DistilPy.data.poison import stamp_tensor, stamp_trigger
from DistilPy.attack.badencoder import *
from DistilPy.attack.bassl import *
from DistilPy.pretrain.encoders import build_encoder, encoder_fingerprint, parameter_vector


class LinearEncoder(nn.Module):

    # embed(x) = W . flatten(x); W may be swapped for a plain tensor in gradchecks

    def __init__(self, weight):
        super(LinearEncoder, self).__init__()
        self.weight = weight

    def embed(self, images):
        return torch.flatten(images, 1) @ self.weight.t()


def _cos(u, v):
    return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))


def test_effect_vanishes_when_reference_is_the_stamped_input():
    torch.manual_seed(0)
    encoder = build_encoder("tiny-cnn", 0)
    encoder.eval()
    trigger = solid_trigger(3)
    shadow = torch.rand(1, 3, 16, 16)
    reference = stamp_tensor(shadow, trigger)
    with torch.no_grad():
        effect, utility = badencoder_terms(encoder, encoder, shadow, trigger, reference)
    assert abs(float(effect)) < 1e-6
    assert abs(float(utility)) < 1e-6


def test_effect_pairs_every_shadow_with_every_reference():
    rng = np.random.default_rng(5)
    weight = rng.normal(size=(4, 3 * 4 * 4))
    encoder = LinearEncoder(torch.from_numpy(weight))
    trigger = solid_trigger(2, (0.0, 1.0, 0.0))
    shadow = torch.from_numpy(rng.uniform(size=(2, 3, 4, 4)))
    reference = stamp_tensor(shadow, trigger)
    effect, _ = badencoder_terms(encoder, encoder, shadow, trigger, reference)

    first, second = reference.reshape(2, -1).numpy() @ weight.T
    # Matched pairs contribute cosine 1, crossed pairs cos(first, second)
    assert float(effect) == pytest.approx((1.0 - _cos(first, second)) / 2.0, abs=1e-10)
    assert float(effect) > 0


def test_zero_effect_weight_leaves_utility():
    torch.manual_seed(1)
    poisoned = build_encoder("tiny-cnn", 1)
    clean = build_encoder("tiny-cnn", 2)
    shadow = torch.rand(3, 3, 16, 16)
    reference = torch.rand(2, 3, 16, 16)
    trigger = solid_trigger(3)
    with torch.no_grad():
        _, utility = badencoder_terms(poisoned, clean, shadow, trigger, reference)
        loss = badencoder_loss(poisoned, clean, shadow, trigger, reference, 0.0, 1.0)
    assert torch.allclose(loss, utility)


def test_loss_matches_cosine_oracle():
    rng = np.random.default_rng(0)
    trigger = solid_trigger(2, (1.0, 0.0, 1.0))
    w_poisoned = rng.normal(size=(5, 3 * 4 * 4))
    w_clean = rng.normal(size=(5, 3 * 4 * 4))
    shadow = rng.uniform(size=(2, 3, 4, 4))
    reference = rng.uniform(size=(2, 3, 4, 4))

    poisoned = LinearEncoder(torch.from_numpy(w_poisoned))
    clean = LinearEncoder(torch.from_numpy(w_clean))
    loss = badencoder_loss(poisoned, clean, torch.from_numpy(shadow), trigger,
                           torch.from_numpy(reference), 0.7, 1.3)

    stamped = shadow.copy()
    stamped[:, :, 2:, 2:] = np.array([1.0, 0.0, 1.0])[:, None, None]
    embed = lambda w, x: x.reshape(len(x), -1) @ w.T
    effect = 1 - np.mean([_cos(s, r) for s in embed(w_poisoned, stamped)
                          for r in embed(w_poisoned, reference)])
    utility = 1 - np.mean([_cos(p, c) for p, c in zip(embed(w_poisoned, shadow),
                                                      embed(w_clean, shadow))])
    assert abs(float(loss) - (0.7 * effect + 1.3 * utility)) < 1e-10


def test_loss_gradcheck():
    torch.manual_seed(2)
    trigger = solid_trigger(2)
    shadow = torch.rand(2, 3, 4, 4, dtype=torch.float64)
    reference = torch.rand(2, 3, 4, 4, dtype=torch.float64)
    clean = LinearEncoder(torch.randn(6, 48, dtype=torch.float64))
    poisoned = LinearEncoder(None)

    def loss_of(weight):
        poisoned.weight = weight
        return badencoder_loss(poisoned, clean, shadow, trigger, reference, 1.0, 1.0)

    weight = torch.randn(6, 48, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(loss_of, (weight,), eps=1e-6, atol=1e-8, rtol=1e-4)


def test_zero_embedding_is_degenerate():
    poisoned = LinearEncoder(torch.zeros(4, 48))
    clean = LinearEncoder(torch.ones(4, 48))
    with pytest.raises(NumericalDegeneracyError):
        badencoder_loss(poisoned, clean, torch.rand(2, 3, 4, 4), solid_trigger(2),
                        torch.rand(1, 3, 4, 4))


def _shadow_and_references():
    train = load_dataset("SYNTH-TINY", Split.TRAIN)
    shadow = train.subset(range(16))
    references = select_reference_inputs(train.of_class(0), 3, seed=0)
    return shadow, references


def test_zero_epoch_attack_keeps_clean_parameters():
    clean = build_encoder("tiny-cnn", 0)
    shadow, references = _shadow_and_references()
    spec = AttackSpec(solid_trigger(3), 0, AttackMethod.BADENCODER, BadEncoderStrength(epochs=0))
    poisoned = badencoder_poison(clean, spec, shadow, references, seed=0)
    assert torch.equal(parameter_vector(poisoned), parameter_vector(clean))
    assert poisoned.metadata["attack"]["trigger_hash"] == spec.trigger.fingerprint
    assert poisoned.metadata["effect_start"] == poisoned.metadata["effect_end"]


def test_attack_lowers_effect_and_is_pure():
    clean = build_encoder("tiny-cnn", 0)
    clean.eval()
    shadow, references = _shadow_and_references()
    before = encoder_fingerprint(clean)
    images_before = shadow.images.copy()
    strength = BadEncoderStrength(epochs=5, batch_size=8, learning_rate=1e-3)
    spec = AttackSpec(solid_trigger(3), 0, AttackMethod.BADENCODER, strength)
    poisoned = badencoder_poison(clean, spec, shadow, references, seed=1)
    assert poisoned.metadata["effect_end"] < poisoned.metadata["effect_start"]
    assert encoder_fingerprint(clean) == before
    assert np.array_equal(shadow.images, images_before)
    assert len(poisoned.metadata["loss_trace"]) == 5

    again = badencoder_poison(clean, spec, shadow, references, seed=1)
    assert encoder_fingerprint(again) == encoder_fingerprint(poisoned)


def test_attack_rejects_bad_inputs():
    clean = build_encoder("tiny-cnn", 0)
    shadow, references = _shadow_and_references()
    bassl = AttackSpec(solid_trigger(3), 0, AttackMethod.BASSL, BasslStrength())
    with pytest.raises(AttackConstructionError):
        badencoder_poison(clean, bassl, shadow, references)
    with pytest.raises(AttackConstructionError):
        badencoder_poison(clean, AttackSpec(solid_trigger(3)), shadow, references[:0])
    with pytest.raises(AttackConstructionError):
        select_reference_inputs(np.zeros((0, 16, 16, 3)), 3, seed=0)


def test_shadow_and_reference_selection():
    train = load_dataset("SYNTH-TINY", Split.TRAIN)
    shadow = select_shadow_set(train, BadEncoderStrength(shadow_fraction=0.1), seed=3)
    assert len(shadow) == 60
    a = select_reference_inputs(train.of_class(1), 3, seed=3)
    b = select_reference_inputs(train.of_class(1), 3, seed=3)
    assert a.shape == (3, 16, 16, 3)
    assert np.array_equal(a, b)
    assert select_reference_inputs(train.of_class(1), 2, seed=3, image_shape=(8, 8)).shape \
        == (2, 8, 8, 3)


def test_bassl_poison_is_seeded():
    train = load_dataset("SYNTH-TINY", Split.TRAIN).subset(range(20))
    pool = load_dataset("SYNTH-TINY", Split.TEST).of_class(0)[:10]
    spec = AttackSpec(solid_trigger(3), 0, AttackMethod.BASSL, BasslStrength(0.5, 0.6))
    hparams = PretrainHParams(epochs=1, batch_size=8)
    a = bassl_poison(train, spec, "tiny-cnn", hparams, seed=2, downstream_target_images=pool)
    b = bassl_poison(train, spec, "tiny-cnn", hparams, seed=2, downstream_target_images=pool)
    assert encoder_fingerprint(a) == encoder_fingerprint(b)
    assert a.metadata["stage"] == "attack"
    assert a.metadata["strategy"] == "BASSL"

    with pytest.raises(AttackConstructionError):
        bassl_poison(train, AttackSpec(solid_trigger(3)), "tiny-cnn", hparams, 2, pool)
