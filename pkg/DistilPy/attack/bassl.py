"""
Data-poisoning attack: the attacker only edits the pre-training set, then
the victim pre-trains as usual.
"""
from DistilPy.base import AttackConstructionError, logger
from DistilPy.core.seeding import derive_seed
from DistilPy.core.types import AttackMethod, PretrainHParams
from DistilPy.data.poison import build_bassl_poison_set
from DistilPy.pretrain.contrastive import contrastive_pretrain


def bassl_poison(pretrain_set, spec, architecture, hparams=PretrainHParams(), seed=0,
                 downstream_target_images=()):
    if spec.method is not AttackMethod.BASSL:
        raise AttackConstructionError("bassl_poison needs a BASSL attack spec")
    poisoned_set = build_bassl_poison_set(pretrain_set, spec, downstream_target_images,
                                          seed=derive_seed(seed, "bassl"))
    logger.info("attack: BASSL pre-training on %d images (%d inserted)",
                len(poisoned_set), len(poisoned_set) - len(pretrain_set))
    encoder = contrastive_pretrain(poisoned_set, architecture, hparams, seed)
    encoder.metadata.update(stage="attack", strategy="BASSL", attack=spec.manifest())
    return encoder
