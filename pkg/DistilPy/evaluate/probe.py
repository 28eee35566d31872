"""
Contains
========

* Classifier
* embed_images
* train_head, train_downstream

The downstream classifier is an MLP head (embedding -> 512 -> 256 -> classes)
trained on the embeddings of a frozen encoder.
"""
from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from DistilPy.base import TrainingFailure, ValidationError, logger
from DistilPy.config import constants
from DistilPy.core.seeding import derive_seed, torch_seed
from DistilPy.core.types import Split, TrainingHParams
from DistilPy.data.poison import resize_images
from DistilPy.pretrain.encoders import encoder_fingerprint
from DistilPy.pretrain.training import run_epochs


def build_head(embedding_dim, num_classes, seed):
    hidden = constants.PROBE_HIDDEN_WIDTHS
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(torch_seed(seed))
        return nn.Sequential(
            nn.Linear(embedding_dim, hidden[0]),
            nn.ReLU(),
            nn.Linear(hidden[0], hidden[1]),
            nn.ReLU(),
            nn.Linear(hidden[1], num_classes),
        )


def embed_images(encoder, images, batch_size=constants.DEFAULT_BATCH_SIZE, input_size=None):
    """
    Embeddings of an (N, H, W, C) array under the frozen encoder, resized to
    ``input_size`` (H, W) first when it differs.
    """
    images = np.asarray(images, dtype=np.float32)
    encoder.eval()
    chunks = []
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            batch = images[start:start + batch_size]
            if input_size is not None:
                batch = resize_images(batch, input_size)
            tensor = torch.from_numpy(np.array(batch)).permute(0, 3, 1, 2)
            chunks.append(encoder.embed(tensor))
    if not chunks:
        return torch.zeros(0, encoder.embedding_dim)
    return torch.cat(chunks)


class Classifier:

    """
    Frozen encoder followed by a trained head.

    USAGE
    =====

    >>> classifier = train_downstream(encoder, train_set, epochs=50, seed=0)
    >>> classifier.predict(test_set.images[:4])
    array([2, 0, 1, 1])

    Ties between class scores resolve to the lowest class index.
    """

    def __init__(self, encoder, head, num_classes, input_size=None):
        self.encoder = encoder
        self.head = head
        self.num_classes = int(num_classes)
        self.input_size = tuple(input_size) if input_size is not None else None

    def scores_from_embeddings(self, embeddings):
        self.head.eval()
        with torch.no_grad():
            return self.head(embeddings)

    def scores(self, images):
        return self.scores_from_embeddings(
            embed_images(self.encoder, images, input_size=self.input_size))

    def predict(self, images):
        scores = self.scores(images).numpy()
        if scores.shape[0] == 0:
            return np.zeros(0, dtype=np.int64)
        # numpy returns the first maximal index
        return np.argmax(scores, axis=1).astype(np.int64)


def train_head(embeddings, labels, num_classes, hparams=TrainingHParams(), seed=0):
    """
    Trains an MLP head with cross entropy on fixed embeddings; ``epochs=0``
    returns the seeded initialization.
    """
    embeddings = torch.as_tensor(embeddings, dtype=torch.float32)
    labels = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    head = build_head(int(embeddings.shape[1]), num_classes, derive_seed(seed, "head/init"))
    head.train()

    def step(indices):
        return F.cross_entropy(head(embeddings[indices]), labels[indices])

    trace = run_epochs("downstream", head.parameters(), int(labels.shape[0]), step,
                       hparams.epochs, hparams.learning_rate, hparams.batch_size,
                       derive_seed(seed, "head/batches"))
    head.eval()
    return head, trace


def train_downstream(encoder, train_set, epochs, seed, hparams=TrainingHParams(),
                     input_size=None):
    """
    Trains the downstream head on ``train_set`` embeddings of the frozen
    ``encoder``. The encoder is not modified. ``input_size`` (H, W) resizes
    images whose resolution differs from the encoder's pre-training input.
    """
    if train_set.split is not Split.TRAIN:
        raise ValidationError("train_set", "downstream heads are trained on TRAIN splits")
    if input_size is not None and tuple(input_size) == train_set.image_shape[:2]:
        input_size = None
    before = encoder_fingerprint(encoder)
    embeddings = embed_images(encoder, train_set.images, hparams.batch_size, input_size)
    head, trace = train_head(embeddings, train_set.labels, train_set.num_classes,
                             TrainingHParams(epochs, hparams.learning_rate, hparams.batch_size),
                             seed)
    if encoder_fingerprint(encoder) != before:
        raise TrainingFailure("downstream", epochs, "the frozen encoder changed")
    if trace:
        logger.info("downstream: %s head trained for %d epochs, final loss %.4f",
                    train_set.name, epochs, trace[-1])
    return Classifier(encoder, head, train_set.num_classes, input_size)
