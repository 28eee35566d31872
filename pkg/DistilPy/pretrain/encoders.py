"""
Contains
========

* NeuronGate
* Encoder
* build_encoder, void_encoder
* encoder_fingerprint, parameter_vector, backbone_parameter_count
* save_encoder, load_encoder

Architectures (see DistilPy/docs/architectures.md for the tap table):

* ``tiny-cnn`` two conv stages (16, 32 channels) on 16x16 inputs, 32-d
  embedding. Uses GroupNorm so train and eval mode compute the same function.
* ``RN18``, ``RN34``, ``RN50`` CIFAR-style torchvision ResNets (3x3 stem, no
  max pooling); one tap after each residual stage.
"""
from __future__ import annotations

import copy
import hashlib
import os

import torch
import torch.nn as nn
import torchvision

from DistilPy.base import ValidationError, logger
from DistilPy.core.seeding import derive_seed, torch_seed
from DistilPy.core.types import parse_architecture

CHECKPOINT_FORMAT = "distilpy-encoder"
CHECKPOINT_VERSION = 1

TINY_WIDTHS = (16, 32)
TINY_EMBEDDING_DIM = 32


class NeuronGate(nn.Module):

    """
    Per-channel gate placed on a tap: ``x * mask * (1 + noise)``. ``mask``
    holds 0 for pruned channels; ``noise`` is the multiplicative perturbation
    used by adversarial neuron pruning and is zero otherwise.
    """

    def __init__(self, channels):
        super(NeuronGate, self).__init__()
        self.register_buffer("mask", torch.ones(channels))
        self.register_buffer("noise", torch.zeros(channels))

    @property
    def channels(self):
        return int(self.mask.shape[0])

    def forward(self, x):
        scale = self.mask * (1.0 + self.noise)
        return x * scale.view(1, -1, 1, 1)

    def prune(self, channels):
        """
        Zeroes the mask of the given channels. Idempotent.
        """
        with torch.no_grad():
            self.mask[torch.as_tensor(list(channels), dtype=torch.long)] = 0.0

    def pruned(self):
        return [int(i) for i in torch.nonzero(self.mask == 0).flatten()]


def _tiny_stage(in_channels, out_channels):
    return nn.Sequential(
        nn.Conv2d(in_channels, out_channels, kernel_size=3, padding=1),
        nn.GroupNorm(4, out_channels),
        nn.ReLU(inplace=False),
        nn.MaxPool2d(2),
    )


def _tiny_cnn():
    stages = [_tiny_stage(3, TINY_WIDTHS[0]), _tiny_stage(TINY_WIDTHS[0], TINY_WIDTHS[1])]
    head = nn.Linear(TINY_WIDTHS[1], TINY_EMBEDDING_DIM)
    return nn.Identity(), stages, TINY_WIDTHS, head, TINY_EMBEDDING_DIM


def _cifar_resnet(factory, widths):
    net = factory(weights=None)
    net.conv1 = nn.Conv2d(3, 64, kernel_size=3, stride=1, padding=1, bias=False)
    stem = nn.Sequential(net.conv1, net.bn1, net.relu)
    stages = [net.layer1, net.layer2, net.layer3, net.layer4]
    return stem, stages, widths, nn.Identity(), widths[-1]


def _resnet18():
    return _cifar_resnet(torchvision.models.resnet18, (64, 128, 256, 512))


def _resnet34():
    return _cifar_resnet(torchvision.models.resnet34, (64, 128, 256, 512))


def _resnet50():
    return _cifar_resnet(torchvision.models.resnet50, (256, 512, 1024, 2048))


_BUILDERS = {
    "tiny-cnn": _tiny_cnn,
    "RN18": _resnet18,
    "RN34": _resnet34,
    "RN50": _resnet50,
}


class Encoder(nn.Module):

    """
    Image encoder with one tap per stage.

    ``forward(images)`` takes an (N, 3, H, W) batch and returns
    ``(embedding, taps)``: the (N, embedding_dim) embedding and the list of
    gated stage outputs, one (N, C_k, H_k, W_k) tensor per tap.

    USAGE
    =====

    >>> encoder = build_encoder("tiny-cnn", seed=0)
    >>> embedding, taps = encoder(torch.rand(4, 3, 16, 16))
    >>> embedding.shape, [tuple(t.shape) for t in taps]
    (torch.Size([4, 32]), [(4, 16, 8, 8), (4, 32, 4, 4)])

    METHODS
    =======

    * embed(images)
    * project(embedding)
    * tap_channels
    """

    def __init__(self, architecture):
        super(Encoder, self).__init__()
        self.architecture = parse_architecture(architecture)
        stem, stages, widths, head, embedding_dim = _BUILDERS[self.architecture]()
        self.stem = stem
        self.stages = nn.ModuleList(stages)
        self.gates = nn.ModuleList(NeuronGate(width) for width in widths)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = head
        self.embedding_dim = int(embedding_dim)
        # Only the contrastive objective reads the projector
        self.projector = nn.Sequential(
            nn.Linear(self.embedding_dim, self.embedding_dim),
            nn.ReLU(inplace=False),
            nn.Linear(self.embedding_dim, self.embedding_dim),
        )
        self.metadata = {}

    @property
    def tap_channels(self):
        return [gate.channels for gate in self.gates]

    @property
    def num_taps(self):
        return len(self.gates)

    def forward(self, images):
        x = self.stem(images)
        taps = []
        for stage, gate in zip(self.stages, self.gates):
            x = gate(stage(x))
            taps.append(x)
        embedding = self.head(torch.flatten(self.pool(x), 1))
        return embedding, taps

    def embed(self, images):
        return self.forward(images)[0]

    def project(self, embedding):
        return self.projector(embedding)

    def __repr__(self):
        return "Encoder(%s, taps=%r, embedding_dim=%d)" % (
            self.architecture, self.tap_channels, self.embedding_dim)


def build_encoder(architecture, seed):
    """
    A freshly initialized encoder; equal seeds give bit-equal parameters.
    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(torch_seed(seed))
        encoder = Encoder(architecture)
    return encoder


def void_encoder(architecture, seed):
    """
    The untrained initialization shared by pre-training, warm-up training and
    the VOID student for a given root seed.
    """
    encoder = build_encoder(architecture, derive_seed(seed, "init"))
    encoder.metadata = {"strategy": "VOID", "stage": "init", "loss_trace": []}
    return encoder


def clone_encoder(encoder, **metadata):
    twin = copy.deepcopy(encoder)
    twin.metadata = dict(encoder.metadata)
    twin.metadata.update(metadata)
    return twin


def parameter_vector(encoder):
    return torch.nn.utils.parameters_to_vector(
        [p.detach() for p in encoder.parameters()]).clone()


def backbone_parameter_count(encoder):
    """
    Trainable parameters of stem, stages and embedding head (projector
    excluded).
    """
    modules = [encoder.stem, encoder.stages, encoder.head]
    return sum(p.numel() for module in modules for p in module.parameters())


def encoder_fingerprint(encoder):
    """
    sha256 over every parameter and buffer (gate masks included), first 16
    hex digits.
    """
    digest = hashlib.sha256(encoder.architecture.encode())
    for name, tensor in sorted(encoder.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()[:16]


def save_encoder(encoder, path):
    container = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "architecture": encoder.architecture,
        "embedding_dim": encoder.embedding_dim,
        "tap_channels": encoder.tap_channels,
        "state_dict": encoder.state_dict(),
        "metadata": encoder.metadata,
    }
    torch.save(container, path)
    logger.debug("Saved %r to %s", encoder, path)


def load_encoder(path):
    if not os.path.isfile(path):
        raise ValidationError("path", "no encoder checkpoint at %s" % path)
    container = torch.load(path, map_location="cpu")
    if container.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError("path", "%s is not a DistilPy encoder checkpoint" % path)
    encoder = Encoder(container["architecture"])
    encoder.load_state_dict(container["state_dict"])
    encoder.metadata = dict(container.get("metadata") or {})
    return encoder
