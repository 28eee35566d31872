"""
Persistence of encoders in the artifact store. An encoder artifact holds::

    encoder.pt            torch container (see DistilPy/docs/checkpoints.md)
    loss_trace.csv        epoch,loss
    attack_manifest.json  attack artifacts only
"""
import json
import os

import pandas as pd

from DistilPy.base import logger
from DistilPy.core.types import ArtifactKind
from DistilPy.pretrain.encoders import encoder_fingerprint, load_encoder, save_encoder

ENCODER_FILE = "encoder.pt"
TRACE_FILE = "loss_trace.csv"
ATTACK_MANIFEST_FILE = "attack_manifest.json"


def write_loss_trace(trace, path):
    pd.DataFrame({"epoch": range(len(trace)), "loss": [float(v) for v in trace]}).to_csv(
        path, index=False)


def read_loss_trace(path):
    return pd.read_csv(path, float_precision="round_trip")["loss"].tolist()


def encoder_writer(encoder):
    def write(directory):
        save_encoder(encoder, os.path.join(directory, ENCODER_FILE))
        write_loss_trace(encoder.metadata.get("loss_trace", []), os.path.join(directory, TRACE_FILE))
        if "attack" in encoder.metadata:
            with open(os.path.join(directory, ATTACK_MANIFEST_FILE), "w") as handle:
                json.dump(encoder.metadata["attack"], handle, indent=2, sort_keys=True)
    return write


def stored_encoder(store, ref):
    return load_encoder(store.payload(ref, ENCODER_FILE))


def cached_encoder(store, stage, params, parents, build, iteration_index=0):
    """
    Returns ``(ref, encoder)`` for the encoder produced by ``stage`` from
    ``params`` and ``parents``, calling ``build()`` only on a cache miss.
    """
    key = store.key(stage, params, parents)
    ref = store.get(ArtifactKind.ENCODER, stage, key)
    if ref is not None:
        return ref, stored_encoder(store, ref)
    encoder = build()
    metadata = {name: value for name, value in encoder.metadata.items() if name != "loss_trace"}
    metadata["fingerprint"] = encoder_fingerprint(encoder)
    metadata["params"] = params
    ref = store.publish(ArtifactKind.ENCODER, stage, key, encoder_writer(encoder),
                        parents=parents, metadata=metadata, iteration_index=iteration_index)
    logger.debug("Published %s encoder %s", stage, ref.artifact_hash)
    return ref, encoder
