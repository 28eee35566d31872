"""
Contains
========

* ArtifactStore
* dataset_ref

Artifacts live in a content addressed tree::

    $DISTILPY_ROOT/artifacts/<kind>/<stage>/<key>/
        manifest.json
        <payload files>

``key`` is ``config_hash`` of the stage name, the stage parameters and the
keys of the parent artifacts, so a change anywhere upstream changes every key
downstream of it and nothing else.
"""
from __future__ import annotations

import datetime
import hashlib
import json
import os
import shutil
import tempfile

import networkx as nx

from DistilPy.base import StaleArtifactError, logger
from DistilPy.config import constants
from DistilPy.core.configfile import config_hash
from DistilPy.core.types import ArtifactKind, ArtifactRef

MANIFEST_NAME = "manifest.json"


def default_root():
    return os.environ.get(constants.ROOT_ENV_VAR, constants.DEFAULT_ROOT)


def file_sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def dataset_ref(name, fingerprint, path=""):
    """
    The root of every lineage chain: a dataset identified by its manifest
    hash.
    """
    return ArtifactRef(kind=ArtifactKind.DATASET_SUBSET, path=path,
                       lineage=(("dataset", fingerprint),))


class ArtifactStore:

    """
    Content addressed artifact store with a lineage graph.

    USAGE
    =====

    >>> store = ArtifactStore("/tmp/distilpy")
    >>> key = store.key("pretrain", {"epochs": 0}, parents=[data_ref])
    >>> ref = store.get(ArtifactKind.ENCODER, "pretrain", key)
    >>> if ref is None:
    ...     ref = store.publish(ArtifactKind.ENCODER, "pretrain", key, writer,
    ...                         parents=[data_ref])

    ``writer`` is called with a fresh directory and must write the payload
    files into it. Publication is atomic: readers either see the complete
    directory or nothing.

    METHODS
    =======

    * key(stage, params, parents)
    * get(kind, stage, key)
    * publish(kind, stage, key, writer, parents, metadata, iteration_index)
    * verify(ref)
    * read_manifest(ref)
    * ancestors(ref)
    """

    def __init__(self, root=None):
        self.root = os.path.abspath(root or default_root())
        self.artifacts_dir = os.path.join(self.root, "artifacts")
        self.graph = nx.DiGraph()
        self.hits = 0
        self.misses = 0

    def __repr__(self):
        return "ArtifactStore(%r, hits=%d, misses=%d)" % (self.root, self.hits, self.misses)

    @staticmethod
    def key(stage, params, parents=()):
        return config_hash({
            "stage": stage,
            "params": params,
            "parents": [parent.artifact_hash for parent in parents],
        })

    def path_for(self, kind, stage, key):
        kind = ArtifactKind.parse(kind)
        return os.path.join(self.artifacts_dir, kind.value.lower(), stage, key)

    def _ref_from_manifest(self, path, manifest):
        return ArtifactRef(kind=manifest["kind"], path=path,
                           lineage=tuple(tuple(pair) for pair in manifest["lineage"]),
                           iteration_index=manifest.get("iteration_index", 0))

    def _track(self, ref, parent_hashes):
        self.graph.add_node(ref.artifact_hash, stage=ref.stage, kind=ref.kind.value,
                            path=ref.path)
        for parent in parent_hashes:
            self.graph.add_edge(parent, ref.artifact_hash)

    def get(self, kind, stage, key):
        """
        Returns the stored ArtifactRef or None. A stored artifact whose payload
        no longer matches its manifest raises StaleArtifactError.
        """
        path = self.path_for(kind, stage, key)
        if not os.path.isfile(os.path.join(path, MANIFEST_NAME)):
            self.misses += 1
            logger.info("Cache miss %s/%s", stage, key)
            return None
        manifest = self._read_manifest_at(path)
        ref = self._ref_from_manifest(path, manifest)
        self.verify(ref, manifest)
        self._track(ref, manifest.get("parents", ()))
        self.hits += 1
        logger.info("Cache hit %s/%s", stage, key)
        return ref

    def publish(self, kind, stage, key, writer, parents=(), metadata=None,
                iteration_index=0):
        kind = ArtifactKind.parse(kind)
        final = self.path_for(kind, stage, key)
        primary = parents[0].lineage if parents else ()
        ref = ArtifactRef(kind=kind, path=final, lineage=((stage, key),) + tuple(primary),
                          iteration_index=iteration_index)

        os.makedirs(os.path.dirname(final), exist_ok=True)
        staging = tempfile.mkdtemp(prefix=".tmp-%s-" % key, dir=os.path.dirname(final))
        try:
            writer(staging)
            files = {}
            for name in sorted(os.listdir(staging)):
                files[name] = file_sha256(os.path.join(staging, name))
            manifest = {
                "kind": kind.value,
                "stage": stage,
                "key": key,
                "lineage": [list(pair) for pair in ref.lineage],
                "parents": [parent.artifact_hash for parent in parents],
                "iteration_index": iteration_index,
                "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
                "files": files,
                "metadata": metadata or {},
            }
            with open(os.path.join(staging, MANIFEST_NAME), "w") as handle:
                json.dump(manifest, handle, indent=2, sort_keys=True)
            try:
                os.rename(staging, final)
            except OSError:
                # Another worker published the same key first
                logger.debug("Artifact %s/%s already published, reusing it", stage, key)
                shutil.rmtree(staging, ignore_errors=True)
        except BaseException:
            shutil.rmtree(staging, ignore_errors=True)
            raise

        self._track(ref, [parent.artifact_hash for parent in parents])
        logger.info("Stored %s artifact %s/%s", kind.value, stage, key)
        return ref

    def _read_manifest_at(self, path):
        try:
            with open(os.path.join(path, MANIFEST_NAME)) as handle:
                return json.load(handle)
        except (OSError, ValueError) as error:
            raise StaleArtifactError("unreadable manifest in %s: %s" % (path, error))

    def read_manifest(self, ref):
        return self._read_manifest_at(ref.path)

    def verify(self, ref, manifest=None):
        manifest = manifest or self.read_manifest(ref)
        if manifest.get("key") != ref.artifact_hash:
            raise StaleArtifactError(
                "manifest in %s names key %s, expected %s"
                % (ref.path, manifest.get("key"), ref.artifact_hash))
        for name, expected in manifest.get("files", {}).items():
            path = os.path.join(ref.path, name)
            if not os.path.isfile(path) or file_sha256(path) != expected:
                raise StaleArtifactError("payload %s does not match its manifest" % path)
        return manifest

    def load_ref(self, path):
        """
        The verified ArtifactRef of an artifact directory.
        """
        path = os.path.abspath(path)
        manifest = self._read_manifest_at(path)
        ref = self._ref_from_manifest(path, manifest)
        self.verify(ref, manifest)
        self._track(ref, manifest.get("parents", ()))
        return ref

    def payload(self, ref, name):
        return os.path.join(ref.path, name)

    def ancestors(self, ref):
        """
        Hashes of every artifact ``ref`` was derived from, as far as this
        store has seen them.
        """
        if ref.artifact_hash not in self.graph:
            return set()
        return nx.ancestors(self.graph, ref.artifact_hash)

    def lineage_graph(self):
        """
        Rebuilds the lineage graph from every manifest on disk.
        """
        for dirpath, _, filenames in os.walk(self.artifacts_dir):
            if MANIFEST_NAME in filenames and not os.path.basename(dirpath).startswith(".tmp"):
                manifest = self._read_manifest_at(dirpath)
                self._track(self._ref_from_manifest(dirpath, manifest),
                            manifest.get("parents", ()))
        return self.graph
