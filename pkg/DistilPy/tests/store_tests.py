import json
import os

import pytest

from DistilPy.base import StaleArtifactError
from DistilPy.core.store import *
from DistilPy.core.types import ArtifactKind


def _writer(text):
    def write(directory):
        with open(os.path.join(directory, "payload.txt"), "w") as handle:
            handle.write(text)
    return write


def test_publish_and_get(tmp_path):
    store = ArtifactStore(str(tmp_path))
    data = dataset_ref("SYNTH-TINY", "abc")
    key = store.key("pretrain", {"epochs": 1}, [data])
    assert store.get(ArtifactKind.ENCODER, "pretrain", key) is None
    assert store.misses == 1

    ref = store.publish(ArtifactKind.ENCODER, "pretrain", key, _writer("hello"), parents=[data])
    assert ref.lineage == (("pretrain", key), ("dataset", "abc"))
    assert ref.stage == "pretrain"
    assert ref.parent_hash == "abc"
    assert os.path.isfile(store.payload(ref, "payload.txt"))

    again = store.get(ArtifactKind.ENCODER, "pretrain", key)
    assert again == ref
    assert store.hits == 1
    assert store.read_manifest(ref)["parents"] == ["abc"]


def test_key_depends_on_params_and_parents():
    a = dataset_ref("SYNTH-TINY", "a")
    b = dataset_ref("SYNTH-TINY", "b")
    assert ArtifactStore.key("s", {"x": 1, "y": 2}, [a]) == ArtifactStore.key("s", {"y": 2, "x": 1}, [a])
    assert ArtifactStore.key("s", {"x": 1}, [a]) != ArtifactStore.key("s", {"x": 2}, [a])
    assert ArtifactStore.key("s", {"x": 1}, [a]) != ArtifactStore.key("s", {"x": 1}, [b])
    assert ArtifactStore.key("s", {"x": 1}, [a]) != ArtifactStore.key("t", {"x": 1}, [a])


def test_tampered_payload_is_stale(tmp_path):
    store = ArtifactStore(str(tmp_path))
    key = store.key("pretrain", {}, [])
    ref = store.publish(ArtifactKind.ENCODER, "pretrain", key, _writer("hello"))
    with open(store.payload(ref, "payload.txt"), "w") as handle:
        handle.write("tampered")
    with pytest.raises(StaleArtifactError):
        store.get(ArtifactKind.ENCODER, "pretrain", key)


def test_corrupt_manifest_is_stale(tmp_path):
    store = ArtifactStore(str(tmp_path))
    key = store.key("pretrain", {}, [])
    ref = store.publish(ArtifactKind.ENCODER, "pretrain", key, _writer("hello"))
    with open(os.path.join(ref.path, MANIFEST_NAME), "w") as handle:
        handle.write("{not json")
    with pytest.raises(StaleArtifactError):
        store.get(ArtifactKind.ENCODER, "pretrain", key)


def test_republishing_reuses_the_artifact(tmp_path):
    store = ArtifactStore(str(tmp_path))
    key = store.key("attack", {}, [])
    first = store.publish(ArtifactKind.ENCODER, "attack", key, _writer("one"))
    second = store.publish(ArtifactKind.ENCODER, "attack", key, _writer("two"))
    assert first == second
    with open(store.payload(first, "payload.txt")) as handle:
        assert handle.read() == "one"
    leftovers = [name for name in os.listdir(os.path.dirname(first.path)) if name.startswith(".tmp")]
    assert leftovers == []


def test_lineage_graph(tmp_path):
    store = ArtifactStore(str(tmp_path))
    data = dataset_ref("SYNTH-TINY", "data")
    clean = store.publish(ArtifactKind.ENCODER, "pretrain", "k1", _writer("a"), parents=[data])
    poisoned = store.publish(ArtifactKind.ENCODER, "attack", "k2", _writer("b"), parents=[clean])
    student = store.publish(ArtifactKind.ENCODER, "distill", "k3", _writer("c"),
                            parents=[poisoned], iteration_index=0)
    assert store.ancestors(student) == {"data", "k1", "k2"}
    assert student.lineage[-1] == ("dataset", "data")

    fresh = ArtifactStore(str(tmp_path))
    graph = fresh.lineage_graph()
    assert graph.has_edge("k1", "k2") and graph.has_edge("k2", "k3")
    assert fresh.load_ref(student.path) == student


def test_default_root(monkeypatch, tmp_path):
    monkeypatch.setenv("DISTILPY_ROOT", str(tmp_path))
    assert ArtifactStore().root == os.path.abspath(str(tmp_path))
    manifest = {"a": 1}
    path = tmp_path / "f.json"
    path.write_text(json.dumps(manifest))
    assert len(file_sha256(str(path))) == 64
