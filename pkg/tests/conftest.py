import json
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "default",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def workspace(tmp_path_factory):
    """On-disk corpus: labels, embedder spec, replay fixtures, embeddings, manifest.

    Fixtures are recorded by running the full initial+build flow once with a
    scripted provider; replay-mode runs then serve everything from disk.
    """
    import hiertree as ht
    from hiertree.tree import initial_class_embeddings

    from helpers import planted_corpus, planted_spec, rule_respond

    root = tmp_path_factory.mktemp("workspace")
    spec = planted_spec(n_groups=3, classes_per_group=4, epsilon=0.02, spread=0.12)
    embedder = ht.SyntheticEmbeddingProvider(seed=0, dim=32, spec=spec)
    classes = list(spec.class_names())

    (root / "labels.json").write_text(json.dumps(classes))
    (root / "embspec.json").write_text(json.dumps(spec.to_json_obj()))

    fixtures = root / "fx"
    gateway = ht.DescriptionGateway(ht.ScriptedProvider(rule_respond), cache_dir=str(fixtures))
    build_cfg = ht.BuildConfig(group_ratio=0.25, leaf_threshold=4, direct_threshold=10, seed=0)
    initial = initial_class_embeddings(classes, gateway, embedder)
    tree = ht.build_tree(classes, initial, build_cfg, gateway, embedder)
    ht.save_tree(str(root / "tree.json"), tree)

    manifest, images, labels = planted_corpus(spec, embedder, images_per_class=5)
    ht.save_manifest(str(root / "manifest.json"), manifest)
    ht.write_embeddings(str(root / "images.hteb"), images)
    ht.write_embeddings(str(root / "labels.hteb"), labels)

    return {
        "root": root,
        "spec": spec,
        "classes": classes,
        "build_cfg": build_cfg,
        "labels_path": str(root / "labels.json"),
        "embspec_path": str(root / "embspec.json"),
        "fixtures_dir": str(fixtures),
        "tree_path": str(root / "tree.json"),
        "manifest_path": str(root / "manifest.json"),
        "images_path": str(root / "images.hteb"),
        "labels_emb_path": str(root / "labels.hteb"),
    }
