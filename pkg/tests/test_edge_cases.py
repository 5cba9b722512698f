"""Edge cases: depth capping, singleton explanations, oversized terminal groups."""
import json

import pytest

import hiertree as ht
from hiertree.service import handlers, schemas
from hiertree.tree import initial_class_embeddings

from helpers import build_planted_tree, planted_spec, scripted_gateway


class TestMaxDepth:
    def test_depth_one_caps_all_recursion(self):
        spec = planted_spec(n_groups=3, classes_per_group=6, epsilon=0.05, spread=0.3)
        embedder = ht.SyntheticEmbeddingProvider(seed=8, dim=40, spec=spec)
        cfg = ht.BuildConfig(group_ratio=0.17, leaf_threshold=2, direct_threshold=4,
                             max_depth=1, seed=8)
        tree, gateway = build_planted_tree(spec, embedder, cfg)

        def deepest(node):
            return node.depth if node.is_leaf else max(deepest(c) for c in node.children)

        assert deepest(tree.root) <= 1
        # groups beyond the direct threshold still get summary + comparison
        # even though they cannot recurse further
        oversized = [
            leaf for leaf in tree.leaves() if len(leaf.members) > cfg.direct_threshold
        ]
        for leaf in oversized:
            assert leaf.summary is not None
            assert set(leaf.descriptions) == set(leaf.members)

    def test_oversized_terminal_leaf_scores_normally(self):
        spec = planted_spec(n_groups=2, classes_per_group=8, epsilon=0.05, spread=0.3)
        embedder = ht.SyntheticEmbeddingProvider(seed=3, dim=32, spec=spec)
        cfg = ht.BuildConfig(group_ratio=0.125, leaf_threshold=2, direct_threshold=5,
                             max_depth=1, seed=3)
        tree, _ = build_planted_tree(spec, embedder, cfg)
        for cls in tree.class_ids:
            assert ht.path_descriptions(tree, cls).depth_count >= 1


class TestExplainFallbackClasses:
    def _singleton_tree(self, tmp_path):
        spec = ht.ClusterSpec(
            groups=(ht.GroupSpec("g1", ("solo1",)), ht.GroupSpec("g2", ("solo2",))),
            epsilon=0.0,
        )
        embedder = ht.SyntheticEmbeddingProvider(seed=0, dim=8, spec=spec)
        gateway = scripted_gateway()
        classes = ["solo1", "solo2"]
        initial = initial_class_embeddings(classes, gateway, embedder)
        cfg = ht.BuildConfig(group_ratio=1.0, leaf_threshold=2, direct_threshold=10)
        tree = ht.build_tree(classes, initial, cfg, gateway, embedder)

        tree_path = str(tmp_path / "tree.json")
        ht.save_tree(tree_path, tree)
        images = {"img_solo1": embedder.embed_image_ref("img with solo1 content")}
        labels = {c: embedder.embed_text([c])[0] for c in classes}
        images_path = str(tmp_path / "img.hteb")
        labels_path = str(tmp_path / "lab.hteb")
        ht.write_embeddings(images_path, images)
        ht.write_embeddings(labels_path, labels)
        return tree_path, images_path, labels_path

    def test_report_includes_fallback_class_without_levels(self, tmp_path):
        tree_path, images_path, labels_path = self._singleton_tree(tmp_path)
        resp = handlers.explain_handler(
            schemas.ExplainRequest(
                tree_path=tree_path,
                image_embeddings_path=images_path,
                label_embeddings_path=labels_path,
                image_id="img_solo1",
                top_k=2,
            )
        )
        assert resp.report["predicted"] == "solo1"
        # both classes were singletons at the root split: no description lines
        for trace in resp.report["traces"]:
            assert trace["levels"] == []
            assert isinstance(trace["s"], float)


class TestEvaluateBaselineFlag:
    def test_tree_ignored_when_baseline_requested(self, workspace):
        resp = handlers.evaluate_handler(
            schemas.EvaluateRequest(
                manifest_path=workspace["manifest_path"],
                image_embeddings_path=workspace["images_path"],
                label_embeddings_path=workspace["labels_emb_path"],
                tree_path=workspace["tree_path"],
                baseline=True,
            )
        )
        assert resp.eval["method"] == "baseline"


class TestSweepGroupRatioCli:
    def test_group_ratio_sweep_via_cli(self, workspace, tmp_path):
        from hiertree.cli import main

        out = str(tmp_path / "gr.csv")
        code = main([
            "sweep",
            "--param", "group_ratio",
            "--values", "0.25",
            "--manifest", workspace["manifest_path"],
            "--image-embeddings", workspace["images_path"],
            "--label-embeddings", workspace["labels_emb_path"],
            "--labels", workspace["labels_path"],
            "--provider", "replay",
            "--fixtures", workspace["fixtures_dir"],
            "--embedder", "synthetic",
            "--embedder-spec", workspace["embspec_path"],
            "--leaf-threshold", "4",
            "--out", out,
        ])
        assert code == 0
        lines = open(out).read().splitlines()
        assert len(lines) == 2
        assert lines[1].startswith("group_ratio,0.25,") and ",ok," in lines[1]


class TestProvenance:
    def test_tree_records_provider_and_digest(self, workspace):
        tree = ht.load_tree(workspace["tree_path"])
        assert tree.provenance["provider_id"] == "scripted"
        assert len(tree.provenance["cache_digest"]) == 64

    def test_build_log_has_node_counts(self, workspace, tmp_path):
        from hiertree.cli import main

        out = str(tmp_path / "t.json")
        main([
            "build-tree",
            "--labels", workspace["labels_path"],
            "--provider", "replay",
            "--fixtures", workspace["fixtures_dir"],
            "--embedder-spec", workspace["embspec_path"],
            "--group-ratio", "0.25",
            "--leaf-threshold", "4",
            "--out", out,
        ])
        log = json.loads(open(out + ".log.json").read())
        assert any(counts.get("compare") for counts in log["node_calls"].values())
        assert log["provenance"]["provider_id"] == "replay"


class TestTemplateOverrides:
    def test_custom_templates_change_cache_keys(self, workspace, tmp_path):
        # a reworded compare template misses the recorded fixtures: replay fails
        templates = {
            "compare": {
                "body": "Contrast these categories: {class_list}. "
                        "Use '### <category>' headings with '- ' bullets.",
                "role_preamble": "You are terse.",
            }
        }
        path = tmp_path / "templates.json"
        path.write_text(json.dumps(templates))
        from hiertree.cli import main

        code = main([
            "build-tree",
            "--labels", workspace["labels_path"],
            "--provider", "replay",
            "--fixtures", workspace["fixtures_dir"],
            "--templates", str(path),
            "--embedder-spec", workspace["embspec_path"],
            "--group-ratio", "0.25",
            "--leaf-threshold", "4",
            "--out", str(tmp_path / "t.json"),
        ])
        assert code == 3  # CacheMiss: new prompt text, no recording

    def test_invalid_template_missing_placeholder(self, workspace, tmp_path):
        path = tmp_path / "templates.json"
        path.write_text(json.dumps({"compare": {"body": "no placeholder here"}}))
        from hiertree.cli import main

        code = main([
            "build-tree",
            "--labels", workspace["labels_path"],
            "--provider", "replay",
            "--fixtures", workspace["fixtures_dir"],
            "--templates", str(path),
            "--embedder-spec", workspace["embspec_path"],
            "--out", str(tmp_path / "t.json"),
        ])
        assert code == 2  # rejected at load: {class_list} required


class TestExplainDepthTruncation:
    def test_max_depth_used_truncates_levels(self, workspace):
        image_id = f"img_{{}}_000".format(json.loads(open(workspace["labels_path"]).read())[0])
        full = handlers.explain_handler(
            schemas.ExplainRequest(
                tree_path=workspace["tree_path"],
                image_embeddings_path=workspace["images_path"],
                label_embeddings_path=workspace["labels_emb_path"],
                image_id=image_id,
                top_k=1,
            )
        )
        cut = handlers.explain_handler(
            schemas.ExplainRequest(
                tree_path=workspace["tree_path"],
                image_embeddings_path=workspace["images_path"],
                label_embeddings_path=workspace["labels_emb_path"],
                image_id=image_id,
                fusion=schemas.FusionParams(max_depth_used=1),
                top_k=1,
            )
        )
        top_full = full.report["traces"][0]
        top_cut = cut.report["traces"][0]
        assert len(top_cut["q"]) == min(1, len(top_full["q"]))
        assert len(top_cut["levels"]) == len(top_cut["q"])
