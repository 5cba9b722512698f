import json

import httpx
import pytest

from hiertree import (
    DescriptionGateway,
    DescriptionSet,
    HttpChatProvider,
    PromptTemplate,
    ReplayProvider,
    ScriptedProvider,
    parse_description_list,
    render_description_sets,
)
from hiertree.errors import (
    CacheMiss,
    InvalidClassId,
    InvalidInput,
    MissingClassInResponse,
    ParseFailure,
    ProviderUnavailable,
    Transport,
)
from hiertree.gateway import DEFAULT_TEMPLATES, cache_key, validate_templates

from helpers import rule_respond


class TestParse:
    def test_two_class_blocks(self):
        raw = "### cat\n- agile body\n### tiger\n- bold stripes"
        sets = parse_description_list(raw, ["cat", "tiger"])
        assert sets["cat"].lines == ("agile body",)
        assert sets["tiger"].lines == ("bold stripes",)

    def test_empty_raw(self):
        with pytest.raises(ParseFailure):
            parse_description_list("", ["cat"])

    def test_order_independent(self):
        forward = "### cat\n- agile body\n### tiger\n- bold stripes"
        backward = "### tiger\n- bold stripes\n### cat\n- agile body"
        a = parse_description_list(forward, ["cat", "tiger"])
        b = parse_description_list(backward, ["cat", "tiger"])
        assert a == b

    def test_missing_class(self):
        with pytest.raises(MissingClassInResponse):
            parse_description_list("### a\n- something", ["a", "b"])

    def test_tolerates_surrounding_prose(self):
        raw = (
            "Sure! Here are the comparisons you asked for.\n\n"
            "### house wren\n- reddish-brown coloration with fine streaking\n\n"
            "### winter wren\n- dark brown coloration with a mottled appearance\n"
            "Hope this helps!"
        )
        sets = parse_description_list(raw, ["house wren", "winter wren"])
        assert sets["house wren"].lines == (
            "reddish-brown coloration with fine streaking",
        )

    def test_deduplicates_lines(self):
        raw = "### cat\n- agile body\n- agile body\n- short fur"
        sets = parse_description_list(raw, ["cat"])
        assert sets["cat"].lines == ("agile body", "short fur")

    def test_heading_match_is_case_insensitive(self):
        raw = "### Cat\n- agile body"
        sets = parse_description_list(raw, ["cat"])
        assert sets["cat"].class_id == "cat"

    def test_round_trip(self):
        sets = [
            DescriptionSet(class_id="cat", node_id="root/0", lines=("agile body", "short fur")),
            DescriptionSet(class_id="tiger", node_id="root/0", lines=("bold stripes",)),
        ]
        rendered = render_description_sets(sets)
        parsed = parse_description_list(rendered, ["cat", "tiger"])
        for ds in sets:
            assert parsed[ds.class_id].lines == ds.lines

    def test_numbered_bullets_accepted(self):
        sets = parse_description_list("### cat\n1. agile body\n2) soft paws", ["cat"])
        assert sets["cat"].lines == ("agile body", "soft paws")


class TestDescriptionSet:
    def test_rejects_empty_lines(self):
        with pytest.raises(InvalidInput):
            DescriptionSet(class_id="cat", node_id="", lines=("",))

    def test_rejects_duplicates(self):
        with pytest.raises(InvalidInput):
            DescriptionSet(class_id="cat", node_id="", lines=("fur", "fur"))

    def test_rejects_empty_class(self):
        with pytest.raises(InvalidClassId):
            DescriptionSet(class_id="", node_id="", lines=("fur",))


class TestTemplates:
    def test_defaults_validate(self):
        validate_templates(DEFAULT_TEMPLATES)

    def test_missing_placeholder_rejected(self):
        broken = dict(DEFAULT_TEMPLATES)
        broken["compare"] = PromptTemplate(name="compare", body="no placeholders here")
        with pytest.raises(InvalidInput):
            validate_templates(broken)

    def test_render_replaces_placeholders(self):
        t = PromptTemplate(name="x", body="describe {class} among {class_list}")
        assert t.render(**{"class": "cat", "class_list": "cat, dog"}) == (
            "describe cat among cat, dog"
        )


class TestGatewayOps:
    def test_initial_descriptions_parsed(self):
        gw = DescriptionGateway(ScriptedProvider(["- striped fur\n- orange coat"]))
        ds = gw.generate_initial_descriptions("tiger")
        assert ds.lines == ("striped fur", "orange coat")

    def test_initial_rejects_empty_class(self):
        gw = DescriptionGateway(ScriptedProvider([""]))
        with pytest.raises(InvalidClassId):
            gw.generate_initial_descriptions("")

    def test_summary_passthrough(self):
        gw = DescriptionGateway(ScriptedProvider(["small songbirds of North America"]))
        birds = [f"bird{i}" for i in range(12)]
        assert gw.summarize_group(birds) == "small songbirds of North America"

    def test_summary_empty_group(self):
        gw = DescriptionGateway(ScriptedProvider([]))
        with pytest.raises(InvalidInput):
            gw.summarize_group([])

    def test_compare_single_class_rejected(self):
        gw = DescriptionGateway(ScriptedProvider([]))
        with pytest.raises(InvalidInput):
            gw.compare_group(["a"])

    def test_compare_returns_set_per_class(self):
        gw = DescriptionGateway(ScriptedProvider(rule_respond))
        sets = gw.compare_group(["house wren", "winter wren"])
        assert set(sets) == {"house wren", "winter wren"}

    def test_compare_missing_class_raises_after_retry(self):
        provider = ScriptedProvider(["### a\n- something", "### a\n- something else"])
        gw = DescriptionGateway(provider)
        with pytest.raises(MissingClassInResponse):
            gw.compare_group(["a", "b"])
        assert len(provider.calls) == 2  # one reinforced retry, no more

    def test_parse_failure_retried_once_with_reinforcement(self):
        provider = ScriptedProvider(["complete nonsense", "### a\n- fine\n### b\n- ok"])
        gw = DescriptionGateway(provider)
        sets = gw.compare_group(["a", "b"])
        assert sets["a"].lines == ("fine",)
        assert "did not follow the required format" in provider.calls[1].prompt

    def test_summary_used_in_prompt(self):
        provider = ScriptedProvider(rule_respond)
        gw = DescriptionGateway(provider)
        gw.compare_group(["a", "b"], summary="both are fuzzy")
        assert "both are fuzzy" in provider.calls[0].prompt


class TestCaching:
    def test_cache_hit_skips_provider(self, tmp_path):
        provider = ScriptedProvider(rule_respond)
        gw = DescriptionGateway(provider, cache_dir=str(tmp_path))
        birds = [f"bird{i}" for i in range(12)]
        first = gw.summarize_group(birds)
        second = gw.summarize_group(birds)
        assert first == second
        assert len(provider.calls) == 1

    def test_cache_file_format(self, tmp_path):
        gw = DescriptionGateway(ScriptedProvider(rule_respond), cache_dir=str(tmp_path))
        gw.summarize_group(["a", "b", "c"])
        files = list(tmp_path.iterdir())
        assert len(files) == 1
        record = json.loads(files[0].read_text())
        assert set(record) == {"prompt", "response", "provider_id", "timestamp"}
        assert len(files[0].name) == 64  # hex sha-256

    def test_key_depends_on_class_names(self):
        t = DEFAULT_TEMPLATES["compare"]
        a = cache_key(t.name, t.render(class_list="cat, dog"))
        b = cache_key(t.name, t.render(class_list="cat, wolf"))
        assert a != b

    def test_replay_from_fixtures(self, tmp_path):
        recording = DescriptionGateway(ScriptedProvider(rule_respond), cache_dir=str(tmp_path))
        want = recording.compare_group(["cat", "tiger"])

        replay = DescriptionGateway(ReplayProvider(), fixtures_dir=str(tmp_path))
        got = replay.compare_group(["cat", "tiger"])
        assert {c: s.lines for c, s in got.items()} == {c: s.lines for c, s in want.items()}

    def test_replay_miss_raises(self, tmp_path):
        replay = DescriptionGateway(ReplayProvider(), fixtures_dir=str(tmp_path))
        with pytest.raises(CacheMiss):
            replay.compare_group(["cat", "tiger"])

    def test_replay_never_touches_network(self, tmp_path, monkeypatch):
        recording = DescriptionGateway(ScriptedProvider(rule_respond), cache_dir=str(tmp_path))
        recording.compare_group(["cat", "tiger"])

        def explode(*args, **kwargs):
            raise AssertionError("network call attempted in replay mode")

        monkeypatch.setattr(httpx.Client, "send", explode)
        monkeypatch.setattr(httpx, "request", explode)
        replay = DescriptionGateway(ReplayProvider(), fixtures_dir=str(tmp_path))
        assert replay.compare_group(["cat", "tiger"])

    def test_cache_digest_stable(self, tmp_path):
        def run():
            gw = DescriptionGateway(
                ScriptedProvider(rule_respond), cache_dir=str(tmp_path)
            )
            gw.compare_group(["cat", "tiger"])
            gw.summarize_group(["cat", "tiger", "lion"])
            return gw.cache_digest()

        assert run() == run()


class TestHttpChatProvider:
    def _provider(self, handler, **kwargs):
        transport = httpx.MockTransport(handler)
        return HttpChatProvider(
            url="http://chat.test/v1/chat", api_key="k", transport=transport,
            backoff=0.0, **kwargs
        )

    def test_parses_chat_response(self):
        def handler(request):
            body = json.loads(request.content)
            assert body["messages"][-1]["role"] == "user"
            assert request.headers["authorization"] == "Bearer k"
            return httpx.Response(
                200, json={"choices": [{"message": {"content": "- fluffy"}}]}
            )

        provider = self._provider(handler)
        gw = DescriptionGateway(provider)
        assert gw.generate_initial_descriptions("cat").lines == ("fluffy",)

    def test_retries_transport_errors(self):
        attempts = {"n": 0}

        def handler(request):
            attempts["n"] += 1
            if attempts["n"] < 3:
                raise httpx.ConnectError("refused")
            return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})

        from hiertree.providers import ProviderRequest

        provider = self._provider(handler)
        resp = provider.complete(ProviderRequest(prompt="x"))
        assert resp.text == "ok" and attempts["n"] == 3

    def test_gives_up_after_max_attempts(self):
        def handler(request):
            raise httpx.ConnectError("refused")

        provider = self._provider(handler)
        from hiertree.providers import ProviderRequest

        with pytest.raises(Transport):
            provider.complete(ProviderRequest(prompt="x"))

    def test_no_url_configured(self, monkeypatch):
        monkeypatch.delenv("HIERTREE_API_URL", raising=False)
        with pytest.raises(ProviderUnavailable):
            HttpChatProvider(url=None)


class TestHttpChatProviderErrors:
    def _provider(self, handler):
        return HttpChatProvider(
            url="http://chat.test/v1/chat", api_key="k",
            transport=httpx.MockTransport(handler), backoff=0.0,
        )

    def test_4xx_not_retried(self):
        attempts = {"n": 0}

        def handler(request):
            attempts["n"] += 1
            return httpx.Response(401, text="bad key")

        from hiertree.providers import ProviderRequest

        with pytest.raises(ProviderUnavailable):
            self._provider(handler).complete(ProviderRequest(prompt="x"))
        assert attempts["n"] == 1

    def test_5xx_retried_then_succeeds(self):
        attempts = {"n": 0}

        def handler(request):
            attempts["n"] += 1
            if attempts["n"] < 2:
                return httpx.Response(503, text="overloaded")
            return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})

        from hiertree.providers import ProviderRequest

        resp = self._provider(handler).complete(ProviderRequest(prompt="x"))
        assert resp.text == "ok" and attempts["n"] == 2

    def test_malformed_body_is_schema_mismatch(self):
        from hiertree.errors import SchemaMismatch
        from hiertree.providers import ProviderRequest

        def handler(request):
            return httpx.Response(200, json={"unexpected": True})

        with pytest.raises(SchemaMismatch):
            self._provider(handler).complete(ProviderRequest(prompt="x"))

    def test_negative_temperature_rejected(self):
        from hiertree.providers import ProviderRequest

        with pytest.raises(ValueError):
            ProviderRequest(prompt="x", temperature=-0.5)


class TestCacheEdgeCases:
    def test_corrupt_cache_file(self, tmp_path):
        from hiertree.gateway import ResponseCache

        key = "a" * 64
        (tmp_path / key).write_text("{broken json")
        cache = ResponseCache(str(tmp_path), readonly=True)
        with pytest.raises(ParseFailure):
            cache.get(key)

    def test_clear_refuses_readonly(self, tmp_path):
        from hiertree.errors import InvalidInput
        from hiertree.gateway import ResponseCache

        with pytest.raises(InvalidInput):
            ResponseCache(str(tmp_path), readonly=True).clear()

    def test_non_key_files_ignored(self, tmp_path):
        from hiertree.gateway import ResponseCache

        (tmp_path / "README").write_text("not a cache entry")
        gw = DescriptionGateway(ScriptedProvider(rule_respond), cache_dir=str(tmp_path))
        gw.summarize_group(["a", "b"])
        cache = ResponseCache(str(tmp_path), readonly=True)
        assert len(cache.keys()) == 1  # README excluded

    def test_initial_retry_on_formatless_answer(self):
        provider = ScriptedProvider(["no bullets at all", "- proper bullet"])
        gw = DescriptionGateway(provider)
        ds = gw.generate_initial_descriptions("cat")
        assert ds.lines == ("proper bullet",)
        assert len(provider.calls) == 2

    def test_scripted_queue_exhaustion(self):
        gw = DescriptionGateway(ScriptedProvider([]))
        with pytest.raises(ProviderUnavailable):
            gw.summarize_group(["a", "b"])
