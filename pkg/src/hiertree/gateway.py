"""Description gateway: prompt templates, response parsing, and caching.

Three prompt strategies feed the tree builder: initial per-class descriptions,
group summaries, and comparative descriptions for all members of a group in a
single prompt (so the model contrasts, rather than describes in isolation).
Responses are cached content-addressed by SHA-256 of (template name, rendered
prompt); replay fixtures use the same file format, loaded read-only.
"""
from __future__ import annotations

import hashlib
import json
import os
import re
import tempfile
import threading
import time
from dataclasses import dataclass, replace

from .errors import (
    InvalidClassId,
    InvalidInput,
    MissingClassInResponse,
    ParseFailure,
)
from .providers import DescriptionProvider, ProviderRequest

_FORMAT_RULES = (
    "Answer with one section per category: a heading line '### <category>' "
    "followed by '- ' bullet lines, one visual descriptor per line. "
    "No other text."
)

_REINFORCE = (
    "\n\nYour previous answer did not follow the required format. "
    "Reply again using EXACTLY one '### <category>' heading per category, "
    "each followed by '- ' bullet lines only."
)


@dataclass(frozen=True)
class PromptTemplate:
    """Named template with {class}, {class_list}, {summary} placeholders."""

    name: str
    body: str
    role_preamble: str = ""

    def render(self, **fields: str) -> str:
        text = self.body
        for key, value in fields.items():
            text = text.replace("{" + key + "}", value)
        return text


# Placeholders each strategy's template must contain, checked at load time.
REQUIRED_PLACEHOLDERS = {
    "initial": ("{class}",),
    "summary": ("{class_list}",),
    "compare": ("{class_list}",),
    "compare_summary": ("{class_list}", "{summary}"),
}

DEFAULT_TEMPLATES = {
    "initial": PromptTemplate(
        name="initial",
        role_preamble="You describe the visual appearance of objects for an image classifier.",
        body=(
            "List the visual features useful for recognizing a {class} in a photo.\n"
            "Answer with '- ' bullet lines only, one feature per line."
        ),
    ),
    "summary": PromptTemplate(
        name="summary",
        role_preamble="You describe the visual appearance of objects for an image classifier.",
        body=(
            "Summarize the overarching visual characteristics shared by the "
            "following categories: {class_list}.\n"
            "Answer with one short paragraph and no list."
        ),
    ),
    "compare": PromptTemplate(
        name="compare",
        role_preamble="You describe the visual appearance of objects for an image classifier.",
        body=(
            "Compare the following categories and describe the visual features "
            "that tell each one apart from the others in this exact set: "
            "{class_list}.\n" + _FORMAT_RULES
        ),
    ),
    "compare_summary": PromptTemplate(
        name="compare_summary",
        role_preamble="You describe the visual appearance of objects for an image classifier.",
        body=(
            "The following categories all share these characteristics: {summary}\n"
            "Within that group, describe the visual features that tell each "
            "category apart from the others: {class_list}.\n" + _FORMAT_RULES
        ),
    ),
}


def validate_templates(templates: dict[str, PromptTemplate]) -> None:
    for kind, required in REQUIRED_PLACEHOLDERS.items():
        if kind not in templates:
            raise InvalidInput(f"missing template {kind!r}")
        body = templates[kind].body
        for placeholder in required:
            if placeholder not in body:
                raise InvalidInput(f"template {kind!r} lacks placeholder {placeholder}")


@dataclass(frozen=True)
class DescriptionSet:
    """Per-class visual descriptors generated at one tree node."""

    class_id: str
    node_id: str
    lines: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.class_id:
            raise InvalidClassId("empty class id")
        if not self.lines:
            raise InvalidInput(f"no description lines for {self.class_id!r}")
        cleaned = tuple(line.strip() for line in self.lines)
        if any(not line for line in cleaned):
            raise InvalidInput("blank description line")
        if len(set(cleaned)) != len(cleaned):
            raise InvalidInput(f"duplicate description lines for {self.class_id!r}")
        object.__setattr__(self, "lines", cleaned)


_HEADING_RE = re.compile(r"^\s{0,3}#{1,6}\s+(.+?)\s*$")
_BULLET_RE = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s+(.*\S)\s*$")


def _parse_bullets(raw: str) -> list[str]:
    lines = []
    for line in raw.splitlines():
        m = _BULLET_RE.match(line)
        if m:
            text = m.group(1).strip()
            if text and text not in lines:
                lines.append(text)
    return lines


def parse_description_list(raw: str, expected_classes: list[str]) -> dict[str, DescriptionSet]:
    """Parse '### class' blocks of '- ' bullets into one DescriptionSet per class.

    Tolerates prose outside class blocks and headings order; every expected
    class must appear with at least one bullet line.
    """
    if not raw or not raw.strip():
        raise ParseFailure("empty response")
    canon = {cls.strip().casefold(): cls for cls in expected_classes}
    blocks: dict[str, list[str]] = {}
    current: str | None = None
    saw_heading = False
    for line in raw.splitlines():
        heading = _HEADING_RE.match(line)
        if heading:
            saw_heading = True
            key = heading.group(1).strip().strip(":").casefold()
            current = canon.get(key)
            if current is not None:
                blocks.setdefault(current, [])
            continue
        if current is None:
            continue
        m = _BULLET_RE.match(line)
        if m:
            text = m.group(1).strip()
            if text and text not in blocks[current]:
                blocks[current].append(text)
    if not saw_heading:
        raise ParseFailure("no class headings found in response")
    missing = [cls for cls in expected_classes if not blocks.get(cls)]
    if missing:
        raise MissingClassInResponse(f"classes absent from response: {missing}")
    return {
        cls: DescriptionSet(class_id=cls, node_id="", lines=tuple(blocks[cls]))
        for cls in expected_classes
    }


def render_description_sets(sets: list[DescriptionSet]) -> str:
    """Inverse of parse_description_list on conformant sets."""
    chunks = []
    for ds in sets:
        chunks.append(f"### {ds.class_id}")
        chunks.extend(f"- {line}" for line in ds.lines)
    return "\n".join(chunks) + "\n"


def cache_key(template_name: str, prompt: str) -> str:
    digest = hashlib.sha256()
    digest.update(template_name.encode("utf-8"))
    digest.update(b"\x00")
    digest.update(prompt.encode("utf-8"))
    return digest.hexdigest()


class ResponseCache:
    """One JSON file per key; concurrent readers, serialized atomic writes."""

    def __init__(self, directory: str, readonly: bool = False) -> None:
        self.directory = directory
        self.readonly = readonly
        self._write_lock = threading.Lock()
        if not readonly:
            os.makedirs(directory, exist_ok=True)

    def _path(self, key: str) -> str:
        return os.path.join(self.directory, key)

    def get(self, key: str) -> dict | None:
        try:
            with open(self._path(key), "r", encoding="utf-8") as fh:
                return json.load(fh)
        except FileNotFoundError:
            return None
        except json.JSONDecodeError as exc:
            raise ParseFailure(f"corrupt cache file {key}: {exc}") from exc

    def put(self, key: str, record: dict) -> None:
        if self.readonly:
            return
        with self._write_lock:
            fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as fh:
                    json.dump(record, fh, ensure_ascii=False, sort_keys=True)
                os.replace(tmp, self._path(key))
            finally:
                if os.path.exists(tmp):
                    os.unlink(tmp)

    def keys(self) -> list[str]:
        if not os.path.isdir(self.directory):
            return []
        return sorted(
            name for name in os.listdir(self.directory)
            if re.fullmatch(r"[0-9a-f]{64}", name)
        )

    def clear(self) -> int:
        if self.readonly:
            raise InvalidInput("cannot clear a read-only fixture directory")
        removed = 0
        for key in self.keys():
            os.unlink(self._path(key))
            removed += 1
        return removed


@dataclass
class GatewayCall:
    """One logical gateway operation, for logs and provenance."""

    kind: str
    class_ids: tuple[str, ...]
    cache_hit: bool
    key: str


class DescriptionGateway:
    """Description generator with template rendering, caching, and replay.

    Lookup order per request: fixtures (read-only), cache (read-write), then
    the provider; provider responses are written back to the cache. At most
    `max_in_flight` provider calls run concurrently.
    """

    def __init__(
        self,
        provider: DescriptionProvider,
        templates: dict[str, PromptTemplate] | None = None,
        cache_dir: str | None = None,
        fixtures_dir: str | None = None,
        temperature: float = 0.0,
        max_tokens: int = 512,
        max_in_flight: int = 4,
    ) -> None:
        self.provider = provider
        self.templates = dict(DEFAULT_TEMPLATES)
        if templates:
            self.templates.update(templates)
        validate_templates(self.templates)
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.cache = ResponseCache(cache_dir) if cache_dir else None
        self.fixtures = ResponseCache(fixtures_dir, readonly=True) if fixtures_dir else None
        self._semaphore = threading.BoundedSemaphore(max(1, max_in_flight))
        self._log_lock = threading.Lock()
        self.calls: list[GatewayCall] = []
        self._responses_seen: dict[str, str] = {}

    # -- plumbing ------------------------------------------------------------

    def _complete(self, kind: str, prompt: str, meta: dict) -> str:
        template = self.templates[kind]
        key = cache_key(template.name, prompt)
        cache_hit = True
        record = self.fixtures.get(key) if self.fixtures else None
        if record is None and self.cache:
            record = self.cache.get(key)
        if record is None:
            cache_hit = False
            request = ProviderRequest(
                prompt=prompt,
                temperature=self.temperature,
                max_tokens=self.max_tokens,
                system=template.role_preamble,
                meta=meta,
            )
            with self._semaphore:
                response = self.provider.complete(request)
            record = {
                "prompt": prompt,
                "response": response.text,
                "provider_id": response.provider_id,
                "timestamp": time.time(),
            }
            if self.cache:
                self.cache.put(key, record)
        with self._log_lock:
            self.calls.append(
                GatewayCall(
                    kind=kind,
                    class_ids=tuple(meta.get("classes", ())),
                    cache_hit=cache_hit,
                    key=key,
                )
            )
            self._responses_seen[key] = hashlib.sha256(
                record["response"].encode("utf-8")
            ).hexdigest()
        return record["response"]

    def cache_digest(self) -> str:
        """Stable digest over every (key, response) pair served this session."""
        digest = hashlib.sha256()
        for key in sorted(self._responses_seen):
            digest.update(key.encode("ascii"))
            digest.update(b":")
            digest.update(self._responses_seen[key].encode("ascii"))
            digest.update(b"\n")
        return digest.hexdigest()

    def call_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for call in self.calls:
            counts[call.kind] = counts.get(call.kind, 0) + 1
        return counts

    # -- operations ----------------------------------------------------------

    def generate_initial_descriptions(self, class_id: str) -> DescriptionSet:
        """Standalone per-class descriptors, not conditioned on other classes."""
        if not class_id or not class_id.strip():
            raise InvalidClassId("empty class id")
        prompt = self.templates["initial"].render(**{"class": class_id})
        meta = {"kind": "initial", "class": class_id, "classes": [class_id]}
        text = self._complete("initial", prompt, meta)
        lines = _parse_bullets(text)
        if not lines:
            text = self._complete("initial", prompt + _REINFORCE, meta)
            lines = _parse_bullets(text)
            if not lines:
                raise ParseFailure(f"no description lines for {class_id!r}")
        return DescriptionSet(class_id=class_id, node_id="", lines=tuple(lines))

    def summarize_group(self, class_ids: list[str]) -> str:
        """One-paragraph summary of what a large group has in common."""
        if not class_ids:
            raise InvalidInput("cannot summarize an empty group")
        prompt = self.templates["summary"].render(class_list=", ".join(class_ids))
        meta = {"kind": "summary", "classes": list(class_ids)}
        text = self._complete("summary", prompt, meta).strip()
        if not text:
            raise ParseFailure("empty summary")
        return text

    def compare_group(
        self, class_ids: list[str], summary: str | None = None
    ) -> dict[str, DescriptionSet]:
        """Discriminative descriptors for every member of one group.

        All members are named in a single prompt; with a summary, the prompt
        additionally scopes the comparison to the group's shared traits.
        """
        if len(class_ids) < 2:
            raise InvalidInput("need at least two classes to compare")
        if summary is not None:
            kind = "compare_summary"
            prompt = self.templates[kind].render(
                class_list=", ".join(class_ids), summary=summary
            )
        else:
            kind = "compare"
            prompt = self.templates[kind].render(class_list=", ".join(class_ids))
        meta = {"kind": kind, "classes": list(class_ids), "summary": summary}
        text = self._complete(kind, prompt, meta)
        try:
            return parse_description_list(text, class_ids)
        except ParseFailure:
            text = self._complete(kind, prompt + _REINFORCE, meta)
            return parse_description_list(text, class_ids)

    def attach_node(self, sets: dict[str, DescriptionSet], node_id: str) -> dict[str, DescriptionSet]:
        return {cls: replace(ds, node_id=node_id) for cls, ds in sets.items()}


def replay_gateway(fixtures_dir: str, **kwargs) -> DescriptionGateway:
    """Gateway that serves recorded fixtures only and never touches the network."""
    from .providers import ReplayProvider

    return DescriptionGateway(ReplayProvider(), fixtures_dir=fixtures_dir, **kwargs)


__all__ = [
    "PromptTemplate",
    "DescriptionSet",
    "DescriptionGateway",
    "ResponseCache",
    "GatewayCall",
    "DEFAULT_TEMPLATES",
    "parse_description_list",
    "render_description_sets",
    "cache_key",
    "replay_gateway",
    "validate_templates",
]
