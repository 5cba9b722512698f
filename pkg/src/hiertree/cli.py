"""Command-line client for the hiertree service.

Subcommands mirror the service endpoints; by default requests are handled by
an in-process service, or point --server at a running one. Primary outputs
are byte-deterministic; timestamps and resolved configuration go to a sidecar
.log.json next to each primary output.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time

import httpx
from pydantic import ValidationError

from . import __version__
from .config import resolve_config
from .errors import ConfigError, HiertreeError
from .service import handlers, schemas
from .store import canonical_json

EXIT_CODES = {
    "ConfigError": 2,
    "InvalidSpec": 2,
    "InvalidInput": 2,
    "EmptyInput": 2,
    "ProviderUnavailable": 3,
    "Transport": 3,
    "CacheMiss": 3,
    "ParseFailure": 3,
    "MissingClassInResponse": 3,
    "SchemaMismatch": 3,
    "DegenerateClustering": 4,
    "ClassSetMismatch": 5,
}


class CliFailure(Exception):
    def __init__(self, code: int, message: str) -> None:
        super().__init__(message)
        self.code = code


def _exit_code_for(code_name: str) -> int:
    return EXIT_CODES.get(code_name, 1)


class ServiceClient:
    """Dispatches requests either in process or to a remote service."""

    _ROUTES = {
        "build": ("POST", "/tree/build", handlers.build_tree_handler, schemas.BuildTreeResponse),
        "classify": ("POST", "/classify", handlers.classify_handler, schemas.ClassifyResponse),
        "evaluate": ("POST", "/evaluate", handlers.evaluate_handler, schemas.EvaluateResponse),
        "explain": ("POST", "/explain", handlers.explain_handler, schemas.ExplainResponse),
        "sweep": ("POST", "/sweep", handlers.sweep_handler, schemas.SweepResponse),
        "cache_clear": ("POST", "/cache/clear", handlers.cache_clear_handler, schemas.CacheClearResponse),
    }

    def __init__(self, server: str | None) -> None:
        self.server = server.rstrip("/") if server else None

    def call(self, name: str, request):
        method, path, handler, response_cls = self._ROUTES[name]
        if not self.server:
            try:
                return handler(request)
            except HiertreeError as exc:
                raise CliFailure(_exit_code_for(type(exc).__name__), str(exc)) from exc
        return self._remote(method, path, request, response_cls)

    def cache_stats(self, cache_dir: str):
        if not self.server:
            try:
                return handlers.cache_stats_handler(cache_dir)
            except HiertreeError as exc:
                raise CliFailure(_exit_code_for(type(exc).__name__), str(exc)) from exc
        try:
            resp = httpx.get(
                self.server + "/cache/stats", params={"cache_dir": cache_dir}, timeout=600
            )
        except httpx.TransportError as exc:
            raise CliFailure(3, f"cannot reach server {self.server}: {exc}") from exc
        return self._decode(resp, schemas.CacheStatsResponse)

    def _remote(self, method: str, path: str, request, response_cls):
        try:
            resp = httpx.request(
                method,
                self.server + path,
                json=request.model_dump(mode="json"),
                timeout=600,
            )
        except httpx.TransportError as exc:
            raise CliFailure(3, f"cannot reach server {self.server}: {exc}") from exc
        return self._decode(resp, response_cls)

    @staticmethod
    def _decode(resp: httpx.Response, response_cls):
        if resp.status_code != 200:
            try:
                detail = resp.json().get("detail", {})
            except ValueError:
                detail = {}
            if isinstance(detail, dict) and "code" in detail:
                raise CliFailure(
                    _exit_code_for(detail["code"]),
                    f"{detail['code']}: {detail.get('message', '')}",
                )
            raise CliFailure(1, f"server error {resp.status_code}: {resp.text[:200]}")
        return response_cls.model_validate(resp.json())


# --- shared flag groups ------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="TOML or JSON config file")
    parser.add_argument("--server", help="base URL of a running hiertree service")
    parser.add_argument("--seed", type=int, help="master random seed (default 0)")
    parser.add_argument("--jobs", type=int, help="gateway worker bound (default 4)")


def _add_fusion(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--lambda", dest="momentum", type=float,
                        help="weight on the hierarchical running average (default 0.9)")
    parser.add_argument("--tau", dest="tolerance", type=float,
                        help="minimum per-level score gain (default 0)")
    parser.add_argument("--max-depth-used", type=int,
                        help="truncate description matrices to this many levels")


def _add_provider(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--provider", choices=["replay", "http"], default="replay")
    parser.add_argument("--fixtures", help="directory of recorded responses (replay)")
    parser.add_argument("--cache-dir", help="response cache directory")
    parser.add_argument("--api-url", help="chat-completion endpoint (or HIERTREE_API_URL)")
    parser.add_argument("--model", help="chat model name")
    parser.add_argument("--templates", help="JSON file overriding prompt templates")
    parser.add_argument("--embedder", choices=["synthetic", "http"], default="synthetic")
    parser.add_argument("--embedder-spec", help="JSON spec for the synthetic embedder")
    parser.add_argument("--embedder-dim", type=int, help="synthetic embedding dimension (default 32)")
    parser.add_argument("--embedder-url", help="embedding service endpoint")
    parser.add_argument("--embedder-cache", help="embedding response cache directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hiertree",
        description="Knowledge-tree zero-shot classification pipeline.",
    )
    parser.add_argument("--version", action="version", version=f"hiertree {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-tree", help="build a knowledge tree from a labels file")
    _add_common(p)
    _add_provider(p)
    p.add_argument("--labels", required=True, help="JSON file with class names")
    p.add_argument("--out", required=True, help="output tree JSON path")
    p.add_argument("--group-ratio", type=float, help="clusters per group size (default 0.05)")
    p.add_argument("--leaf-threshold", type=int, help="largest single-leaf group (default 2)")
    p.add_argument("--direct-threshold", type=int,
                   help="largest group compared in one prompt (default 10)")
    p.add_argument("--max-depth", type=int, help="recursion bound (default 6)")
    p.add_argument("--line-level-rows", action="store_true",
                   help="store per-line embeddings for flattened score matrices")

    p = sub.add_parser("classify", help="predict classes for an embedding file")
    _add_common(p)
    _add_fusion(p)
    p.add_argument("--tree", help="tree JSON path")
    p.add_argument("--image-embeddings", required=True)
    p.add_argument("--label-embeddings", required=True)
    p.add_argument("--manifest", help="restrict to this manifest's items")
    p.add_argument("--baseline", action="store_true", help="plain label-cosine scoring")
    p.add_argument("--out", required=True, help="output predictions JSON path")

    p = sub.add_parser("evaluate", help="accuracy and confusion matrix for a manifest")
    _add_common(p)
    _add_fusion(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--tree", help="tree JSON path (omit for baseline)")
    p.add_argument("--image-embeddings", required=True)
    p.add_argument("--label-embeddings", required=True)
    p.add_argument("--baseline", action="store_true")
    p.add_argument("--out-dir", required=True, help="directory for eval.json / confusion.csv / eval.txt")

    p = sub.add_parser("explain", help="per-level score trace for one image")
    _add_common(p)
    _add_fusion(p)
    p.add_argument("--tree", required=True)
    p.add_argument("--image-embeddings", required=True)
    p.add_argument("--label-embeddings", required=True)
    p.add_argument("--image-id", required=True)
    p.add_argument("--top-k", type=int, default=5, help="classes shown (default 5)")
    p.add_argument("--out", help="also write the report JSON here")

    p = sub.add_parser("sweep", help="accuracy across one hyperparameter")
    _add_common(p)
    _add_fusion(p)
    _add_provider(p)
    p.add_argument("--param", required=True, choices=["lambda", "tau", "group_ratio", "depth"])
    p.add_argument("--values", required=True, help="comma-separated values, ascending")
    p.add_argument("--manifest", required=True)
    p.add_argument("--tree", help="tree JSON path (fixed-tree sweeps)")
    p.add_argument("--image-embeddings", required=True)
    p.add_argument("--label-embeddings", required=True)
    p.add_argument("--labels", help="labels file (group_ratio sweeps rebuild the tree)")
    p.add_argument("--leaf-threshold", type=int, help="rebuild: largest single-leaf group")
    p.add_argument("--direct-threshold", type=int,
                   help="rebuild: largest group compared in one prompt")
    p.add_argument("--max-depth", type=int, help="rebuild: recursion bound")
    p.add_argument("--out", required=True, help="output sweep CSV path")

    p = sub.add_parser("cache", help="inspect or clear the response cache")
    _add_common(p)
    p.add_argument("action", choices=["stats", "clear"])
    p.add_argument("--cache-dir", help="cache directory (or HIERTREE_CACHE_DIR)")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)

    return parser


# --- request assembly ---------------------------------------------------------------


def _resolved(args: argparse.Namespace):
    overrides = {}
    for key in (
        "momentum", "tolerance", "max_depth_used", "group_ratio", "leaf_threshold",
        "direct_threshold", "max_depth", "seed", "jobs", "cache_dir", "api_url", "model",
    ):
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    if getattr(args, "line_level_rows", False):
        overrides["line_level_rows"] = True
    return resolve_config(getattr(args, "config", None), overrides=overrides)


def _provider_params(args, cfg) -> schemas.ProviderParams:
    return schemas.ProviderParams(
        kind=args.provider,
        fixtures_dir=args.fixtures,
        cache_dir=cfg.cache_dir,
        api_url=cfg.api_url,
        api_key=cfg.api_key,
        model=cfg.model,
        temperature=cfg.temperature,
        max_tokens=cfg.max_tokens,
        max_in_flight=cfg.jobs,
        templates_path=getattr(args, "templates", None),
    )


def _embedder_params(args, cfg) -> schemas.EmbedderParams:
    return schemas.EmbedderParams(
        kind=args.embedder,
        spec_path=args.embedder_spec,
        dim=32 if args.embedder_dim is None else args.embedder_dim,
        seed=cfg.seed,
        endpoint=args.embedder_url,
        cache_dir=args.embedder_cache,
    )


def _fusion_params(cfg) -> schemas.FusionParams:
    return schemas.FusionParams(
        momentum=cfg.momentum, tolerance=cfg.tolerance, max_depth_used=cfg.max_depth_used
    )


def _build_params(cfg) -> schemas.BuildParams:
    return schemas.BuildParams(
        group_ratio=cfg.group_ratio,
        leaf_threshold=cfg.leaf_threshold,
        direct_threshold=cfg.direct_threshold,
        max_depth=cfg.max_depth,
        seed=cfg.seed,
        line_level_rows=cfg.line_level_rows,
    )


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_sidecar(path: str, cfg, extra: dict | None = None) -> None:
    record = {"timestamp": time.time(), "resolved_config": cfg.to_dict()}
    record.update(extra or {})
    _write_text(path, json.dumps(record, sort_keys=True, indent=2) + "\n")


# --- subcommands ----------------------------------------------------------------------


def _cmd_build_tree(args) -> int:
    cfg = _resolved(args)
    client = ServiceClient(args.server)
    req = schemas.BuildTreeRequest(
        labels_path=args.labels,
        provider=_provider_params(args, cfg),
        embedder=_embedder_params(args, cfg),
        build=_build_params(cfg),
        jobs=cfg.jobs,
    )
    resp = client.call("build", req)
    _write_text(args.out, canonical_json(resp.tree))
    _write_sidecar(
        args.out + ".log.json",
        cfg,
        {
            "node_calls": resp.node_calls,
            "call_counts": resp.call_counts,
            "provenance": resp.provenance,
        },
    )
    total = sum(resp.call_counts.values())
    breakdown = ", ".join(f"{v} {k}" for k, v in sorted(resp.call_counts.items()))
    print(f"tree written to {args.out} ({total} gateway calls: {breakdown})")
    return 0


def _cmd_classify(args) -> int:
    cfg = _resolved(args)
    client = ServiceClient(args.server)
    req = schemas.ClassifyRequest(
        tree_path=args.tree,
        image_embeddings_path=args.image_embeddings,
        label_embeddings_path=args.label_embeddings,
        manifest_path=args.manifest,
        fusion=_fusion_params(cfg),
        baseline=args.baseline,
    )
    resp = client.call("classify", req)
    obj = {"predictions": [{"image_id": p.image_id, "predicted": p.predicted} for p in resp.predictions]}
    _write_text(args.out, canonical_json(obj))
    _write_sidecar(args.out + ".log.json", cfg, {"baseline": args.baseline})
    print(f"{len(resp.predictions)} predictions written to {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    cfg = _resolved(args)
    client = ServiceClient(args.server)
    req = schemas.EvaluateRequest(
        manifest_path=args.manifest,
        image_embeddings_path=args.image_embeddings,
        label_embeddings_path=args.label_embeddings,
        tree_path=args.tree,
        fusion=_fusion_params(cfg),
        baseline=args.baseline,
    )
    resp = client.call("evaluate", req)
    os.makedirs(args.out_dir, exist_ok=True)
    _write_text(os.path.join(args.out_dir, "eval.json"), canonical_json(resp.eval))
    _write_text(os.path.join(args.out_dir, "confusion.csv"), resp.confusion_csv)
    _write_text(os.path.join(args.out_dir, "eval.txt"), resp.eval_text)
    _write_sidecar(os.path.join(args.out_dir, "eval.log.json"), cfg, {"baseline": args.baseline})
    print(resp.eval_text, end="")
    return 0


def _cmd_explain(args) -> int:
    cfg = _resolved(args)
    client = ServiceClient(args.server)
    req = schemas.ExplainRequest(
        tree_path=args.tree,
        image_embeddings_path=args.image_embeddings,
        label_embeddings_path=args.label_embeddings,
        image_id=args.image_id,
        fusion=_fusion_params(cfg),
        top_k=args.top_k,
    )
    resp = client.call("explain", req)
    print(resp.text, end="")
    if args.out:
        _write_text(args.out, canonical_json(resp.report))
        _write_sidecar(args.out + ".log.json", cfg)
    return 0


def _cmd_sweep(args) -> int:
    cfg = _resolved(args)
    client = ServiceClient(args.server)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise CliFailure(2, f"bad --values: {exc}") from exc
    req = schemas.SweepRequest(
        parameter=args.param,
        values=values,
        manifest_path=args.manifest,
        image_embeddings_path=args.image_embeddings,
        label_embeddings_path=args.label_embeddings,
        tree_path=args.tree,
        fusion=_fusion_params(cfg),
        labels_path=args.labels,
        provider=_provider_params(args, cfg) if args.labels else None,
        embedder=_embedder_params(args, cfg) if args.labels else None,
        build=_build_params(cfg) if args.labels else None,
    )
    resp = client.call("sweep", req)
    _write_text(args.out, resp.csv)
    _write_sidecar(args.out + ".log.json", cfg, {"parameter": args.param, "values": values})
    failed = sum(1 for r in resp.rows if r.status != "ok")
    print(f"{len(resp.rows)} sweep rows written to {args.out}" + (f" ({failed} failed)" if failed else ""))
    return 1 if failed else 0


def _cmd_cache(args) -> int:
    cfg = _resolved(args)
    client = ServiceClient(args.server)
    cache_dir = args.cache_dir or cfg.cache_dir
    if not cache_dir:
        raise CliFailure(2, "no cache directory given (--cache-dir or HIERTREE_CACHE_DIR)")
    if args.action == "stats":
        resp = client.cache_stats(cache_dir)
    else:
        resp = client.call("cache_clear", schemas.CacheClearRequest(cache_dir=cache_dir))
    print(json.dumps(resp.model_dump(), sort_keys=True, indent=2))
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=args.host, port=args.port)
    return 0


_COMMANDS = {
    "build-tree": _cmd_build_tree,
    "classify": _cmd_classify,
    "evaluate": _cmd_evaluate,
    "explain": _cmd_explain,
    "sweep": _cmd_sweep,
    "cache": _cmd_cache,
    "serve": _cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except CliFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValidationError as exc:
        print(f"error: invalid request: {exc}", file=sys.stderr)
        return 2
    except HiertreeError as exc:
        code = _exit_code_for(type(exc).__name__)
        print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
