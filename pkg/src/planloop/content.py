"""Per-step content: choose tools, fetch n candidates per tool, rank top-k.

Both policy calls here degrade to total fallbacks (raw-keyword queries,
fetch-order ranking), so no tool or model failure can ever abort a turn.
The ranking policy can only reorder and filter; it cannot fabricate items.
"""

from __future__ import annotations

import json
import logging
import os
import time
import urllib.parse
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Union

from .domain import ContentItem, PlanStep
from .errors import ValidationError
from .prompting import render_template
from .structured import extract_json_object, string_list
from .gateway import CompletionRequest

logger = logging.getLogger(__name__)

DEFAULT_ITEMS_PER_TOOL = 5  # n
DEFAULT_ITEMS_SHOWN = 3  # k
DEFAULT_TOOL_TIMEOUT_S = 5.0

# Adapter contract: callable(keywords, limit) -> iterable of (title, locator, snippet)
ToolAdapter = Callable[[list[str], int], list]

TOOL_SELECT_PROMPT = """You route content queries for one step of a user's plan.
Available tools: {tools}
Step: {step_name}
Step keywords: {keywords}

Pick which tools to query (any subset, at least one) and the keywords to send
each. You may rephrase keywords to suit the tool.
Reply with exactly one JSON object: {"queries": [{"tool": "<tool name>", "keywords": ["..."]}]}
"""


@dataclass
class ToolQuery:
    tool_name: str
    keywords: list[str]
    limit: int

    def __post_init__(self):
        if self.limit < 1:
            raise ValidationError("tool query limit must be >= 1")
        if not self.keywords:
            raise ValidationError("tool query needs at least one keyword")


@dataclass
class ToolResult:
    tool_name: str
    items: list[ContentItem] = field(default_factory=list)
    elapsed_ms: float = 0.0


class StubTool:
    """Deterministic fixture-backed tool for tests and golden replays.

    Keywords found in the fixture map return those items; unknown keywords get
    synthesized placeholder items (stable across runs) unless synthesize is
    off. `fail` and `delay_s` exist for fault-injection tests.
    """

    def __init__(
        self,
        name: str,
        fixtures: Optional[dict] = None,
        synthesize: bool = True,
        fail: bool = False,
        delay_s: float = 0.0,
    ):
        self.name = name
        self.fixtures = {k.strip().lower(): v for k, v in (fixtures or {}).items()}
        self.synthesize = synthesize
        self.fail = fail
        self.delay_s = delay_s

    @classmethod
    def from_file(cls, name: str, path: Union[str, Path]) -> "StubTool":
        return cls(name, fixtures=json.loads(Path(path).read_text(encoding="utf-8")))

    def __call__(self, keywords: list[str], limit: int) -> list:
        if self.fail:
            raise RuntimeError(f"stub tool {self.name!r} is configured to fail")
        if self.delay_s:
            time.sleep(self.delay_s)
        out = []
        for keyword in keywords:
            key = keyword.strip().lower()
            if key in self.fixtures:
                for item in self.fixtures[key]:
                    out.append((item["title"], item["locator"], item.get("snippet")))
            elif self.synthesize:
                slug = "-".join("".join(c if c.isalnum() else " " for c in key).split())
                for i in range(1, 4):
                    out.append(
                        (
                            f"{keyword.strip()} resource {i}",
                            f"stub://{self.name}/{slug}/{i}",
                            f"Placeholder result {i} for {keyword.strip()}.",
                        )
                    )
        return out[:limit]


def web_search_tool_from_env() -> Optional[ToolAdapter]:
    """Generic web-search adapter: GET endpoint?q=...&limit=n returning a JSON
    list of {title, url, snippet}. Only wired when the endpoint is set."""
    endpoint = os.environ.get("PLANLOOP_SEARCH_ENDPOINT", "")
    if not endpoint:
        return None
    api_key = os.environ.get("PLANLOOP_SEARCH_API_KEY", "")

    def adapter(keywords: list[str], limit: int) -> list:
        query = urllib.parse.urlencode({"q": " ".join(keywords), "limit": limit})
        request = urllib.request.Request(f"{endpoint}?{query}")
        if api_key:
            request.add_header("Authorization", f"Bearer {api_key}")
        with urllib.request.urlopen(request, timeout=DEFAULT_TOOL_TIMEOUT_S) as resp:
            payload = json.loads(resp.read().decode("utf-8"))
        return [(r["title"], r.get("url") or r.get("locator"), r.get("snippet")) for r in payload]

    return adapter


def default_tool_registry(
    fixtures_dir: Union[str, Path, None] = None,
) -> dict[str, ToolAdapter]:
    """Shipped tools: a stub search tool and a stub recommend-engine, plus the
    web adapter when configured. Fixture files are JSON keyword -> items."""
    registry: dict[str, ToolAdapter] = {}
    for name, filename in (("search", "search.json"), ("recommend-engine", "recommend_engine.json")):
        fixtures = None
        if fixtures_dir is not None:
            path = Path(fixtures_dir) / filename
            if path.exists():
                fixtures = json.loads(path.read_text(encoding="utf-8"))
        registry[name] = StubTool(name, fixtures=fixtures)
    web = web_search_tool_from_env()
    if web is not None:
        registry["web-search"] = web
    return registry


def select_tools(
    step: PlanStep,
    registry: dict[str, ToolAdapter],
    config,
    gateway,
    limit: int = DEFAULT_ITEMS_PER_TOOL,
) -> list[ToolQuery]:
    """Ask the policy which tools to query for this step; fall back to one
    raw-keyword query per registered tool. At most one query per tool, so the
    result always holds 1..len(registry) queries."""
    if not registry:
        raise ValidationError("tool registry is empty")

    queries: dict[str, ToolQuery] = {}
    prompt = render_template(
        TOOL_SELECT_PROMPT,
        {
            "tools": ", ".join(sorted(registry)),
            "step_name": step.name,
            "keywords": ", ".join(step.search_keywords),
        },
    )
    try:
        response = gateway.complete(
            CompletionRequest(
                policy_id=config.policy_id,
                rendered_prompt=prompt,
                temperature=config.temperature,
            )
        )
        data = extract_json_object(response.text)
        for entry in data.get("queries", []):
            if not isinstance(entry, dict):
                continue
            tool = entry.get("tool")
            if tool not in registry:
                logger.info("tool-select named unknown tool %r; dropped", tool)
                continue
            if tool in queries:
                continue
            try:
                keywords = string_list(entry.get("keywords", []), "keywords")
            except Exception:
                keywords = []
            queries[tool] = ToolQuery(
                tool_name=tool,
                keywords=keywords or list(step.search_keywords),
                limit=limit,
            )
    except Exception as exc:  # fallback is total: selection can never fail a turn
        logger.info("tool selection fell back to raw keywords: %s", exc)

    if not queries:
        return [
            ToolQuery(tool_name=name, keywords=list(step.search_keywords), limit=limit)
            for name in sorted(registry)
        ]
    return list(queries.values())


def run_query(
    query: ToolQuery,
    registry: dict[str, ToolAdapter],
    timeout_s: float = DEFAULT_TOOL_TIMEOUT_S,
) -> ToolResult:
    """Execute one tool query; failures and timeouts degrade to zero items."""
    started = time.monotonic()
    adapter = registry.get(query.tool_name)
    if adapter is None:
        logger.warning("query names unregistered tool %r", query.tool_name)
        return ToolResult(tool_name=query.tool_name)
    # shutdown(wait=False) so a hung adapter cannot hold the turn past the
    # timeout; its worker thread is abandoned, not joined
    pool = ThreadPoolExecutor(max_workers=1)
    try:
        future = pool.submit(adapter, list(query.keywords), query.limit)
        try:
            raw_items = future.result(timeout=timeout_s)
        except Exception as exc:
            logger.warning("tool %r failed: %s", query.tool_name, exc)
            return ToolResult(tool_name=query.tool_name)
    finally:
        pool.shutdown(wait=False, cancel_futures=True)
    items = []
    for raw in list(raw_items)[: query.limit]:
        parsed = _coerce_item(raw, query.tool_name, fetch_rank=0)
        if parsed is not None:
            items.append(parsed)
    elapsed = (time.monotonic() - started) * 1000.0
    return ToolResult(tool_name=query.tool_name, items=items, elapsed_ms=elapsed)


def _coerce_item(raw, tool_name: str, fetch_rank: int) -> Optional[ContentItem]:
    try:
        if isinstance(raw, dict):
            title, locator, snippet = raw.get("title"), raw.get("locator"), raw.get("snippet")
        else:
            title, locator = raw[0], raw[1]
            snippet = raw[2] if len(raw) > 2 else None
        return ContentItem(
            title=title, locator=locator, snippet=snippet,
            source_tool=tool_name, fetch_rank=fetch_rank,
        )
    except Exception as exc:
        logger.warning("tool %r returned an unusable item %r: %s", tool_name, raw, exc)
        return None


def fetch_candidates(
    queries: list[ToolQuery],
    registry: dict[str, ToolAdapter],
    timeout_s: float = DEFAULT_TOOL_TIMEOUT_S,
) -> list[ContentItem]:
    """Run all queries (concurrently), cap each tool at its limit, then merge
    in query order so concurrency never changes the outcome. Duplicate
    locators keep their first occurrence; fetch_rank is assigned 1.. in merged
    order."""
    if not queries:
        return []
    with ThreadPoolExecutor(max_workers=len(queries)) as pool:
        futures = [pool.submit(run_query, q, registry, timeout_s) for q in queries]
        results = [f.result() for f in futures]

    merged: list[ContentItem] = []
    seen: set[str] = set()
    for result in results:
        for item in result.items:
            if item.locator in seen:
                continue
            seen.add(item.locator)
            merged.append(replace(item, fetch_rank=len(merged) + 1))
    return merged


def rank_candidates(
    step: PlanStep,
    candidates: list[ContentItem],
    k: int,
    config,
    gateway,
) -> list[ContentItem]:
    """Pick the top-k shown to the user. The policy ranks by locator over
    (step name, description, candidate titles and snippets); locators it names
    that are not candidates are ignored and remaining slots fill in fetch
    order. Fallback on any failure: first k by fetch_rank."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    if not candidates:
        return []

    by_locator = {c.locator: c for c in candidates}
    fetch_order = sorted(candidates, key=lambda c: c.fetch_rank)

    ordered: list[ContentItem] = []
    try:
        lines = [
            f"{c.locator} | {c.title}" + (f" | {c.snippet}" if c.snippet else "")
            for c in fetch_order
        ]
        prompt = render_template(
            config.prompt_template,
            {
                "exemplars": "\n---\n".join(config.exemplars),
                "step_name": step.name,
                "step_description": step.description,
                "candidates": "\n".join(lines),
                "top_k": str(k),
            },
        )
        response = gateway.complete(
            CompletionRequest(
                policy_id=config.policy_id,
                rendered_prompt=prompt,
                temperature=config.temperature,
            )
        )
        ranking = string_list(extract_json_object(response.text).get("ranking", []), "ranking")
        seen: set[str] = set()
        for locator in ranking:
            candidate = by_locator.get(locator)
            if candidate is None or locator in seen:
                continue
            seen.add(locator)
            ordered.append(candidate)
    except Exception as exc:
        logger.info("ranking fell back to fetch order: %s", exc)
        ordered = []

    for candidate in fetch_order:
        if len(ordered) >= k:
            break
        if candidate not in ordered:
            ordered.append(candidate)

    return [replace(item, final_rank=i) for i, item in enumerate(ordered[:k], start=1)]


def content_for_step(
    step: PlanStep,
    registry: dict[str, ToolAdapter],
    config,
    gateway,
    n: int = DEFAULT_ITEMS_PER_TOOL,
    k: int = DEFAULT_ITEMS_SHOWN,
    timeout_s: float = DEFAULT_TOOL_TIMEOUT_S,
) -> tuple[list[ContentItem], list[ContentItem]]:
    """Full retrieve-then-rank pass for one step: (shown top-k, all fetched)."""
    queries = select_tools(step, registry, config, gateway, limit=n)
    fetched = fetch_candidates(queries, registry, timeout_s)
    shown = rank_candidates(step, fetched, k, config, gateway)
    return shown, fetched
