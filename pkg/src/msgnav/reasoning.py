"""Goals, vocabulary growth, decision memory and the reasoner interface.

A reasoner answers two kinds of request: ``select_related`` (which objects
matter for the goal, given the compact graph) and ``decide`` (go to a target
object or explore a frontier). :class:`MockReasoner` replays a JSON script;
:class:`HttpReasoner` talks to any chat-completions style endpoint.
"""

from __future__ import annotations

import copy
import json
import logging
import os
import re
import time
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Callable, Protocol

import httpx
import jsonschema

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
GOAL_KINDS = ("category", "language", "image")
OUTCOMES = ("pending", "confirmed", "refuted")


class ReasonerError(RuntimeError):
    pass


class ReasonerTransportError(ReasonerError):
    """Network or server failure; the caller may retry later."""


class ReasonerAuthError(ReasonerError):
    pass


class ReasonerProtocolError(ReasonerError):
    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class ScriptError(ValueError):
    pass


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    text = resources.files("msgnav").joinpath("data", "schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def validate(instance, schema_name: str) -> None:
    jsonschema.validate(instance, load_schema(schema_name))


# -- goals -----------------------------------------------------------------

@dataclass
class Goal:
    kind: str
    category_term: str | None = None
    description: str | None = None
    image_ref: str | None = None
    # what the reference image shows; stands in for pixels in the simulator
    image_descriptor: dict | None = None

    def __post_init__(self):
        if self.kind not in GOAL_KINDS:
            raise ValueError(f"unknown goal kind {self.kind!r}")
        present = {
            "category": self.category_term is not None,
            "language": self.description is not None,
            "image": self.image_ref is not None,
        }
        for kind, has in present.items():
            if has != (kind == self.kind):
                raise ValueError(f"{self.kind} goal must set exactly its own field")

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.kind == "category":
            d["category"] = self.category_term
        elif self.kind == "language":
            d["description"] = self.description
        else:
            d["image_ref"] = self.image_ref
            if self.image_descriptor is not None:
                d["image_descriptor"] = self.image_descriptor
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Goal":
        return cls(
            kind=d["kind"],
            category_term=d.get("category"),
            description=d.get("description"),
            image_ref=d.get("image_ref"),
            image_descriptor=d.get("image_descriptor"),
        )

    def __str__(self) -> str:
        if self.kind == "category":
            return f"category:{self.category_term}"
        if self.kind == "language":
            return f"language:{self.description}"
        return f"image:{self.image_ref}"


def goal_terms(goal: Goal | dict) -> list[str]:
    """Text a string matcher can use to find goal objects."""
    d = goal.to_dict() if isinstance(goal, Goal) else goal
    if d["kind"] == "category":
        return [d["category"]]
    if d["kind"] == "language":
        return [d["description"]]
    desc = d.get("image_descriptor") or {}
    return [desc["category"]] if desc.get("category") else []


def goal_rank(category: str, goal: Goal | dict) -> int | None:
    """Where a category matches the goal: 0 for exact matches, the word offset
    inside a language description (earlier mentions are usually the head noun),
    or None when it does not match."""
    d = goal.to_dict() if isinstance(goal, Goal) else goal
    cat = category.casefold()
    if d["kind"] == "language":
        m = re.search(rf"\b{re.escape(cat)}\b", d["description"].casefold())
        return None if m is None else m.start()
    return 0 if any(cat == t.casefold() for t in goal_terms(d)) else None


def matches_goal(category: str, goal: Goal | dict) -> bool:
    """Exact category match for category/image goals, word match inside a description."""
    return goal_rank(category, goal) is not None


# -- vocabulary and memory -------------------------------------------------

def seed_terms() -> list[str]:
    text = resources.files("msgnav").joinpath("data", "scannet200.txt").read_text()
    return [line.strip() for line in text.splitlines() if line.strip()]


class Vocabulary:
    """Ordered, case-folded, grow-only set of detector categories."""

    def __init__(self, seed=None):
        self.terms: list[str] = []
        self.provenance: dict[str, str] = {}
        for term in seed_terms() if seed is None else seed:
            self._add(term, "seed")

    def _add(self, term: str, tag: str) -> bool:
        key = term.casefold().strip()
        if not key or key in self.provenance:
            return False
        self.terms.append(key)
        self.provenance[key] = tag
        return True

    def add(self, term: str, step: int) -> bool:
        return self._add(term, f"proposed@{step}")

    def __contains__(self, term) -> bool:
        return isinstance(term, str) and term.casefold().strip() in self.provenance

    def __len__(self) -> int:
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms)

    def copy(self) -> "Vocabulary":
        v = Vocabulary(seed=())
        v.terms = list(self.terms)
        v.provenance = dict(self.provenance)
        return v

    def proposed(self) -> dict[str, str]:
        return {t: p for t, p in self.provenance.items() if p != "seed"}


@dataclass(frozen=True)
class ReasonerResponse:
    target: int | None = None
    frontier: int | None = None
    proposed_vocab: tuple[str, ...] = ()
    rationale: str = ""

    def __post_init__(self):
        if (self.target is None) == (self.frontier is None):
            raise ValueError("response must choose exactly one of target or frontier")

    @property
    def choice(self) -> dict:
        return {"target": self.target} if self.target is not None else {"frontier": self.frontier}

    def to_dict(self) -> dict:
        return {"choice": self.choice, "proposed_vocab": list(self.proposed_vocab), "rationale": self.rationale}

    @classmethod
    def from_dict(cls, d: dict) -> "ReasonerResponse":
        try:
            validate(d, "response")
        except jsonschema.ValidationError as exc:
            raise ReasonerProtocolError(f"invalid response: {exc.message}", json.dumps(d)) from None
        choice = d["choice"]
        return cls(
            target=choice.get("target"),
            frontier=choice.get("frontier"),
            proposed_vocab=tuple(d.get("proposed_vocab", ())),
            rationale=d.get("rationale", ""),
        )


@dataclass(frozen=True)
class MemoryEntry:
    step: int
    response: ReasonerResponse


@dataclass
class DecisionMemory:
    """Append-only decision log. Outcomes resolve once from ``pending``."""

    entries: tuple[MemoryEntry, ...] = ()
    outcomes: dict[int, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def append(self, step: int, response: ReasonerResponse) -> "DecisionMemory":
        if self.entries:
            last = self.entries[-1]
            if step == last.step and response == last.response:
                return self
            if step <= last.step:
                raise ValueError(f"memory step {step} not after {last.step}")
        return DecisionMemory(self.entries + (MemoryEntry(step, response),), dict(self.outcomes))

    def annotate(self, step: int, outcome: str) -> None:
        if outcome not in OUTCOMES:
            raise ValueError(f"unknown outcome {outcome!r}")
        if not any(e.step == step for e in self.entries):
            raise KeyError(f"no decision at step {step}")
        current = self.outcomes.get(step, "pending")
        if current != "pending" and current != outcome:
            raise ValueError(f"outcome of step {step} already {current}")
        self.outcomes[step] = outcome

    def outcome(self, step: int) -> str:
        return self.outcomes.get(step, "pending")

    def window(self, m: int) -> list[dict]:
        recent = self.entries[-m:] if m > 0 else ()
        return [
            {
                "step": e.step,
                "choice": e.response.choice,
                "rationale": e.response.rationale,
                "outcome": self.outcome(e.step),
            }
            for e in recent
        ]

    def to_list(self) -> list[dict]:
        return self.window(len(self.entries))


def apply_response(resp: ReasonerResponse, vocab: Vocabulary, memory: DecisionMemory, step: int):
    """Grow the vocabulary and log the decision. Returns fresh objects."""
    new_vocab = vocab.copy()
    for term in resp.proposed_vocab:
        new_vocab.add(term, step)
    return new_vocab, memory.append(step, resp)


def assemble_query(key_payload: dict, memory: DecisionMemory, frontiers: list[dict], goal: Goal,
                   step: int, window: int = 10) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "step": step,
        "goal": goal.to_dict(),
        "key_subgraph": copy.deepcopy(key_payload),
        "memory": memory.window(window),
        "frontiers": copy.deepcopy(list(frontiers)),
    }


# -- reasoners -------------------------------------------------------------

class Reasoner(Protocol):
    def select_related(self, request: dict) -> list[int]: ...

    def decide(self, request: dict) -> ReasonerResponse: ...


def _goal_objects(request: dict) -> list[dict]:
    goal = request["goal"]
    objs = [o for o in request["key_subgraph"]["objects"] if matches_goal(o["category"], goal)]
    return sorted(objs, key=lambda o: (goal_rank(o["category"], goal), not o["related"], o["id"]))


class MockReasoner:
    """Scripted reasoner.

    Responses are resolved in order: an entry in ``by_step`` for the
    request's step, then the next unused entry of ``responses``, then the
    first matching rule. When nothing applies the script is exhausted and
    either raises or repeats the previous answer.
    """

    def __init__(self, script: dict | None = None):
        script = {} if script is None else script
        try:
            validate(script, "mock_script")
        except jsonschema.ValidationError as exc:
            raise ScriptError(f"malformed reasoner script: {exc.message}") from None
        self.script = script
        self.on_exhausted = script.get("on_exhausted", "error")
        self.focus_mode = script.get("focus", "goal_neighbors")
        self._responses = [ReasonerResponse.from_dict(r) for r in script.get("responses", [])]
        self._by_step = {int(k): ReasonerResponse.from_dict(v) for k, v in script.get("by_step", {}).items()}
        self._rules = script.get("rules", [])
        self._cursor = 0
        self._focus_cursor = 0
        self._last: ReasonerResponse | None = None
        self.requests: list[tuple[str, dict]] = []

    @classmethod
    def from_file(cls, path) -> "MockReasoner":
        try:
            script = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ScriptError(f"cannot load reasoner script {path}: {exc}") from None
        return cls(script)

    @classmethod
    def oracle(cls) -> "MockReasoner":
        """Greedy agent: go for a visible goal object, else a promising frontier."""
        return cls({
            "version": 1,
            "on_exhausted": "error",
            "focus": "goal_context",
            "rules": [
                {"if": "goal_in_key_objects", "then": "pick_goal_object"},
                {"if": "goal_in_frontier_snapshot", "then": "pick_goal_frontier"},
                {"if": "has_frontiers", "then": "nearest_frontier"},
            ],
        })

    def select_related(self, request: dict) -> list[int]:
        self.requests.append(("focus", copy.deepcopy(request)))
        if self.focus_mode == "empty":
            return []
        if isinstance(self.focus_mode, list):
            if self._focus_cursor < len(self.focus_mode):
                self._focus_cursor += 1
                return list(self.focus_mode[self._focus_cursor - 1])
            return []
        k = request["k"]
        goal = request["goal"]
        nodes = request["compact_graph"]["nodes"]
        adjacency = request["compact_graph"]["adjacency"]
        hits = [n for n in nodes if matches_goal(n["category"], goal)]
        hits.sort(key=lambda n: (goal_rank(n["category"], goal), n["id"]))
        picked = [n["id"] for n in hits][:k]
        for oid in list(picked):
            for nb in adjacency.get(str(oid), []):
                if len(picked) >= k:
                    break
                if nb not in picked:
                    picked.append(nb)
        if self.focus_mode == "goal_context" and len(picked) < k:
            # stand-in for scene context: best-connected objects first
            rest = sorted((n["id"] for n in nodes if n["id"] not in picked),
                          key=lambda i: (-len(adjacency.get(str(i), [])), i))
            picked.extend(rest[:k - len(picked)])
        return picked[:k]

    def decide(self, request: dict) -> ReasonerResponse:
        self.requests.append(("decide", copy.deepcopy(request)))
        resp = self._by_step.get(request["step"])
        if resp is None and self._cursor < len(self._responses):
            resp = self._responses[self._cursor]
            self._cursor += 1
        if resp is None:
            resp = self._apply_rules(request)
        if resp is None:
            if self.on_exhausted == "repeat_last" and self._last is not None:
                resp = self._last
            else:
                raise ReasonerProtocolError("reasoner script exhausted", json.dumps(request, sort_keys=True))
        self._last = resp
        return resp

    def _apply_rules(self, request: dict) -> ReasonerResponse | None:
        goal = request["goal"]
        frontiers = request["frontiers"]
        for rule in self._rules:
            cond, action = rule["if"], rule["then"]
            goal_objs = _goal_objects(request)
            goal_fronts = [f for f in frontiers if any(matches_goal(c, goal) for c in f["snapshot"]["categories"])]
            if cond == "goal_in_key_objects" and not goal_objs:
                continue
            if cond == "goal_in_frontier_snapshot" and not goal_fronts:
                continue
            if cond == "has_frontiers" and not frontiers:
                continue
            choice: dict | None = None
            if action == "pick_goal_object" and goal_objs:
                choice = {"target": goal_objs[0]["id"]}
            elif action == "pick_goal_frontier" and goal_fronts:
                choice = {"frontier": min(goal_fronts, key=lambda f: (f["distance"], f["id"]))["id"]}
            elif action == "nearest_frontier" and frontiers:
                choice = {"frontier": min(frontiers, key=lambda f: (f["distance"], f["id"]))["id"]}
            elif action == "first_frontier" and frontiers:
                choice = {"frontier": frontiers[0]["id"]}
            elif action == "last_frontier" and frontiers:
                choice = {"frontier": frontiers[-1]["id"]}
            if choice is None:
                continue
            proposed = tuple(goal_terms(goal)) if rule.get("propose_goal_term") and goal["kind"] == "category" else ()
            return ReasonerResponse(
                target=choice.get("target"),
                frontier=choice.get("frontier"),
                proposed_vocab=proposed,
                rationale=f"rule {cond} -> {action}",
            )
        return None


# -- HTTP ------------------------------------------------------------------

SYSTEM_PROMPT = (
    "You guide a robot searching an indoor scene for a goal. You receive a scene "
    "graph of detected objects, images that show object pairs together, your past "
    "decisions, and frontiers that lead to unexplored space. Reply with a single "
    "fenced json block and nothing else."
)

FOCUS_INSTRUCTIONS = (
    'Pick at most {k} object ids most relevant to the goal. Reply as ```json {{"related": [ids]}}```.'
)

DECIDE_INSTRUCTIONS = (
    "Either pick a target object id if you believe it is the goal, or a frontier id to explore. "
    'Reply as ```json {"choice": {"target": id} or {"frontier": id}, '
    '"proposed_vocab": [new category names you see in the images], "rationale": "..."}```.'
)

_FENCE = re.compile(r"```(?:json)?\s*(\{.*?\})\s*```", re.DOTALL)


def render_request_text(request: dict) -> str:
    """Chat message body: JSON payload with each image reference inlined as a tag."""
    lines = [json.dumps({k: v for k, v in request.items() if k != "key_subgraph"}, sort_keys=True)]
    sub = request.get("key_subgraph")
    if sub is not None:
        lines.append("objects: " + json.dumps(sub["objects"], sort_keys=True))
        for img in sub["images"]:
            pairs = ", ".join(f"({a},{b})" for a, b in img["pairs"])
            lines.append(f"<image:{img['image_ref']}> shows pairs {pairs}")
    return "\n".join(lines)


def extract_json_block(text: str) -> dict:
    m = _FENCE.search(text)
    body = m.group(1) if m else text.strip()
    try:
        obj = json.loads(body)
    except json.JSONDecodeError as exc:
        raise ReasonerProtocolError(f"reply is not JSON: {exc}", text) from None
    if not isinstance(obj, dict):
        raise ReasonerProtocolError("reply JSON is not an object", text)
    return obj


@dataclass
class HttpReasonerConfig:
    endpoint: str
    model: str = "gpt-4o"
    api_key_env: str = "MSGNAV_API_KEY"
    max_retries: int = 3
    backoff: float = 1.0
    timeout: float = 60.0
    transcript_path: str | None = None


class HttpReasoner:
    """Chat-completions client with retry and exponential backoff."""

    RETRY_STATUS = {429, 500, 502, 503, 504}

    def __init__(self, config: HttpReasonerConfig, transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.config = config
        self.sleep = sleep
        self.attempts = 0
        key = os.environ.get(config.api_key_env, "")
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self.client = httpx.Client(timeout=config.timeout, headers=headers, transport=transport)

    def _log(self, record: dict) -> None:
        if self.config.transcript_path:
            with open(self.config.transcript_path, "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    def _chat(self, text: str, parse: Callable[[dict], object]):
        body = {
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": SYSTEM_PROMPT},
                {"role": "user", "content": text},
            ],
        }
        url = self.config.endpoint.rstrip("/") + "/chat/completions"
        last_error: Exception | None = None
        raw = ""
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                self.sleep(self.config.backoff * 2 ** (attempt - 1))
            self.attempts += 1
            try:
                r = self.client.post(url, json=body)
            except httpx.TransportError as exc:
                log.warning("reasoner attempt %d: transport error %s", attempt + 1, exc)
                last_error = ReasonerTransportError(str(exc))
                continue
            if r.status_code in (401, 403):
                raise ReasonerAuthError(f"reasoner rejected credentials ({r.status_code})")
            if r.status_code in self.RETRY_STATUS:
                log.warning("reasoner attempt %d: HTTP %d", attempt + 1, r.status_code)
                last_error = ReasonerTransportError(f"HTTP {r.status_code}")
                continue
            if r.status_code >= 400:
                raise ReasonerTransportError(f"HTTP {r.status_code}: {r.text[:200]}")
            try:
                raw = r.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError):
                raw = r.text
                last_error = ReasonerProtocolError("unexpected completion envelope", raw)
                continue
            self._log({"request": body, "reply": raw, "attempt": attempt + 1})
            try:
                return parse(extract_json_block(raw))
            except ReasonerProtocolError as exc:
                log.warning("reasoner attempt %d: %s", attempt + 1, exc)
                last_error = exc
        if isinstance(last_error, ReasonerProtocolError):
            raise ReasonerProtocolError(f"reasoner protocol error: {last_error}", last_error.raw or raw)
        raise last_error or ReasonerTransportError("no attempts made")

    def select_related(self, request: dict) -> list[int]:
        text = render_request_text(request) + "\n" + FOCUS_INSTRUCTIONS.format(k=request["k"])

        def parse(obj: dict) -> list[int]:
            ids = obj.get("related")
            if not isinstance(ids, list):
                raise ReasonerProtocolError("missing 'related' list", json.dumps(obj))
            return [i for i in ids if isinstance(i, int)]

        return self._chat(text, parse)

    def decide(self, request: dict) -> ReasonerResponse:
        text = render_request_text(request) + "\n" + DECIDE_INSTRUCTIONS
        return self._chat(text, ReasonerResponse.from_dict)
