"""Mutation engines: an OpenAI-compatible remote client and an offline mock."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol

import httpx

from .dsl import PolicyError, PolicySource, Signature, mutate_ast, parse, render
from .prompt import PromptState

log = logging.getLogger(__name__)

SYSTEM_MESSAGE = (
    "You design interpretable traffic signal control policies in a small rule language. "
    "Answer only with policies inside fenced code blocks."
)
REFINE_REQUEST = (
    "Rewrite the task description below so it better guides the design of new policies, "
    "taking the elite critiques into account. Reply with the new task description only, "
    "inside one fenced code block."
)

_FENCE = re.compile(r"```[^\n`]*\n(.*?)```", re.DOTALL)


class EngineConfigError(ValueError):
    """Engine settings unusable before any request is made."""


class MutationEngine(Protocol):
    status: str

    def propose(self, prompt: PromptState, n: int) -> list[PolicySource]: ...

    def refine_prompt(self, prompt: PromptState) -> str: ...


@dataclass(frozen=True)
class EngineSettings:
    kind: str = "mock"  # mock | remote
    endpoint: str = "https://api.openai.com/v1"
    model: str = "gpt-4o-mini"
    token_env: str = "TSCLAB_API_KEY"
    timeout: float = 60.0
    max_in_flight: int = 4
    temperature: float = 0.8
    retry_budget: int = 3
    backoff: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("mock", "remote"):
            raise ValueError(f"engine kind must be 'mock' or 'remote', got {self.kind!r}")
        if self.timeout <= 0:
            raise ValueError("engine timeout must be > 0")
        if self.max_in_flight < 1:
            raise ValueError("engine max_in_flight must be >= 1")
        if self.retry_budget < 0 or self.backoff < 0:
            raise ValueError("engine retry_budget and backoff must be >= 0")

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "EngineSettings":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"engine: unknown field(s) {sorted(unknown)}")
        return cls(**doc)


def extract_fenced(text: str) -> list[str]:
    """Interiors of all triple-backtick blocks, info strings dropped."""
    return [m.group(1) for m in _FENCE.finditer(text)]


def _split(n: int, k: int) -> list[int]:
    return [n // k + (1 if i < n % k else 0) for i in range(k)]


class RemoteEngine:
    """Chat-completion client; transport failures are retried with
    exponential backoff and never raised into the evolution loop."""

    def __init__(self, settings: EngineSettings, client: httpx.Client | None = None,
                 token: str | None = None, sleep: Callable[[float], None] = time.sleep):
        if token is None:
            token = os.environ.get(settings.token_env)
        if not token:
            raise EngineConfigError(f"remote engine needs an API token in ${settings.token_env}")
        self.settings = settings
        self.token = token
        self.client = client or httpx.Client(timeout=settings.timeout)
        self.sleep = sleep
        self.status = "ok"
        self.dropped = 0
        self.requests = 0

    def request_body(self, user: str, n: int) -> dict[str, Any]:
        return {
            "model": self.settings.model,
            "messages": [{"role": "system", "content": SYSTEM_MESSAGE},
                         {"role": "user", "content": user}],
            "temperature": self.settings.temperature,
            "n": n,
        }

    def _post(self, body: dict[str, Any]) -> dict[str, Any] | None:
        """Response JSON, or None once retries are spent or on a hard failure."""
        url = self.settings.endpoint.rstrip("/") + "/chat/completions"
        headers = {"Authorization": f"Bearer {self.token}"}
        for attempt in range(self.settings.retry_budget + 1):
            if attempt:
                self.sleep(self.settings.backoff * 2 ** (attempt - 1))
            try:
                resp = self.client.post(url, json=body, headers=headers, timeout=self.settings.timeout)
            except httpx.TransportError as exc:
                log.warning("request attempt %d failed: %s", attempt + 1, exc)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                log.warning("request attempt %d got HTTP %d", attempt + 1, resp.status_code)
                continue
            if resp.status_code >= 400:
                log.error("request rejected with HTTP %d: %s", resp.status_code, resp.text[:200])
                return None
            try:
                return resp.json()
            except json.JSONDecodeError:
                log.error("response body is not JSON")
                return None
        self.status = "exhausted"
        return None

    @staticmethod
    def _contents(doc: dict[str, Any]) -> list[str] | None:
        try:
            return [str(c["message"]["content"]) for c in doc["choices"]]
        except (KeyError, TypeError):
            return None

    def _batch(self, user: str, sizes: list[int]) -> list[dict[str, Any] | None]:
        bodies = [self.request_body(user, k) for k in sizes]
        self.requests += len(bodies)
        if len(bodies) == 1:
            return [self._post(bodies[0])]
        with ThreadPoolExecutor(max_workers=len(bodies)) as pool:
            return list(pool.map(self._post, bodies))

    def propose(self, prompt: PromptState, n: int) -> list[PolicySource]:
        if n <= 0:
            return []
        self.status = "ok"
        k = min(self.settings.max_in_flight, n)
        user = prompt.render() + f"\nPropose {n} new {'policy' if n == 1 else 'policies'}."
        out: list[PolicySource] = []
        for doc in self._batch(user, _split(n, k)):
            if doc is None:
                continue
            contents = self._contents(doc)
            if contents is None:
                log.error("malformed response body: no choices[].message.content")
                self.dropped += 1
                continue
            for text in contents:
                blocks = extract_fenced(text)
                if not blocks:
                    self.dropped += 1
                out.extend(PolicySource(text=b, name=f"remote-{len(out) + j}") for j, b in enumerate(blocks))
        return out[:n]

    def refine_prompt(self, prompt: PromptState) -> str:
        user = REFINE_REQUEST + "\n\n" + prompt.render()
        doc = self._post(self.request_body(user, 1))
        contents = self._contents(doc) if doc else None
        if not contents:
            return prompt.task
        blocks = extract_fenced(contents[0])
        text = (blocks[0] if blocks else contents[0]).strip()
        return text or prompt.task


def remote_propose(settings: EngineSettings, prompt: PromptState, n: int,
                   client: httpx.Client | None = None, token: str | None = None,
                   sleep: Callable[[float], None] = time.sleep) -> tuple[list[PolicySource], str]:
    engine = RemoteEngine(settings, client=client, token=token, sleep=sleep)
    return engine.propose(prompt, n), engine.status


# --- offline mock ----------------------------------------------------------

BASE_WEIGHTS = {
    "threshold-perturb": 1.0,
    "rule-insert": 1.0,
    "rule-delete": 0.6,
    "rule-swap": 0.6,
    "operator-flip": 0.6,
    "selector-swap": 0.6,
}
STARVATION_INSERT = 3.0
WASTED_GREEN_PERTURB = 2.0
FALLBACK_SOURCE = "ELSE argmax(pressure)"


def mutation_weights(critique: str) -> dict[str, float]:
    """Edit-kind weights biased by the defects named in a critique.

    The pseudo-kind ``starvation-insert`` is a rule-insert focused on
    ``starvation_risk``.
    """
    w = dict(BASE_WEIGHTS)
    w["starvation-insert"] = STARVATION_INSERT if "Phase Starvation" in critique else 0.0
    if "Wasted Green Time" in critique:
        w["threshold-perturb"] += WASTED_GREEN_PERTURB
    return w


@dataclass
class MockEngine:
    """Deterministic engine built on seeded AST edits of the prompt's elites."""

    signature: Signature
    seed: int = 0
    status: str = "ok"
    max_edits: int = 2
    calls: int = field(default=0, init=False)

    def _parents(self, prompt: PromptState):
        parents = []
        for e in prompt.elites:
            try:
                parents.append((e, parse(e.source, self.signature)))
            except PolicyError:
                continue
        return parents

    def propose(self, prompt: PromptState, n: int) -> list[PolicySource]:
        if n <= 0:
            return []
        self.calls += 1
        digest = hashlib.sha256(f"{self.seed}\n{prompt.render()}".encode()).hexdigest()
        rng = random.Random(digest)
        parents = self._parents(prompt)
        if not parents:
            fallback = parse(FALLBACK_SOURCE, self.signature)
            parents = [(None, fallback)]
        rank = [1.0 / (r + 1) for r in range(len(parents))]
        out = []
        for i in range(n):
            elite, program = rng.choices(parents, weights=rank)[0]
            weights = mutation_weights(elite.critique if elite else "")
            kinds = list(weights)
            edits = rng.randint(1, self.max_edits)
            done = 0
            for _ in range(10 * edits):
                if done == edits:
                    break
                kind = rng.choices(kinds, weights=[weights[k] for k in kinds])[0]
                if kind == "starvation-insert":
                    m = mutate_ast(program, rng.randrange(2**31), "rule-insert", self.signature, focus="starvation")
                else:
                    m = mutate_ast(program, rng.randrange(2**31), kind, self.signature)
                if m.applied:
                    program = m.program
                    done += 1
            text = render(program)
            parse(text, self.signature)  # validity by construction; raises on a mutator bug
            out.append(PolicySource(text=text, name=f"mock-{i}", parent=elite.name if elite else None))
        return out

    def refine_prompt(self, prompt: PromptState) -> str:
        return prompt.task


def mock_propose(seed: int, prompt: PromptState, n: int, signature: Signature) -> list[PolicySource]:
    return MockEngine(signature, seed).propose(prompt, n)


def make_engine(settings: EngineSettings, signature: Signature, seed: int | None = None,
                client: httpx.Client | None = None) -> MutationEngine:
    if settings.kind == "mock":
        return MockEngine(signature, settings.seed if seed is None else seed)
    return RemoteEngine(settings, client=client)
