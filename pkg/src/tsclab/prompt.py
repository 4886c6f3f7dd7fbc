"""Prompt assembly for the mutation engine."""

from __future__ import annotations

from dataclasses import dataclass, replace

DEFAULT_TASK = (
    "Design a traffic signal control policy for the intersections of a road network. "
    "At every decision step the policy sees the structured facts of one intersection and "
    "returns the phase to serve for the next interval. Lower average travel time is better; "
    "average waiting time breaks ties. Improve on the elite policies below by fixing the "
    "defects reported in their critiques."
)

INSTRUCTION = (
    "Write new candidate policies in the policy language above. Each policy must end with an "
    "ELSE default rule and may use only the listed features. Return every policy in its own "
    "fenced code block, for example:\n```policy\nIF starvation_risk[1] THEN 1\nELSE argmax(pressure)\n```"
)

TRUNCATED = "[critique truncated]"


@dataclass(frozen=True)
class ElitePrompt:
    name: str
    source: str
    fitness: float
    critique: str


@dataclass(frozen=True)
class PromptState:
    task: str
    grammar: str
    vocabulary: str
    elites: tuple[ElitePrompt, ...]
    instruction: str = INSTRUCTION
    diagnostics: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.grammar.strip() or not self.vocabulary.strip():
            raise ValueError("prompt needs nonempty grammar and vocabulary sections")

    def render(self) -> str:
        parts = [
            "## Task", self.task.strip(), "",
            "## Policy language", self.grammar.rstrip(), "",
            "## Structured state vocabulary", self.vocabulary.rstrip(), "",
            "## Elite policies",
        ]
        for k, e in enumerate(self.elites, start=1):
            parts.append(f"### Elite {k}: {e.name} (fitness {e.fitness:.2f})")
            parts.append("```policy")
            parts.append(e.source.rstrip())
            parts.append("```")
            if e.critique:
                parts.append("Critique:")
                parts.append(e.critique.rstrip())
            parts.append("")
        if self.diagnostics:
            parts.append("## Rejected candidates from the previous request")
            parts.extend(f"- {d}" for d in self.diagnostics)
            parts.append("")
        parts.append("## Instruction")
        parts.append(self.instruction.strip())
        return "\n".join(parts) + "\n"


def build_prompt(
    elites,
    vocabulary: str,
    grammar: str,
    critiques: list[str] | None = None,
    task: str = DEFAULT_TASK,
    diagnostics: list[str] | tuple[str, ...] = (),
    max_chars: int = 12000,
) -> PromptState:
    """Assemble the prompt; critiques are cut first when over ``max_chars``.

    ``elites`` are candidates (anything with ``id``, ``source.text``,
    ``fitness`` and ``critique_text``), best first.
    """
    if not elites:
        raise ValueError("build_prompt needs at least one elite")
    if critiques is None:
        critiques = [e.critique_text for e in elites]
    entries = tuple(
        ElitePrompt(name=e.id, source=e.source.text, fitness=e.fitness, critique=c)
        for e, c in zip(elites, critiques)
    )
    state = PromptState(task, grammar, vocabulary, entries, diagnostics=tuple(diagnostics))
    if len(state.render()) <= max_chars:
        return state

    bare = replace(state, elites=tuple(replace(e, critique="") for e in entries))
    budget = max_chars - len(bare.render())
    # "Critique:" line, the cut text, a newline, then the marker line
    overhead = len("Critique:\n") + len("\n") + len(TRUNCATED) + len("\n")
    per = max(budget // len(entries) - overhead, 0)
    cut = []
    for e in entries:
        if len(e.critique) <= per:
            cut.append(e)
        elif per > 0:
            cut.append(replace(e, critique=e.critique[:per].rstrip() + "\n" + TRUNCATED))
        else:
            cut.append(replace(e, critique=""))
    return replace(state, elites=tuple(cut))
