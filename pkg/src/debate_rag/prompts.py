"""Agent prompt templates.

Templates use ``{name}`` placeholders. Only the known placeholder names are
substituted, so literal braces elsewhere in a template or inside retrieved
passages survive untouched. Any template can be overridden by dropping a
``<name>.txt`` file into a directory and passing it to :func:`load_templates`.
"""

from __future__ import annotations

import re
from pathlib import Path

PLACEHOLDERS = ("question", "queries", "documents", "arguments", "opponent_name", "opponent_response")

RET_PROPONENT = """\
You are a debater. Argue that the current retrieved content is sufficient to answer the question and no further retrieval is needed. Deliver a brief, strong argument with clear reasoning. Do not suggest further retrieval.

Question:
{question}

Queries:
{queries}

Retrieved Documents:
{documents}
"""

RET_CHALLENGER = """\
You are a critical thinker and debater, and your task is to challenge the sufficiency of the current retrieved content. Argue that the current information is insufficient to generate a reliable answer and propose either query optimization or query expansion.
The action you can choose:
1. Query Optimization: If the retrieved content is somewhat relevant but has expression or scope issues.
Optimize the query using this format: Query Optimization: [Original Query] → [New Query].
2. Query Expansion: If critical information is missing.
Propose a new query using this format: Query Expansion: [New Query].

Deliver a brief, strong argument with clear reasoning, and then you must choose only one action. The output must be in the exact format after your reasoning, without additional explanation, and keep the new query short and precise.

Question:
{question}

Queries:
{queries}

Retrieved Documents:
{documents}
"""

RET_JUDGE = """\
You are the judge in a debate. Your task is to evaluate the arguments from agents.
There are two types of agents:
1. Proponent Agent: Argue that the current retrieved content is sufficient.
2. Challenger Agent: Argue that the current retrieved content is insufficient and propose query refinement.

Question:
{question}

Queries:
{queries}

Retrieved Documents:
{documents}

Agents Arguments:
{arguments}

Output only the agent's name."""

RES_PROPONENT_INIT = """\
Answer the question based on the given document.

The following are given documents:
{documents}

Question:
{question}"""

RES_CHALLENGER_INIT = """\
Answer the question based on your own knowledge.

Question:
{question}"""

RES_DEBATE = """\
I will give the answers and arguments to this question from other agents. Use their solution as additional advice; note that they may be wrong.
Explain your answer.

{opponent_name}:
{opponent_response}

Question:
{question}"""

RES_JUDGE = """\
You are a moderator in a debate competition. Your task is to determine the correct final answer based on the arguments presented by the debaters. Output only the final answer with no explanations or additional text.

{arguments}

Question:
{question}"""

NAIVE_GEN = """\
Answer the following question.

Question:
{question}"""

NAIVE_RAG = RES_PROPONENT_INIT

DEFAULT_TEMPLATES = {
    "ret_proponent": RET_PROPONENT,
    "ret_challenger": RET_CHALLENGER,
    "ret_judge": RET_JUDGE,
    "res_proponent_init": RES_PROPONENT_INIT,
    "res_challenger_init": RES_CHALLENGER_INIT,
    "res_debate": RES_DEBATE,
    "res_judge": RES_JUDGE,
    "naive_gen": NAIVE_GEN,
    "naive_rag": NAIVE_RAG,
}

_PLACEHOLDER_RE = re.compile(r"\{(" + "|".join(PLACEHOLDERS) + r")\}")


def render(template: str, **values: str) -> str:
    """Fill known placeholders in one pass; unknown ``{...}`` text is left alone."""

    def sub(m: re.Match) -> str:
        name = m.group(1)
        return values[name] if name in values else m.group(0)

    return _PLACEHOLDER_RE.sub(sub, template)


def load_templates(directory: str | Path | None = None) -> dict[str, str]:
    """Defaults overlaid with any ``<name>.txt`` files found in ``directory``."""
    templates = dict(DEFAULT_TEMPLATES)
    if directory is None:
        return templates
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"template directory not found: {directory}")
    for name in DEFAULT_TEMPLATES:
        path = directory / f"{name}.txt"
        if path.exists():
            templates[name] = path.read_text(encoding="utf-8")
    return templates
