"""Answer debate between an evidence-grounded proponent and a closed-book challenger.

Round 1 initializes both agents: the proponent sees the retrieved evidence,
the challenger only the question. In rounds 2..r each agent sees its own
previous answers plus the opponent's answer from the previous round. A judge
then reads both final answers and outputs the final answer. The exchange
always runs the full number of rounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from debate_rag import prompts
from debate_rag.llm import ChatMessage, DebateAborted, Gateway, GatewayError, Role, Stage
from debate_rag.retrieval_debate import EvidenceSet, format_passage

PROPONENT_NAME = "Proponent Agent"
CHALLENGER_NAME = "Challenger Agent"
LEAK_WINDOW = 20


class AgentRole(str, Enum):
    PROPONENT = "proponent"
    CHALLENGER = "challenger"


class AnswerSource(str, Enum):
    JUDGE = "judge"
    SINGLE_AGENT = "single_agent"
    DIRECT = "direct"


@dataclass
class AgentState:
    role: AgentRole
    history: list[str] = field(default_factory=list)

    @property
    def name(self) -> str:
        return PROPONENT_NAME if self.role is AgentRole.PROPONENT else CHALLENGER_NAME


@dataclass(frozen=True)
class ResDebateConfig:
    rounds: int = 3

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("response debate needs at least one round")


@dataclass(frozen=True)
class FinalAnswer:
    text: str
    source: AnswerSource = AnswerSource.JUDGE

    def to_dict(self) -> dict:
        return {"text": self.text, "source": AnswerSource(self.source).value}


@dataclass
class ResTranscript:
    asymmetric: bool = True
    turns: list[dict] = field(default_factory=list)
    judge_prompt: str | None = None
    judge_reply: str | None = None
    final_answer: str | None = None
    judge_matches: str | None = None
    asymmetry_violations: list[dict] = field(default_factory=list)
    failure: str | None = None

    def to_dict(self) -> dict:
        return {
            "asymmetric": self.asymmetric,
            "turns": self.turns,
            "judge_prompt": self.judge_prompt,
            "judge_reply": self.judge_reply,
            "final_answer": self.final_answer,
            "judge_matches": self.judge_matches,
            "asymmetry_violations": self.asymmetry_violations,
            "failure": self.failure,
        }


def format_evidence_blocks(evidence: EvidenceSet) -> str:
    """One ``Query i`` block per pool query with its passages underneath."""
    blocks = []
    for i, (query, passages) in enumerate(evidence.entries, 1):
        docs = "\n".join(format_passage(n, sp) for n, sp in enumerate(passages, 1))
        blocks.append(f"Query {i}: {query}\nRetrieved Documents:\n{docs or '(no documents retrieved)'}")
    return "\n\n".join(blocks)


def build_proponent_init_prompt(question: str, evidence: EvidenceSet,
                                template: str = prompts.RES_PROPONENT_INIT) -> str:
    return prompts.render(template, question=question, documents=format_evidence_blocks(evidence))


def build_challenger_init_prompt(question: str, template: str = prompts.RES_CHALLENGER_INIT) -> str:
    return prompts.render(template, question=question)


def build_debate_messages(state: AgentState, opponent_name: str, opponent_last: str, question: str,
                          template: str = prompts.RES_DEBATE) -> list[ChatMessage]:
    # Prior turns go in as assistant messages; raw passages are never re-sent.
    messages = [ChatMessage(Role.SYSTEM, f"You are the {state.name} in a debate about the answer to a question.")]
    messages += [ChatMessage(Role.ASSISTANT, past) for past in state.history]
    messages.append(ChatMessage(Role.USER, prompts.render(
        template, question=question, opponent_name=opponent_name, opponent_response=opponent_last,
    )))
    return messages


def build_judge_prompt(question: str, proponent_final: str, challenger_final: str,
                       template: str = prompts.RES_JUDGE) -> str:
    arguments = f"{PROPONENT_NAME}:\n{proponent_final}\n\n{CHALLENGER_NAME}:\n{challenger_final}"
    return prompts.render(template, question=question, arguments=arguments)


def init_proponent(question: str, evidence: EvidenceSet, gateway: Gateway,
                   template: str = prompts.RES_PROPONENT_INIT) -> str:
    return gateway.ask(build_proponent_init_prompt(question, evidence, template), Stage.RESPONSE)


def init_challenger(question: str, gateway: Gateway, template: str = prompts.RES_CHALLENGER_INIT) -> str:
    return gateway.ask(build_challenger_init_prompt(question, template), Stage.RESPONSE)


def debate_round(state: AgentState, opponent_last: str, question: str, gateway: Gateway,
                 template: str = prompts.RES_DEBATE) -> str:
    opponent = CHALLENGER_NAME if state.role is AgentRole.PROPONENT else PROPONENT_NAME
    messages = build_debate_messages(state, opponent, opponent_last, question, template)
    reply = gateway.chat(messages, Stage.RESPONSE)
    state.history.append(reply)
    return reply


def judge_final(question: str, proponent_final: str, challenger_final: str, gateway: Gateway,
                template: str = prompts.RES_JUDGE) -> FinalAnswer:
    reply = gateway.ask(build_judge_prompt(question, proponent_final, challenger_final, template),
                        Stage.RESPONSE)
    return FinalAnswer(reply, AnswerSource.JUDGE)


def _ws(text: str) -> str:
    return " ".join(text.split())


def find_asymmetry_violations(prompt: str, evidence: EvidenceSet | None, question: str = "",
                              window: int = LEAK_WINDOW) -> list[dict]:
    """Passages sharing a run of ``window`` or more characters with ``prompt``.

    Whitespace is normalized on both sides. The question text is removed from
    the prompt first, since a question may legitimately quote a passage.
    """
    if evidence is None:
        return []
    text = _ws(prompt)
    if question:
        text = text.replace(_ws(question), "\x00")
    grams = {text[i:i + window] for i in range(len(text) - window + 1)}
    violations = []
    for sp in evidence.passages():
        body = _ws(sp.passage.text)
        for i in range(len(body) - window + 1):
            if body[i:i + window] in grams:
                violations.append({"doc_id": sp.passage.doc_id, "snippet": body[i:i + window]})
                break
    return violations


def _turn(round_: int, agent: str, messages, reply: str) -> dict:
    return {
        "round": round_,
        "agent": agent,
        "messages": [m.to_dict() if isinstance(m, ChatMessage) else {"role": "user", "content": m}
                     for m in messages],
        "reply": reply,
    }


def run_response_debate(question: str, evidence: EvidenceSet | None, gateway: Gateway,
                        config: ResDebateConfig | None = None, asymmetric: bool = True,
                        templates: dict[str, str] | None = None):
    """Run the debate and return ``(FinalAnswer, ResTranscript)``.

    ``asymmetric=False`` gives the challenger the proponent's evidence-grounded
    initialization. ``evidence=None`` initializes both agents closed-book.
    Costs exactly ``2 * rounds + 1`` response-stage LLM calls.

    Raises:
        DebateAborted: on any gateway failure; carries the partial transcript.
    """
    config = config or ResDebateConfig()
    templates = templates or prompts.DEFAULT_TEMPLATES
    transcript = ResTranscript(asymmetric=asymmetric)
    pro = AgentState(AgentRole.PROPONENT)
    chal = AgentState(AgentRole.CHALLENGER)
    try:
        if evidence is None:
            pro_prompt = build_challenger_init_prompt(question, templates["res_challenger_init"])
        else:
            pro_prompt = build_proponent_init_prompt(question, evidence, templates["res_proponent_init"])
        if asymmetric or evidence is None:
            chal_prompt = build_challenger_init_prompt(question, templates["res_challenger_init"])
        else:
            chal_prompt = build_proponent_init_prompt(question, evidence, templates["res_proponent_init"])
        if asymmetric:
            transcript.asymmetry_violations = find_asymmetry_violations(chal_prompt, evidence, question)

        pro.history.append(gateway.ask(pro_prompt, Stage.RESPONSE))
        transcript.turns.append(_turn(1, pro.role.value, [pro_prompt], pro.history[-1]))
        chal.history.append(gateway.ask(chal_prompt, Stage.RESPONSE))
        transcript.turns.append(_turn(1, chal.role.value, [chal_prompt], chal.history[-1]))

        for i in range(2, config.rounds + 1):
            pro_prev, chal_prev = pro.history[-1], chal.history[-1]
            for state, opponent_last in ((pro, chal_prev), (chal, pro_prev)):
                opponent = CHALLENGER_NAME if state is pro else PROPONENT_NAME
                messages = build_debate_messages(state, opponent, opponent_last, question, templates["res_debate"])
                reply = debate_round(state, opponent_last, question, gateway, templates["res_debate"])
                transcript.turns.append(_turn(i, state.role.value, messages, reply))

        transcript.judge_prompt = build_judge_prompt(question, pro.history[-1], chal.history[-1],
                                                     templates["res_judge"])
        transcript.judge_reply = gateway.ask(transcript.judge_prompt, Stage.RESPONSE)
    except GatewayError as exc:
        transcript.failure = f"{type(exc).__name__}: {exc}"
        raise DebateAborted(str(exc), transcript) from exc

    final = FinalAnswer(transcript.judge_reply, AnswerSource.JUDGE)
    transcript.final_answer = final.text
    same_pro = final.text.strip() == pro.history[-1].strip()
    same_chal = final.text.strip() == chal.history[-1].strip()
    transcript.judge_matches = ("both" if same_pro and same_chal else
                                "proponent" if same_pro else
                                "challenger" if same_chal else "neither")
    return final, transcript
