import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from debate_rag.llm import BudgetExceeded, DebateAborted
from debate_rag.retrieval_debate import (
    OpKind,
    Origin,
    Query,
    QueryPool,
    RefinementOp,
    RetDebateConfig,
    Verdict,
    apply_refinement,
    build_challenger_prompt,
    build_judge_prompt,
    build_proponent_prompt,
    gather_evidence,
    init_pool,
    judge_verdict_details,
    parse_challenger_move,
    parse_judge_verdict,
    pool_distance,
    replay_pools,
    run_retrieval_debate,
)
from debate_rag.retriever import Passage, ScoredPassage
from debate_rag.llm import CallLog
from conftest import scripted_gateway

PRO = "You are a debater."
CHAL = "challenge the sufficiency"
JUDGE = "Output only the agent's name"


def pool_of(*texts, question=None):
    return QueryPool(question or texts[0], tuple(Query(t, Origin.ORIGINAL if i == 0 else Origin.EXPANDED, i)
                                                for i, t in enumerate(texts)))


def test_init_pool():
    pool = init_pool("Who founded Apple?")
    assert len(pool) == 1 and pool.queries[0].origin is Origin.ORIGINAL and pool.queries[0].round_added == 0
    assert init_pool("  x  ").texts() == ["x"]
    with pytest.raises(ValueError):
        init_pool("")
    with pytest.raises(ValueError):
        init_pool("   ")


def test_pool_rejects_duplicates_by_normalized_text():
    with pytest.raises(ValueError):
        pool_of("Who founded Apple?", "  who founded  APPLE? ")
    with pytest.raises(ValueError):
        QueryPool("q", ())


def test_gather_evidence_caches(toy_index):
    log = CallLog()
    cache = {}
    pool = pool_of("apple", "banana")
    ev = gather_evidence(pool, toy_index, 3, log, cache)
    assert set(ev.per_query) == {"apple", "banana"}
    assert log.retriever_calls == 2
    gather_evidence(pool, toy_index, 3, log, cache)
    assert log.retriever_calls == 2
    single = gather_evidence(pool_of("apple"), toy_index, 3, CallLog())
    assert list(single.per_query) == ["apple"]


def _evidence(toy_index, *texts):
    return gather_evidence(pool_of(*texts), toy_index, 3)


def test_proponent_prompt(toy_index):
    pool = pool_of("apple", "fruit orchard")
    ev = gather_evidence(pool, toy_index, 3)
    p = build_proponent_prompt("Q?", pool, ev)
    assert "sufficient to answer the question" in p
    assert "apple" in p and "fruit orchard" in p and "Q?" in p
    assert "apple fruit orchard" in p and "banana fruit" in p


def test_passage_text_appears_in_prompts():
    pool = pool_of("magic")
    ev_entries = ((("magic", (ScoredPassage(Passage("x", "T", "xyzzy {queries} here"), 1.0),)),))
    from debate_rag.retrieval_debate import EvidenceSet
    ev = EvidenceSet(ev_entries)
    for build in (build_proponent_prompt, build_challenger_prompt):
        assert "xyzzy {queries} here" in build("Q", pool, ev)


def test_challenger_prompt_formats(toy_index):
    pool = pool_of("apple")
    p = build_challenger_prompt("Q?", pool, gather_evidence(pool, toy_index, 3))
    assert "Query Optimization: [Original Query] → [New Query]" in p
    assert "Query Expansion: [New Query]" in p
    assert "apple fruit orchard" in p


def test_judge_prompt(toy_index):
    pool = pool_of("apple")
    p = build_judge_prompt("Which fruit?", pool, gather_evidence(pool, toy_index, 3), "PRO-ARG", "CHAL-ARG")
    assert "Output only the agent's name" in p
    assert "PRO-ARG" in p and "CHAL-ARG" in p and "Which fruit?" in p


def test_parse_expansion():
    op = parse_challenger_move("...reasoning... Query Expansion: [Apple founders list]", pool_of("Who founded Apple?"))
    assert op.kind is OpKind.REVISE and op.expansions == ("Apple founders list",)
    assert op.retained == ("Who founded Apple?",)


def test_parse_optimization():
    pool = pool_of("Who founded Apple?", "Apple history")
    op = parse_challenger_move("Query Optimization: [who founded apple?] → [Apple Inc. founding members]", pool)
    assert op.optimizations == (("Who founded Apple?", "Apple Inc. founding members"),)
    assert op.retained == ("Apple history",)
    assert apply_refinement(pool, op, 1).texts() == ["Apple history", "Apple Inc. founding members"]


def test_parse_fallback_and_last_wins():
    pool = pool_of("q1")
    op = parse_challenger_move("I simply disagree.", pool)
    assert op.kind is OpKind.KEEP_ALL and op.fallback
    reply = "Format: Query Expansion: [New Query]\nQuery Expansion: [first]\nthen\nQuery Optimization: [q1] -> [better q1]"
    op = parse_challenger_move(reply, pool)
    assert op.optimizations == (("q1", "better q1"),)
    # an optimization of a non-member is not well formed; the earlier expansion wins
    op = parse_challenger_move("Query Expansion: [e1]\nQuery Optimization: [ghost] → [x]", pool)
    assert op.expansions == ("e1",)


@pytest.mark.parametrize("reply, verdict, flagged", [
    ("Proponent Agent", Verdict.PROPONENT, False),
    ("the winner is the Challenger Agent.", Verdict.CHALLENGER, False),
    ("I cannot decide", Verdict.PROPONENT, True),
    ("Proponent Agent vs Challenger Agent", Verdict.PROPONENT, True),
    ("CHALLENGER", Verdict.CHALLENGER, False),
])
def test_judge_verdict(reply, verdict, flagged):
    assert judge_verdict_details(reply) == (verdict, flagged)
    assert parse_judge_verdict(reply) is verdict


def test_apply_refinement_examples():
    pool = pool_of("q1", "q2")
    assert apply_refinement(pool, RefinementOp.keep_all(), 1) is pool
    assert apply_refinement(pool, RefinementOp.revise(retained=["q1"], expansions=["q3"]), 1).texts() == ["q1", "q3"]
    emptied = apply_refinement(pool, RefinementOp.revise(), 2)
    assert emptied.texts() == ["q1"]
    with pytest.raises(ValueError):
        apply_refinement(pool, RefinementOp.revise(optimizations=[("zz", "y")]), 1)


def test_apply_refinement_dedup_and_cap():
    pool = pool_of("a", "b", "c")
    op = RefinementOp.revise(retained=["a", "b", "c"], expansions=["B ", "d", "e", "f"])
    out = apply_refinement(pool, op, 3, max_pool_size=5)
    assert out.texts() == ["a", "b", "c", "d", "e"]
    assert [q.round_added for q in out] == [0, 1, 2, 3, 3]


def test_keep_all_has_no_payload():
    with pytest.raises(ValueError):
        RefinementOp(OpKind.KEEP_ALL, expansions=("x",))


@pytest.mark.parametrize("a, b, d", [(("q1", "q2"), ("q1", "q2"), 0), (("q1", "q2"), ("q1", "q3"), 2),
                                     (("q1",), ("q1", "q2"), 1), (("Q1 ",), ("q1",), 0)])
def test_pool_distance(a, b, d):
    assert pool_distance(pool_of(*a), pool_of(*b)) == d


def test_run_judge_keeps_first_round(toy_index):
    gw = scripted_gateway([{"match": JUDGE, "reply": "Proponent Agent"}, {"reply": "argument"}])
    pool, ev, tr = run_retrieval_debate("apple?", toy_index, gw)
    assert len(tr.rounds) == 1 and tr.termination_reason == "judge_keep"
    assert pool.texts() == ["apple?"]
    assert gw.call_log.llm_calls_by_stage["retrieval"] == 3
    assert gw.call_log.retriever_calls == 1


def test_run_expand_then_keep(toy_index):
    # Hand trace: round 1 pool {apple?}, challenger expands "banana", judge -> challenger,
    # pool {apple?, banana}, distance 1 > 0; round 2 retrieves only "banana", judge -> proponent.
    gw = scripted_gateway([
        {"match": [JUDGE, "2. banana"], "reply": "Proponent Agent"},
        {"match": JUDGE, "reply": "Challenger Agent"},
        {"match": CHAL, "reply": "Missing info.\nQuery Expansion: [banana]"},
        {"reply": "fine"},
    ])
    pool, ev, tr = run_retrieval_debate("apple?", toy_index, gw)
    assert len(tr.rounds) == 2 and tr.termination_reason == "judge_keep"
    assert pool.texts() == ["apple?", "banana"]
    assert gw.call_log.llm_calls_by_stage["retrieval"] == 6
    assert gw.call_log.retriever_calls == 2
    assert set(ev.per_query) == {"apple?", "banana"}
    assert [d.passage.doc_id for d in ev.per_query["banana"]] == ["C"]


def test_run_round_cap(toy_index):
    rules = [{"match": JUDGE, "reply": "Challenger Agent"}]
    rules += [{"match": CHAL, "call": 2 + 3 * i, "reply": f"Query Expansion: [fresh {i}]"} for i in range(3)]
    rules += [{"reply": "arg"}]
    gw = scripted_gateway(rules)
    pool, ev, tr = run_retrieval_debate("apple?", toy_index, gw, RetDebateConfig(max_rounds=3))
    assert len(tr.rounds) == 3 and tr.termination_reason == "round_cap"
    assert len(pool) == 4
    assert gw.call_log.llm_calls_by_stage["retrieval"] == 9
    assert set(ev.per_query) == set(pool.keys())


def test_run_converges_on_noop_challenger_win(toy_index):
    gw = scripted_gateway([{"match": JUDGE, "reply": "Challenger Agent"}, {"match": CHAL, "reply": "no action"},
                           {"reply": "arg"}])
    _, _, tr = run_retrieval_debate("apple?", toy_index, gw)
    assert tr.termination_reason == "converged" and len(tr.rounds) == 1
    assert tr.rounds[0].parsed_op["fallback"] is True


def test_zero_rounds(toy_index):
    gw = scripted_gateway([])
    pool, ev, tr = run_retrieval_debate("apple", toy_index, gw, RetDebateConfig(max_rounds=0))
    assert tr.rounds == [] and tr.termination_reason == "round_cap"
    assert gw.call_log.llm_calls == 0 and gw.call_log.retriever_calls == 1


def test_budget_abort_keeps_partial_transcript(toy_index):
    gw = scripted_gateway([{"match": JUDGE, "reply": "Challenger Agent"},
                           {"match": CHAL, "reply": "Query Expansion: [banana]"}, {"reply": "a"}], budget=4)
    with pytest.raises(DebateAborted) as info:
        run_retrieval_debate("apple?", toy_index, gw)
    assert isinstance(info.value.__cause__, BudgetExceeded)
    assert len(info.value.transcript.rounds) == 1
    assert "BudgetExceeded" in info.value.transcript.failure
    assert gw.call_log.llm_calls == 4


def test_replay_matches_transcript(corpus_index):
    from debate_rag import data_path
    from debate_rag.llm import Gateway, ScriptedBackend

    gw = Gateway(ScriptedBackend.from_file(data_path("toy_script.json")))
    q = "Where was the first person to walk on the Moon born?"
    pool, _, tr = run_retrieval_debate(q, corpus_index, gw)
    assert replay_pools(q, tr) == [r.pool_after for r in tr.rounds]
    assert tr.final_pool == pool.texts()


ops = st.one_of(
    st.just(("keep",)),
    st.tuples(st.just("exp"), st.sampled_from(["a", "b", "c", "d", "e", "f", "g", "A "])),
    st.tuples(st.just("opt"), st.integers(0, 10), st.sampled_from(["x", "y", "z", "a"])),
    st.tuples(st.just("drop"), st.integers(0, 10)),
)


@settings(max_examples=200, deadline=None)
@given(seq=st.lists(ops, max_size=12), cap=st.integers(1, 5))
def test_pool_algebra_properties(seq, cap):
    pool = init_pool("question")
    for rnd, op in enumerate(seq, 1):
        if op[0] == "keep":
            r = RefinementOp.keep_all()
        elif op[0] == "exp":
            r = RefinementOp.revise(retained=pool.texts(), expansions=[op[1]])
        elif op[0] == "opt":
            old = pool.texts()[op[1] % len(pool)]
            r = RefinementOp.revise(retained=[t for t in pool.texts() if t != old], optimizations=[(old, op[2])])
        else:
            victim = pool.texts()[op[1] % len(pool)]
            r = RefinementOp.revise(retained=[t for t in pool.texts() if t != victim])
        new = apply_refinement(pool, r, rnd, cap)
        assert 1 <= len(new) <= max(cap, 1)
        assert apply_refinement(new, RefinementOp.keep_all(), rnd + 1, cap) == new
        assert pool_distance(new, new) == 0
        assert pool_distance(new, pool) == pool_distance(pool, new)
        pool = new
