import json

import pytest
from sklearn.base import clone

from debate_rag import DebateRAG, data_path
from debate_rag.cli import main, resolve_config
from debate_rag.evaluation import QAInstance
from debate_rag.llm import CaptureBackend, Gateway, ScriptedBackend
from debate_rag.pipeline import (
    Components,
    PipelineConfig,
    debate_stats,
    load_dataset,
    read_transcripts,
    run_dataset,
    run_question,
    score_transcripts,
    write_outputs,
)

JUDGE = "Output only the agent's name"


@pytest.fixture
def toy_components(corpus_index):
    return Components(Gateway(ScriptedBackend.from_file(data_path("toy_script.json"))), corpus_index)


@pytest.fixture
def toy_instances():
    return load_dataset(data_path("toy_dataset.jsonl"))


def test_load_dataset(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text("\n".join(json.dumps({"id": str(i), "question": f"q{i}?", "golden_answers": ["a"]})
                           for i in range(3)) + "\n", encoding="utf-8")
    assert [i.id for i in load_dataset(p)] == ["0", "1", "2"]
    assert [i.id for i in load_dataset(p, limit=2)] == ["0", "1"]
    sampled = load_dataset(p, limit=2, seed=7)
    assert sampled == load_dataset(p, limit=2, seed=7) and len(sampled) == 2
    assert [i.id for i in sampled] == sorted(i.id for i in sampled)
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "1", "question": "x", "golden_answers": ["a"]}\n{"id": "2", "golden_answers": ["a"]}\n')
    with pytest.raises(ValueError, match=":2:"):
        load_dataset(bad)


def test_toy_dataset_has_yes_no(toy_instances):
    assert len(toy_instances) == 10
    assert sum(i.answer_type.value == "yes_no" for i in toy_instances) == 2


def _run(mode, instance, components, **kw):
    return run_question(instance, PipelineConfig(mode=mode, **kw), components)


def test_naive_modes(toy_instances, toy_components):
    inst = toy_instances[1]
    gen = _run("naive_gen", inst, toy_components)
    assert gen["calls"]["retriever_calls"] == 0 and gen["calls"]["llm_calls"] == 1
    rag = _run("naive_rag", inst, toy_components)
    assert rag["calls"]["retriever_calls"] == 1 and rag["calls"]["llm_calls"] == 1
    assert rag["prediction"] == "Paris" and rag["em"] == 1
    assert rag["query_count"] == 1 and rag["ret_rounds"] == 0


def test_mad_mode(toy_instances, toy_components):
    e = _run("mad", toy_instances[0], toy_components)
    assert e["calls"]["retriever_calls"] == 0
    assert e["calls"]["llm_calls_by_stage"] == {"retrieval": 0, "response": 7, "baseline": 0}
    first = e["res_transcript"]["turns"][0]["messages"][0]["content"]
    assert "your own knowledge" in first


def test_drag_call_counts(toy_instances, toy_components):
    e = _run("drag", toy_instances[1], toy_components)
    assert e["ret_rounds"] == 1 and e["calls"]["llm_calls"] == 10
    for inst in toy_instances:
        e = _run("drag", inst, toy_components)
        calls = e["calls"]["llm_calls_by_stage"]
        assert calls["response"] == 7
        assert calls["retrieval"] == 3 * e["ret_rounds"]
        assert e["calls"]["retriever_calls"] >= 1


def test_ret_only_and_res_only(toy_instances, toy_components):
    inst = toy_instances[8]
    e = _run("drag_ret_only", inst, toy_components)
    calls = e["calls"]["llm_calls_by_stage"]
    assert calls["response"] == 0 and calls["baseline"] == 1
    assert calls["retrieval"] == 3 * e["ret_rounds"]
    assert e["calls"]["retriever_calls"] >= len(e["final_pool"]) >= 1
    e = _run("drag_res_only", inst, toy_components)
    assert e["calls"]["retriever_calls"] == 1 and e["calls"]["llm_calls"] == 7
    assert e["ret_transcript"] is None


def test_no_asymmetry_leaks_evidence(toy_instances, toy_components):
    e = _run("drag_no_asymmetry", toy_instances[1], toy_components)
    assert e["res_transcript"]["asymmetric"] is False
    chal_init = e["res_transcript"]["turns"][1]["messages"][0]["content"]
    assert "Paris is the capital" in chal_init


def test_failures_are_recorded(corpus_index):
    components = Components(Gateway(ScriptedBackend([{"match": "nothing", "reply": "x"}])), corpus_index)
    inst = QAInstance("1", "What?", ["a"])
    e = run_question(inst, PipelineConfig(mode="drag"), components)
    assert e["failure"].startswith("NoRuleError") and e["em"] == 0
    assert e["ret_transcript"]["failure"]


def test_budget_caps_calls(toy_instances, toy_components):
    e = _run("drag", toy_instances[8], toy_components, call_budget=10)
    assert e["calls"]["llm_calls"] <= 10 and "BudgetExceeded" in e["failure"]


def test_mode_needs_index(toy_instances):
    with pytest.raises(ValueError):
        _run("naive_rag", toy_instances[0], Components(Gateway(ScriptedBackend([]))))


def test_parallel_matches_serial(toy_instances, toy_components):
    serial = run_dataset(toy_instances, PipelineConfig(mode="drag"), toy_components)
    parallel = run_dataset(toy_instances, PipelineConfig(mode="drag", parallel=4), toy_components)
    assert serial == parallel


def test_outputs_and_rescore(tmp_path, toy_instances, toy_components):
    config = PipelineConfig(mode="drag", dataset=str(data_path("toy_dataset.jsonl")))
    entries = run_dataset(toy_instances[:2], config, toy_components)
    tpath, rpath = write_outputs(entries, config, tmp_path / "a")
    assert len(tpath.read_text().splitlines()) == 2
    report = json.loads(rpath.read_text())
    assert report["metrics"]["em"] == 50.0
    assert report["config"]["dataset"]["name"] == "toy_dataset.jsonl"
    write_outputs(entries, config, tmp_path / "b")
    assert (tmp_path / "b" / "report.json").read_bytes() == rpath.read_bytes()
    assert score_transcripts(tpath).to_dict() == report["metrics"]
    stats = debate_stats(read_transcripts(tpath))
    assert stats["avg_debate_rounds"] == 1.5 and stats["avg_query_count"] == 1.0


def test_config_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"k": 5, "api_base": "http://file", "res_rounds": 2}))
    env = {"DRAG_API_BASE": "http://env"}
    c = resolve_config({"k": None, "res_rounds": 4}, env, str(cfg))
    assert (c.k, c.api_base, c.res_rounds) == (5, "http://env", 4)
    c = resolve_config({"api_base": "http://cli"}, env, str(cfg))
    assert c.api_base == "http://cli"
    assert resolve_config({}, {}).k == 3
    bad = tmp_path / "bad.json"
    bad.write_text('{"nonsense": 1}')
    with pytest.raises(ValueError):
        resolve_config({}, {}, str(bad))


def test_defaults_match_reported_settings():
    c = PipelineConfig()
    assert (c.k, c.ret_rounds, c.res_rounds, c.epsilon, c.max_pool_size) == (3, 3, 3, 0, 5)


def test_cli_end_to_end(tmp_path, capsys):
    corpus, dataset, script = (str(data_path(n)) for n in ("toy_corpus.jsonl", "toy_dataset.jsonl", "toy_script.json"))
    idx = tmp_path / "idx.json"
    assert main(["ingest", "--corpus", corpus, "--out", str(idx)]) == 0
    out = tmp_path / "run"
    assert main(["run", "--mode", "drag", "--dataset", dataset, "--index", str(idx), "--script", script,
                 "--out", str(out), "--limit", "3"]) == 0
    assert len((out / "transcripts.jsonl").read_text().splitlines()) == 3
    capsys.readouterr()
    assert main(["score", str(out / "transcripts.jsonl")]) == 0
    scored = json.loads(capsys.readouterr().out)
    assert scored == json.loads((out / "report.json").read_text())["metrics"]
    assert main(["stats", str(out / "transcripts.jsonl")]) == 0
    assert json.loads(capsys.readouterr().out)["n"] == 3
    assert main(["run", "--mode", "drag", "--dataset", dataset, "--out", str(out), "--script", script]) == 2


def test_estimator(toy_instances):
    est = DebateRAG(backend=ScriptedBackend.from_file(data_path("toy_script.json")), mode="naive_rag")
    params = clone(est).get_params()
    assert params["mode"] == "naive_rag" and params["k"] == 3
    est.fit(str(data_path("toy_corpus.jsonl")))
    qs = [i.question for i in toy_instances[:3]]
    preds = est.predict(qs)
    assert preds == ["Steve Jobs", "Paris", "1889"]
    assert est.score(qs, [i.golden_answers for i in toy_instances[:3]]) == 1.0
    assert len(est.records_) == 3
    with pytest.raises(ValueError):
        DebateRAG(backend=est.backend, mode="drag").fit(None)
    with pytest.raises(TypeError):
        DebateRAG(backend=est.backend, k=1.5).fit(str(data_path("toy_corpus.jsonl")))


def test_estimator_closed_book_without_corpus():
    est = DebateRAG(backend=ScriptedBackend([{"reply": "The answer is 4."}]), mode="naive_gen").fit()
    assert est.predict(["2+2?"]) == ["4"]


def test_capture_backend_sees_configured_decoding(toy_instances, corpus_index):
    backend = CaptureBackend(ScriptedBackend.from_file(data_path("toy_script.json")))
    gw = Gateway(backend, temperature=0.7, max_tokens=99, model_id="m")
    run_question(toy_instances[1], PipelineConfig(mode="drag"), Components(gw, corpus_index))
    assert backend.requests and all(r.temperature == 0.7 and r.max_tokens == 99 and r.model_id == "m"
                                    for r in backend.requests)
