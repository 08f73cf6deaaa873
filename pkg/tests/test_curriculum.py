from __future__ import annotations

import dataclasses
import itertools
import json

import pytest

from chatloop.curriculum import (
    DifficultyInput,
    RunMode,
    TrainerHook,
    build_training_set,
    classify_dialogue,
    export_sft,
    invoke_trainer,
    measure_turn_difficulty,
    resume_curriculum,
    run_curriculum,
)
from chatloop.errors import EmptyTrainingSet
from chatloop.gateway import StubRule, StubScript, remote_endpoint
from chatloop.generation import generate_corpus
from chatloop.manifest import STATUS_COMPLETED, STATUS_HALTED, load_manifest
from chatloop.models import (
    DIFFICULT,
    EASY,
    UNCLASSIFIED,
    CorpusIteration,
    Dialogue,
    DialogueTurn,
    GenerationConfig,
    ScoreTriple,
    read_corpus,
)

from conftest import (
    constant_critic,
    critic_rule,
    make_users,
    register_tiered_world,
    tiered_users,
    user_agent_script,
)


# Independent re-statement of the difficulty condition, kept deliberately
# separate in style from the implementation: a sample is difficult when some
# final score sits below the floor, or, for regenerated turns, when fewer
# dimensions improved than required.
def oracle_difficult(final, first, regenerated, alpha, beta):
    exists_low = False
    for score in final:
        if score < alpha:
            exists_low = True
    improved = 0
    for j in range(3):
        if final[j] - first[j] > 0:
            improved += 1
    if exists_low:
        return True
    if regenerated and improved < beta:
        return True
    return False


def _inp(final, first, regenerated=True):
    return DifficultyInput(
        final_scores=ScoreTriple(*final), first_scores=ScoreTriple(*first), regenerated=regenerated
    )


def test_first_attempt_pass_is_easy():
    assert measure_turn_difficulty(_inp((5, 5, 5), (5, 5, 5), regenerated=False), alpha=4, beta=1) is False


def test_any_low_final_score_is_difficult():
    assert measure_turn_difficulty(_inp((3, 5, 5), (1, 1, 1)), alpha=4, beta=1) is True
    assert measure_turn_difficulty(_inp((3, 4, 5), (3, 4, 5)), alpha=4, beta=0) is True


def test_regenerated_with_enough_boost_is_easy():
    assert measure_turn_difficulty(_inp((4, 4, 4), (3, 3, 4)), alpha=4, beta=1) is False


def test_regenerated_without_boost_is_difficult():
    assert measure_turn_difficulty(_inp((4, 4, 4), (4, 4, 4)), alpha=4, beta=1) is True


def test_difficulty_matches_oracle_exhaustively():
    scores = list(itertools.product(range(1, 6), repeat=3))
    for alpha in range(1, 6):
        for beta in range(0, 4):
            for final in scores:
                for first in scores:
                    for regenerated in (False, True):
                        got = measure_turn_difficulty(_inp(final, first, regenerated), alpha, beta)
                        want = oracle_difficult(final, first, regenerated, alpha, beta)
                        assert got == want, (final, first, regenerated, alpha, beta)


def test_difficulty_monotone_in_alpha_and_beta():
    samples = [
        ((4, 4, 5), (3, 3, 5), True),
        ((5, 5, 5), (5, 5, 5), False),
        ((2, 4, 4), (2, 3, 3), True),
        ((4, 4, 4), (4, 4, 3), True),
    ]
    for final, first, regenerated in samples:
        for beta in range(0, 4):
            previous = False
            for alpha in range(1, 6):
                current = measure_turn_difficulty(_inp(final, first, regenerated), alpha, beta)
                assert current >= previous  # raising alpha never flips difficult -> easy
                previous = current
        for alpha in range(1, 6):
            previous = False
            for beta in range(0, 4):
                current = measure_turn_difficulty(_inp(final, first, regenerated), alpha, beta)
                assert current >= previous
                previous = current


def _dialogue(user_id: str, turn_specs, aborted=False) -> Dialogue:
    turns = [DialogueTurn(1, "hi", "hi", "intro")]
    for index, (final, first, regens) in enumerate(turn_specs, start=2):
        turns.append(
            DialogueTurn(
                turn_index=index,
                bot_first_attempt="first" if regens else "same",
                bot_final="final" if regens else "same",
                user_reply="reply",
                first_scores=ScoreTriple(*first),
                final_scores=ScoreTriple(*final),
                regen_count=regens,
            )
        )
    return Dialogue(
        user_id=user_id,
        iteration=1,
        turns=tuple(turns),
        abort_reason="boom" if aborted else None,
        difficulty=UNCLASSIFIED if aborted else None,
    )


EASY_TURN = ((5, 5, 5), (5, 5, 5), 0)
HARD_TURN = ((3, 3, 3), (3, 3, 3), 1)


def test_classify_all_easy_turns():
    assert classify_dialogue(_dialogue("u", [EASY_TURN] * 4), 4, 1) == EASY


def test_classify_breaks_on_any_difficult_turn():
    assert classify_dialogue(_dialogue("u", [EASY_TURN, HARD_TURN, EASY_TURN]), 4, 1) == DIFFICULT


def test_classify_aborted_is_unclassified():
    assert classify_dialogue(_dialogue("u", [EASY_TURN], aborted=True), 4, 1) == UNCLASSIFIED


def test_build_training_set_counts():
    dialogues = [_dialogue(f"e{i}", [EASY_TURN]) for i in range(7)]
    dialogues += [_dialogue(f"d{i}", [HARD_TURN]) for i in range(3)]
    corpus = CorpusIteration(1, tuple(dialogues), GenerationConfig(turns=2))
    ts = build_training_set(corpus, 4, 1)
    assert ts.easy_rate == pytest.approx(0.7)
    assert len(ts.easy_dialogues) == 7
    assert sorted(ts.difficult_user_ids) == ["d0", "d1", "d2"]
    assert all(d.difficulty == EASY for d in ts.easy_dialogues)


def test_build_training_set_all_easy_has_no_carryover():
    corpus = CorpusIteration(1, tuple(_dialogue(f"e{i}", [EASY_TURN]) for i in range(4)), GenerationConfig(turns=2))
    assert build_training_set(corpus, 4, 1).difficult_user_ids == ()


def test_unclassified_join_carryover_but_not_denominator():
    dialogues = [_dialogue(f"e{i}", [EASY_TURN]) for i in range(5)]
    dialogues += [_dialogue(f"d{i}", [HARD_TURN]) for i in range(3)]
    dialogues += [_dialogue(f"x{i}", [EASY_TURN], aborted=True) for i in range(2)]
    corpus = CorpusIteration(1, tuple(dialogues), GenerationConfig(turns=2))
    ts = build_training_set(corpus, 4, 1)
    assert ts.easy_rate == pytest.approx(5 / 8)
    assert len(ts.difficult_user_ids) == 5
    assert ts.n_unclassified == 2


# ---------------------------------------------------------------------------
# SFT export
# ---------------------------------------------------------------------------


def _ladder3_setup(gateway):
    chatbot = gateway.register_stub(
        StubScript(
            id="bot3",
            rules=(StubRule(last_user_contains="Greet the user", reply="warm greeting"),),
            quality_ladder={0: "att0", 1: "att1", 2: "att2"},
        )
    )
    critic = gateway.register_stub(
        StubScript(
            id="critic3",
            rules=(
                critic_rule("att0", (3, 3, 3)),
                critic_rule("att1", (3, 4, 4)),
                critic_rule("att2", (5, 5, 5)),
                StubRule(reply="Interest: 5 - x\nRelevance: 5 - y\nValue: 5 - z"),
            ),
        )
    )
    user_agent = gateway.register_stub(user_agent_script("ua_l3"))
    return chatbot, user_agent, critic


def test_export_contains_final_attempts_only(gateway, tmp_path):
    chatbot, user_agent, critic = _ladder3_setup(gateway)
    config = GenerationConfig(turns=3, max_regens=3)
    corpus = generate_corpus(gateway, chatbot, make_users(1), user_agent, critic, config)
    assert corpus.dialogues[0].turns[1].regen_count == 2
    ts = build_training_set(corpus, alpha=4, beta=1)
    summary = export_sft(ts, tmp_path / "train.jsonl")
    text = (tmp_path / "train.jsonl").read_text()
    assert summary.records_written == 1
    records = [json.loads(line) for line in text.splitlines()]
    assistant_texts = [m["content"] for m in records[0]["messages"] if m["role"] == "assistant"]
    # turn with regen_count=2 exports the third attempt
    assert "att2" in assistant_texts
    assert "att0" not in text and "att1" not in text
    # no critic artifacts in the export
    assert "Interest:" not in text and "Relevance:" not in text


def test_export_record_layout(gateway, tmp_path):
    chatbot = gateway.register_stub(StubScript(id="bot", rules=(StubRule(reply="fine"),)))
    user_agent = gateway.register_stub(user_agent_script("ua_e"))
    critic = gateway.register_stub(constant_critic("c5", (5, 5, 5)))
    config = GenerationConfig(turns=5)
    corpus = generate_corpus(gateway, chatbot, make_users(1), user_agent, critic, config)
    ts = build_training_set(corpus, 4, 1)
    export_sft(ts, tmp_path / "train.jsonl")
    record = json.loads((tmp_path / "train.jsonl").read_text().splitlines()[0])
    messages = record["messages"]
    assert messages[0]["role"] == "system"
    # greeting is the first assistant message, exchanges alternate assistant/user
    assert messages[1]["role"] == "assistant"
    roles = [m["role"] for m in messages[1:]]
    assert roles == ["assistant", "user"] * config.turns
    assert len([m for m in messages if m["role"] == "assistant"]) == 5


def test_export_empty_training_set_raises(tmp_path):
    ts = build_training_set(
        CorpusIteration(1, (_dialogue("d", [HARD_TURN]),), GenerationConfig(turns=2)), 4, 1
    )
    with pytest.raises(EmptyTrainingSet):
        export_sft(ts, tmp_path / "train.jsonl")


# ---------------------------------------------------------------------------
# Trainer hook
# ---------------------------------------------------------------------------


def test_passthrough_trainer_walks_sequence(gateway):
    v2 = gateway.register_stub(StubScript(id="v2", rules=(StubRule(reply="x"),)))
    hook = TrainerHook(kind="passthrough_stub", endpoint_sequence=("v2",))
    current = gateway.register_stub(StubScript(id="v1", rules=(StubRule(reply="y"),)))
    result = invoke_trainer(hook, gateway, current, "train.jsonl", iteration=1)
    assert result.ok and result.endpoint == v2
    # sequence exhausted: endpoint unchanged
    result2 = invoke_trainer(hook, gateway, v2, "train.jsonl", iteration=2)
    assert result2.ok and result2.endpoint == v2


def test_external_command_trainer_success(gateway, tmp_path):
    train_file = tmp_path / "train.jsonl"
    train_file.write_text('{"messages": []}\n')
    marker = tmp_path / "invoked.txt"
    hook = TrainerHook(kind="external_command", command=f"cat {{train_file}} > {marker} && echo {{output_model_id}}")
    current = remote_endpoint("base", "http://example.invalid", "base-model")
    result = invoke_trainer(hook, gateway, current, train_file, iteration=1)
    assert result.ok
    assert result.endpoint.model_name == "base-model-ft1"
    assert result.endpoint.base_url == current.base_url
    assert marker.read_text() == train_file.read_text()


def test_external_command_trainer_failure(gateway, tmp_path):
    hook = TrainerHook(kind="external_command", command="exit 3")
    current = remote_endpoint("base", "http://example.invalid", "base-model")
    result = invoke_trainer(hook, gateway, current, tmp_path / "t.jsonl", iteration=1)
    assert not result.ok
    assert "3" in result.detail


# ---------------------------------------------------------------------------
# Full curriculum loop with engineered per-iteration progress
# ---------------------------------------------------------------------------


@pytest.fixture
def tiered_world(gateway):
    chatbot, user_agent, critic = register_tiered_world(gateway)
    trainer = TrainerHook(kind="passthrough_stub", endpoint_sequence=("chatbot_v2", "chatbot_v3", "chatbot_v3"))
    config = GenerationConfig(turns=2, max_regens=1, max_iterations=3, concurrency_limit=4, seed=3)
    return gateway, chatbot, user_agent, critic, trainer, config


def test_full_mode_easy_rates_improve_as_engineered(tiered_world, tmp_path):
    gateway, chatbot, user_agent, critic, trainer, config = tiered_world
    manifest = run_curriculum(
        gateway, config, tiered_users(), chatbot, user_agent, critic, trainer, RunMode.FULL, tmp_path / "run"
    )
    assert manifest.status == STATUS_COMPLETED
    rates = [record.easy_rate for record in manifest.iterations]
    assert rates == [pytest.approx(0.5), pytest.approx(0.8), pytest.approx(1.0)]
    endpoints = [record.chatbot_endpoint["model_name"] for record in manifest.iterations]
    assert endpoints == ["chatbot_v1", "chatbot_v2", "chatbot_v3"]
    # FULL trains only on easy dialogues
    for record in manifest.iterations:
        train_lines = (tmp_path / "run" / record.train_path).read_text().splitlines()
        assert len(train_lines) == record.n_easy


def test_full_mode_matches_oracle_partition(tiered_world, tmp_path):
    gateway, chatbot, user_agent, critic, trainer, config = tiered_world
    manifest = run_curriculum(
        gateway, config, tiered_users(), chatbot, user_agent, critic, trainer, RunMode.FULL, tmp_path / "run"
    )
    for record in manifest.iterations:
        corpus = read_corpus(tmp_path / "run" / record.corpus_path)
        easy = 0
        classified = 0
        for d in corpus.dialogues:
            if d.aborted:
                continue
            classified += 1
            difficult = False
            for t in d.scored_turns():
                if oracle_difficult(
                    t.final_scores.as_tuple(), t.first_scores.as_tuple(), t.regen_count > 0,
                    config.alpha, config.beta,
                ):
                    difficult = True
                    break
            if not difficult:
                easy += 1
        assert record.easy_rate == pytest.approx(easy / classified)


def test_sft_mode_issues_zero_critic_calls(tiered_world, tmp_path):
    gateway, chatbot, user_agent, critic, trainer, config = tiered_world
    config = dataclasses.replace(config, max_iterations=2)
    manifest = run_curriculum(
        gateway, config, tiered_users()[:4], chatbot, user_agent, critic, trainer, RunMode.SFT, tmp_path / "run"
    )
    assert manifest.status == STATUS_COMPLETED
    assert all(record.critic_calls == 0 for record in manifest.iterations)
    assert gateway.telemetry.calls(critic.id) == 0
    # endpoint never advances between collection rounds
    names = {record.chatbot_endpoint["model_name"] for record in manifest.iterations}
    assert names == {"chatbot_v1"}
    # single fine-tune at the end over the accumulated corpus
    assert manifest.final_train_path is not None
    lines = (tmp_path / "run" / manifest.final_train_path).read_text().splitlines()
    assert len(lines) == 4 * 2
    assert manifest.final_trained_endpoint is not None


def test_sft_cdc_mode_keeps_single_endpoint_but_uses_critic(tiered_world, tmp_path):
    gateway, chatbot, user_agent, critic, trainer, config = tiered_world
    config = dataclasses.replace(config, max_iterations=2)
    manifest = run_curriculum(
        gateway, config, tiered_users()[:4], chatbot, user_agent, critic, trainer, RunMode.SFT_CDC, tmp_path / "run"
    )
    assert all(record.critic_calls > 0 for record in manifest.iterations)
    names = {record.chatbot_endpoint["model_name"] for record in manifest.iterations}
    assert names == {"chatbot_v1"}
    assert manifest.final_train_path is not None


def test_cdc_ift_mode_advances_endpoint_and_trains_on_all_classified(tiered_world, tmp_path):
    gateway, chatbot, user_agent, critic, trainer, config = tiered_world
    config = dataclasses.replace(config, max_iterations=2)
    manifest = run_curriculum(
        gateway, config, tiered_users(), chatbot, user_agent, critic, trainer, RunMode.CDC_IFT, tmp_path / "run"
    )
    endpoints = [record.chatbot_endpoint["model_name"] for record in manifest.iterations]
    assert endpoints == ["chatbot_v1", "chatbot_v2"]
    for record in manifest.iterations:
        classified = (record.n_easy or 0) + (record.n_difficult or 0)
        train_lines = (tmp_path / "run" / record.train_path).read_text().splitlines()
        assert len(train_lines) == classified == 10


def test_trainer_failure_halts_resumable(tiered_world, tmp_path):
    gateway, chatbot, user_agent, critic, _, config = tiered_world
    failing = TrainerHook(kind="external_command", command="exit 9")
    manifest = run_curriculum(
        gateway, config, tiered_users()[:3], chatbot, user_agent, critic, failing, RunMode.FULL, tmp_path / "run"
    )
    assert manifest.status == STATUS_HALTED
    assert "exited 9" in manifest.halt_reason
    # resumable: swap in a working trainer and continue to completion
    working = TrainerHook(kind="passthrough_stub", endpoint_sequence=("chatbot_v2", "chatbot_v3", "chatbot_v3"))
    resumed = resume_curriculum(gateway, tmp_path / "run", tiered_users()[:3], user_agent, critic, working)
    assert resumed.status == STATUS_COMPLETED
    assert resumed.completed_iterations() == config.max_iterations


def test_manifest_artifacts_exist_and_revalidate(tiered_world, tmp_path):
    from chatloop.manifest import verify_artifacts
    from chatloop.models import read_jsonl

    gateway, chatbot, user_agent, critic, trainer, config = tiered_world
    run_dir = tmp_path / "run"
    manifest = run_curriculum(
        gateway, config, tiered_users(), chatbot, user_agent, critic, trainer, RunMode.FULL, run_dir
    )
    assert verify_artifacts(run_dir, manifest) == []
    for record in manifest.iterations:
        corpus = read_corpus(run_dir / record.corpus_path)  # schema-checked load
        assert corpus.iteration == record.iteration
        rows = list(read_jsonl(run_dir / record.difficulty_path, kind="difficulty"))
        assert len(rows) == len(corpus.dialogues)
        for row in rows:
            assert row["difficulty"] in ("easy", "difficult", "unclassified")
            for turn_evidence in row["turns"]:
                assert {"turn_index", "first_scores", "final_scores", "regenerated", "boosted_count", "difficult"} <= set(turn_evidence)
        assert len(list(read_jsonl(run_dir / record.scores_path, kind="scores"))) > 0


def test_redialogue_difficult_only_narrows_user_set(tiered_world, tmp_path):
    gateway, chatbot, user_agent, critic, trainer, config = tiered_world
    config = dataclasses.replace(config, redialogue_difficult_only=True)
    manifest = run_curriculum(
        gateway, config, tiered_users(), chatbot, user_agent, critic, trainer, RunMode.FULL, tmp_path / "run"
    )
    corpora = [read_corpus(tmp_path / "run" / r.corpus_path) for r in manifest.iterations]
    # iteration 1 covers all 10; iteration 2 only the 5 difficult; iteration 3 the 2 still difficult
    assert [len(c.dialogues) for c in corpora] == [10, 5, 2]
    assert {d.user_id for d in corpora[1].dialogues} == {"u5", "u6", "u7", "u8", "u9"}
    assert {d.user_id for d in corpora[2].dialogues} == {"u8", "u9"}
    assert [r.easy_rate for r in manifest.iterations] == [0.5, pytest.approx(0.6), 1.0]


def test_session_iteration_cap_then_resume_completes(tiered_world, tmp_path):
    gateway, chatbot, user_agent, critic, trainer, config = tiered_world
    run_dir = tmp_path / "run"
    manifest = run_curriculum(
        gateway, config, tiered_users(), chatbot, user_agent, critic, trainer, RunMode.FULL, run_dir,
        max_iterations_this_session=1,
    )
    assert manifest.status == "running"
    assert manifest.completed_iterations() == 1
    reloaded = load_manifest(run_dir)
    assert reloaded.completed_iterations() == 1
    resumed = resume_curriculum(gateway, run_dir, tiered_users(), user_agent, critic, trainer)
    assert resumed.status == STATUS_COMPLETED
    assert resumed.completed_iterations() == 3
