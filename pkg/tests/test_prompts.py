from __future__ import annotations

import pytest

from chatloop.errors import UnparseableCritique
from chatloop.models import CritiqueRecord, DialogueTurn, ScoreTriple
from chatloop.prompts import (
    PromptTemplate,
    all_score_triples,
    canonical_critique_text,
    load_template,
    parse_critic_output,
    render_chatbot_system,
    render_critic,
    render_regeneration,
    render_user_agent_system,
)

from conftest import make_users


def test_chatbot_system_contains_no_prior_knowledge_clause():
    rendered = render_chatbot_system()
    assert "do not assume prior knowledge of the user" in rendered.lower()


def test_chatbot_system_static_and_marker_free():
    assert render_chatbot_system() == render_chatbot_system()
    assert "{" not in render_chatbot_system()


def test_user_agent_prompt_embeds_all_fields():
    user = make_users(1)[0]
    rendered = render_user_agent_system(user)
    for value in (user.name, user.occupation_group, user.career, user.education, user.personality, user.hobbies):
        assert value in rendered
    assert "self-introduction" in rendered


def test_distinct_backgrounds_give_distinct_prompts():
    users = make_users(2)
    assert render_user_agent_system(users[0]) != render_user_agent_system(users[1])


def _turn(index: int, final: str, first: str = "", reply: str = "r") -> DialogueTurn:
    scores = ScoreTriple(4, 4, 4) if index >= 2 else None
    return DialogueTurn(
        turn_index=index,
        bot_first_attempt=first or final,
        bot_final=final,
        user_reply=reply,
        first_scores=scores,
        final_scores=scores,
    )


def test_critic_prompt_contains_greeting_and_response():
    user = make_users(1)[0]
    history = (_turn(1, "hello there", reply="hi, I am Pat"),)
    messages = render_critic(user, history, "what do you enjoy most?")
    content = messages[-1].content
    assert "hello there" in content
    assert "hi, I am Pat" in content
    assert "what do you enjoy most?" in content
    assert messages[0].role == "system" and messages[-1].role == "user"


def test_critic_history_uses_final_utterances_only():
    user = make_users(1)[0]
    history = (
        _turn(1, "greet"),
        DialogueTurn(
            turn_index=2,
            bot_first_attempt="REJECTED DRAFT",
            bot_final="polished reply",
            user_reply="thanks",
            first_scores=ScoreTriple(3, 3, 3),
            final_scores=ScoreTriple(4, 4, 4),
            regen_count=1,
        ),
    )
    content = "\n".join(m.content for m in render_critic(user, history, "next response"))
    assert "polished reply" in content
    assert "REJECTED DRAFT" not in content


def test_critic_prompt_has_anchor_descriptions_for_1_3_5():
    user = make_users(1)[0]
    system = render_critic(user, (), "a response")[0].content
    for dim in ("Interest", "Relevance", "Value"):
        assert dim in system
    assert system.count("1:") == 3
    assert system.count("3:") == 3
    assert system.count("5:") == 3


def test_regeneration_names_only_low_dimensions():
    critique = CritiqueRecord(
        scores=ScoreTriple(3, 5, 5),
        reasons={"interest": "too generic", "relevance": "", "value": ""},
        raw_text="",
    )
    message = render_regeneration(critique, accept_threshold=4)
    assert "Interest" in message.content
    assert "too generic" in message.content
    assert "Relevance" not in message.content
    assert "Value scored" not in message.content
    assert message.role == "user"


def test_regeneration_names_all_failing_dimensions():
    critique = CritiqueRecord(
        scores=ScoreTriple(3, 3, 3),
        reasons={"interest": "a", "relevance": "b", "value": "c"},
        raw_text="",
    )
    content = render_regeneration(critique, 4).content
    for label in ("Interest", "Relevance", "Value"):
        assert label in content


def test_regeneration_rejects_passing_critique():
    critique = CritiqueRecord(scores=ScoreTriple(5, 5, 5), reasons={}, raw_text="")
    with pytest.raises(ValueError):
        render_regeneration(critique, 4)


def test_parse_labeled_lines_with_reasons():
    raw = "Interest: 4 — asks about her research\nRelevance: 5 — cites her field\nValue: 3 — generic advice"
    record = parse_critic_output(raw)
    assert record.scores == ScoreTriple(4, 5, 3)
    assert record.reasons["interest"] == "asks about her research"
    assert record.reasons["value"] == "generic advice"
    assert record.raw_text == raw


def test_parse_tolerates_order_case_and_separators():
    record = parse_critic_output("relevance=5; value=5; interest=5")
    assert record.scores == ScoreTriple(5, 5, 5)


def test_parse_rejects_text_without_scores():
    with pytest.raises(UnparseableCritique):
        parse_critic_output("great answer!")


def test_parse_rounds_half_up_and_flags():
    record = parse_critic_output("Interest: 3.5 - x\nRelevance: 4.4 - y\nValue: 2.5 - z")
    assert record.scores == ScoreTriple(4, 4, 3)
    assert record.rounded


def test_parse_rejects_out_of_range_scores():
    with pytest.raises(UnparseableCritique):
        parse_critic_output("Interest: 6 - a\nRelevance: 4 - b\nValue: 4 - c")


def test_parse_partial_fields_unrecoverable():
    with pytest.raises(UnparseableCritique):
        parse_critic_output("Interest: 4 - only one dimension present")


def test_roundtrip_all_125_triples():
    for triple in all_score_triples():
        text = canonical_critique_text(triple, {"interest": "ri", "relevance": "rr", "value": "rv"})
        record = parse_critic_output(text)
        assert record.scores == triple
        assert not record.rounded


def test_template_unbound_placeholder_fails():
    template = PromptTemplate(id="t", body="hello {name} from {place}", required_placeholders=("name",))
    with pytest.raises(ValueError):
        template.render(name="x")  # place not bound
    assert template.render(name="x", place="y") == "hello x from y"


def test_template_required_placeholder_enforced():
    template = PromptTemplate(id="t", body="hi", required_placeholders=("name",))
    with pytest.raises(ValueError):
        template.render()


def test_templates_hot_loadable_from_override_dir(tmp_path):
    (tmp_path / "chatbot_system.txt").write_text("custom prompt, do not assume prior knowledge of the user")
    assert render_chatbot_system(prompts_dir=tmp_path).startswith("custom prompt")
    # package default still served for ids without an override file
    assert "critic" in load_template("critic_system", prompts_dir=tmp_path).body.lower()
