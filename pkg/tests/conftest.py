from __future__ import annotations

import pytest

from chatloop.gateway import EndpointRef, Gateway, StubRule, StubScript
from chatloop.models import GenerationConfig, UserBackground, count_words, validate
from chatloop.personas import synthesize_backgrounds

# The critic request embeds the response under this header, so rules keyed on
# it match the response under evaluation and never the dialogue history.
CRITIC_NEEDLE = "Chatbot response to evaluate:\n"


def critic_rule(response_text: str, scores: tuple[int, int, int], reason: str = "scripted") -> StubRule:
    i, r, v = scores
    reply = f"Interest: {i} - {reason}\nRelevance: {r} - {reason}\nValue: {v} - {reason}"
    return StubRule(last_user_contains=CRITIC_NEEDLE + response_text, reply=reply)


def constant_critic(script_id: str, scores: tuple[int, int, int]) -> StubScript:
    i, r, v = scores
    reply = f"Interest: {i} - fixed\nRelevance: {r} - fixed\nValue: {v} - fixed"
    return StubScript(id=script_id, rules=(StubRule(reply=reply),))


def user_agent_script(script_id: str = "user_agent") -> StubScript:
    return StubScript(
        id=script_id,
        rules=(
            StubRule(min_messages=3, reply="Happy to chat; my work and hobbies keep me busy."),
            StubRule(reply="Hi there, quick intro: I am a synthetic test user."),
        ),
    )


def ladder_chatbot(script_id: str = "chatbot_ladder") -> StubScript:
    return StubScript(id=script_id, quality_ladder={0: "dull", 1: "sharp"})


def ladder_critic(script_id: str = "critic_ladder") -> StubScript:
    # (3,3,3) for the weak attempt, (4,4,5) for the improved one
    return StubScript(
        id=script_id,
        rules=(
            critic_rule("dull", (3, 3, 3)),
            critic_rule("sharp", (4, 4, 5)),
            StubRule(reply="Interest: 4 - ok\nRelevance: 4 - ok\nValue: 4 - ok"),
        ),
    )


@pytest.fixture
def gateway() -> Gateway:
    return Gateway(concurrency_limit=4, max_retries=3, retry_backoff=0.01, request_timeout=5.0, sleep=lambda s: None)


@pytest.fixture
def config() -> GenerationConfig:
    return GenerationConfig(turns=2, max_regens=3, max_iterations=2, concurrency_limit=4, seed=7)


def make_users(n: int, group: tuple[str, str] = ("21", "Science and Engineering Professionals"), seed: int = 1):
    return synthesize_backgrounds(group, n, seed)


# ---------------------------------------------------------------------------
# Tiered world: three chatbot versions where each version satisfies a wider
# band of users, driving engineered easy-rate progress across iterations.
# ---------------------------------------------------------------------------

PASS_REPLY = "Interest: 5 - engaging\nRelevance: 5 - on point\nValue: 5 - useful"
FAIL_REPLY = "Interest: 3 - flat\nRelevance: 3 - off target\nValue: 3 - thin"


def tagged_user(uid: str, marker: str) -> UserBackground:
    filler = (
        "A steady, dependable practitioner with long experience, careful habits, a practical outlook, "
        "and a reputation for diligence earned across many demanding and occasionally thankless projects."
    )
    user = UserBackground(
        id=uid,
        occupation_group="Synthetic Test Group",
        name=f"Probe {uid.upper()}",
        career=f"Core speciality marker {marker}. {filler}",
        education="Trained on the job over many years, with a certificate collected along the way.",
        personality="Patient but blunt, and openly skeptical of fashionable ideas.",
        hobbies="Enjoys quiet walks, crossword puzzles, and repairing old radios.",
        word_count=0,
    )
    user = UserBackground(**{**user.to_dict(), "word_count": count_words(user.combined_text())})
    assert validate(user) == [], validate(user)
    return user


def tiered_users() -> list[UserBackground]:
    users = []
    for i in range(10):
        tier = "tier1" if i < 5 else ("tier2" if i < 8 else "tier3")
        users.append(tagged_user(f"u{i}", tier))
    return users


def register_tiered_world(gateway: Gateway):
    for version in ("v1", "v2", "v3"):
        gateway.register_stub(
            StubScript(id=f"chatbot_{version}", rules=(StubRule(reply=f"reply from model {version}"),))
        )
    gateway.register_stub(user_agent_script("tiered_user_agent"))
    gateway.register_stub(
        StubScript(
            id="tiered_critic",
            rules=(
                StubRule(last_user_contains_all=("reply from model v1", "tier1"), reply=PASS_REPLY),
                StubRule(last_user_contains="reply from model v1", reply=FAIL_REPLY),
                StubRule(last_user_contains_all=("reply from model v2", "tier3"), reply=FAIL_REPLY),
                StubRule(last_user_contains="reply from model v2", reply=PASS_REPLY),
                StubRule(last_user_contains="reply from model v3", reply=PASS_REPLY),
                StubRule(reply=FAIL_REPLY),
            ),
        )
    )
    return (
        EndpointRef(id="stub:chatbot_v1", kind="stub", model_name="chatbot_v1"),
        EndpointRef(id="stub:tiered_user_agent", kind="stub", model_name="tiered_user_agent"),
        EndpointRef(id="stub:tiered_critic", kind="stub", model_name="tiered_critic"),
    )
