"""Evaluation metrics: per-dimension means, perplexity, regeneration statistics.

Test-time evaluation never regenerates: the chatbot runs plain dialogues and
the critic scores each response exactly once after the fact.  Perplexity is
the exponential of the negative mean token log-probability of chatbot
utterances, scored by a configurable logprob-capable endpoint.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

from .errors import NoScoredTurns
from .gateway import EndpointRef, Gateway
from .generation import generate_corpus
from .models import CorpusIteration, Dialogue, GenerationConfig, UserBackground, mean


@dataclass(frozen=True)
class PerTurnMean:
    turn: int
    relevance: float
    interest: float
    value: float

    def to_dict(self) -> dict[str, Any]:
        return {"turn": self.turn, "relevance": self.relevance, "interest": self.interest, "value": self.value}


@dataclass(frozen=True)
class EvalReport:
    rel_mean: float
    int_mean: float
    val_mean: float
    per_turn_means: tuple[PerTurnMean, ...]
    n_dialogues: int
    n_scored_turns: int
    critic_endpoint_id: str
    ppl: float | None = None
    excluded_user_ids: tuple[str, ...] = ()

    def overall_mean(self) -> float:
        return (self.rel_mean + self.int_mean + self.val_mean) / 3.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "rel_mean": self.rel_mean,
            "int_mean": self.int_mean,
            "val_mean": self.val_mean,
            "per_turn_means": [p.to_dict() for p in self.per_turn_means],
            "n_dialogues": self.n_dialogues,
            "n_scored_turns": self.n_scored_turns,
            "critic_endpoint_id": self.critic_endpoint_id,
            "ppl": self.ppl,
            "excluded_user_ids": list(self.excluded_user_ids),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EvalReport":
        return cls(
            rel_mean=float(d["rel_mean"]),
            int_mean=float(d["int_mean"]),
            val_mean=float(d["val_mean"]),
            per_turn_means=tuple(
                PerTurnMean(turn=p["turn"], relevance=p["relevance"], interest=p["interest"], value=p["value"])
                for p in d.get("per_turn_means", [])
            ),
            n_dialogues=int(d["n_dialogues"]),
            n_scored_turns=int(d["n_scored_turns"]),
            critic_endpoint_id=str(d["critic_endpoint_id"]),
            ppl=d.get("ppl"),
            excluded_user_ids=tuple(d.get("excluded_user_ids", [])),
        )


@dataclass(frozen=True)
class RegenStats:
    regen_rate: float  # fraction of scored turns with at least one regeneration
    avg_regens: float  # total regenerations per scored turn
    per_iteration: dict[int, tuple[float, float]]

    def to_dict(self) -> dict[str, Any]:
        return {
            "regen_rate": self.regen_rate,
            "avg_regens": self.avg_regens,
            "per_iteration": {str(k): list(v) for k, v in self.per_iteration.items()},
        }


def score_means(dialogues: Sequence[Dialogue]) -> tuple[float, float, float, int]:
    rel, inte, val = [], [], []
    for d in dialogues:
        for t in d.scored_turns():
            if t.final_scores is None:
                continue
            rel.append(t.final_scores.relevance)
            inte.append(t.final_scores.interest)
            val.append(t.final_scores.value)
    return mean(rel), mean(inte), mean(val), len(rel)


def evaluate_chatbot(
    gateway: Gateway,
    chatbot: EndpointRef,
    test_users: list[UserBackground],
    user_endpoint: EndpointRef,
    critic_endpoint: EndpointRef,
    config: GenerationConfig,
    ppl_scorer: EndpointRef | None = None,
) -> EvalReport:
    """Score the chatbot on held-out users: plain dialogues, post-hoc critic scoring.

    Regeneration is disabled (the critic never feeds back into generation at
    test time).  Aborted dialogues are excluded from the means and listed in
    the report.
    """
    eval_config = dataclasses.replace(config, max_regens=0)
    corpus = generate_corpus(gateway, chatbot, test_users, user_endpoint, critic_endpoint, eval_config)
    completed = [d for d in corpus.dialogues if not d.aborted]
    excluded = tuple(d.user_id for d in corpus.dialogues if d.aborted)

    rel_mean, int_mean, val_mean, n_scored = score_means(completed)
    per_turn = []
    for t_index in range(2, eval_config.turns + 1):
        triples = [
            t.final_scores
            for d in completed
            for t in d.turns
            if t.turn_index == t_index and t.final_scores is not None
        ]
        if triples:
            per_turn.append(
                PerTurnMean(
                    turn=t_index,
                    relevance=mean(s.relevance for s in triples),
                    interest=mean(s.interest for s in triples),
                    value=mean(s.value for s in triples),
                )
            )

    ppl = None
    if ppl_scorer is not None:
        scored_texts = []
        for d in completed:
            context = ""
            for t in d.turns:
                scored_texts.append((context, t.bot_final))
                context += f"Chatbot: {t.bot_final}\nUser: {t.user_reply}\n"
        if scored_texts:
            ppl = compute_ppl(gateway, scored_texts, ppl_scorer)

    return EvalReport(
        rel_mean=rel_mean,
        int_mean=int_mean,
        val_mean=val_mean,
        per_turn_means=tuple(per_turn),
        n_dialogues=len(completed),
        n_scored_turns=n_scored,
        critic_endpoint_id=critic_endpoint.id,
        ppl=ppl,
        excluded_user_ids=excluded,
    )


def compute_ppl(
    gateway: Gateway,
    scored_texts: Sequence[tuple[str, str]],
    scorer: EndpointRef,
) -> float:
    """Perplexity over all tokens of the given utterances, conditioned on context.

    PPL = exp(-(sum of token log-probabilities) / (token count)), natural log
    base.  Invariant to how the utterances are chunked.
    """
    if not scored_texts:
        raise ValueError("scored_texts must be non-empty")
    total_logprob = 0.0
    total_tokens = 0
    for context, utterance in scored_texts:
        if not utterance:
            raise ValueError("utterances must be non-empty")
        for _token, logprob in gateway.score_tokens(scorer, context, utterance):
            total_logprob += logprob
            total_tokens += 1
    if total_tokens == 0:
        raise ValueError("scorer returned no tokens")
    return math.exp(-total_logprob / total_tokens)


def regen_stats(corpora: CorpusIteration | Iterable[CorpusIteration]) -> RegenStats:
    """Regeneration rate and average regenerations per scored turn.

    Rate counts turns with at least one regeneration; average counts total
    regenerations, so the average may exceed the rate.
    """
    if isinstance(corpora, CorpusIteration):
        corpora = [corpora]
    per_iteration: dict[int, tuple[float, float]] = {}
    all_counts: list[int] = []
    for corpus in corpora:
        counts = [t.regen_count for d in corpus.dialogues for t in d.scored_turns() if t.final_scores is not None]
        if counts:
            per_iteration[corpus.iteration] = (
                sum(1 for c in counts if c >= 1) / len(counts),
                sum(counts) / len(counts),
            )
        all_counts.extend(counts)
    if not all_counts:
        raise NoScoredTurns("no scored turns in the supplied corpora")
    return RegenStats(
        regen_rate=sum(1 for c in all_counts if c >= 1) / len(all_counts),
        avg_regens=sum(all_counts) / len(all_counts),
        per_iteration=per_iteration,
    )


def easy_rate_series(items: Iterable[Any]) -> list[tuple[int, float]]:
    """Per-iteration easy rates, in iteration order.

    Accepts TrainingSet-like objects (`.iteration` / `.easy_rate`) or plain
    dicts with those keys (e.g. manifest iteration records).
    """
    series = []
    for item in items:
        if isinstance(item, dict):
            series.append((int(item["iteration"]), float(item["easy_rate"])))
        else:
            series.append((int(item.iteration), float(item.easy_rate)))
    series.sort(key=lambda kv: kv[0])
    if not series:
        raise ValueError("at least one iteration is required")
    return series


def render_eval_table(report: EvalReport) -> str:
    """Fixed-width table mirroring the Rel./Int./Val./PPL reporting layout."""
    header = f"{'Rel.':>8} {'Int.':>8} {'Val.':>8} {'PPL':>10}"
    ppl = f"{report.ppl:.3f}" if report.ppl is not None else "-"
    row = f"{report.rel_mean:>8.3f} {report.int_mean:>8.3f} {report.val_mean:>8.3f} {ppl:>10}"
    lines = [header, row, ""]
    lines.append(f"dialogues: {report.n_dialogues}  scored turns: {report.n_scored_turns}")
    if report.excluded_user_ids:
        lines.append(f"excluded (aborted): {', '.join(report.excluded_user_ids)}")
    return "\n".join(lines)


def render_regen_table(stats: RegenStats) -> str:
    iterations = sorted(stats.per_iteration)
    header = f"{'Process':<28}" + "".join(f"{'Iter. ' + str(k):>10}" for k in iterations)
    rate_row = f"{'Regeneration Rate':<28}" + "".join(
        f"{stats.per_iteration[k][0] * 100:>9.1f}%" for k in iterations
    )
    avg_row = f"{'Average Regenerations':<28}" + "".join(
        f"{stats.per_iteration[k][1]:>10.3f}" for k in iterations
    )
    overall = f"overall: rate {stats.regen_rate:.3f}, average {stats.avg_regens:.3f}"
    return "\n".join([header, rate_row, avg_row, overall])
