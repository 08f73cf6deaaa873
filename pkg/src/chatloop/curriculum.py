"""Difficulty measurement, easy-corpus selection, SFT export, and the iteration loop.

A scored turn is difficult when any final score falls below `alpha`, or when
the turn was regenerated and fewer than `beta` dimensions improved over the
first attempt.  The improvement clause applies only to regenerated turns: a
response accepted on the first attempt has nothing to improve on, and
treating S == S' as failure would mark every first-pass success difficult.
A dialogue is difficult as soon as any scored turn is; easy otherwise.

Each iteration, easy dialogues form the training set, difficult users are
carried into the next round, the exported set is handed to the trainer hook,
and the resulting model endpoint generates the next iteration's corpus.
"""

from __future__ import annotations

import dataclasses
import io
import logging
import shlex
import subprocess
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Sequence

from .errors import EmptyTrainingSet
from .evaluation import evaluate_chatbot
from .gateway import EndpointRef, Gateway, derive_endpoint
from .generation import generate_corpus, write_scores
from .manifest import (
    STATUS_COMPLETED,
    STATUS_CONVERGED,
    STATUS_HALTED,
    STATUS_RUNNING,
    IterationRecord,
    RunManifest,
    load_manifest,
    save_manifest,
)
from .models import (
    DIFFICULT,
    EASY,
    UNCLASSIFIED,
    CorpusIteration,
    Dialogue,
    GenerationConfig,
    ScoreTriple,
    UserBackground,
    dump_json,
    read_corpus,
    write_corpus,
    write_jsonl,
)
from .prompts import render_chatbot_system

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DifficultyInput:
    """Per-turn difficulty evidence: final scores, first-attempt scores, regen flag."""

    final_scores: ScoreTriple
    first_scores: ScoreTriple
    regenerated: bool


@dataclass(frozen=True)
class TrainingSet:
    iteration: int
    easy_dialogues: tuple[Dialogue, ...]
    difficult_user_ids: tuple[str, ...]
    easy_rate: float
    n_difficult: int = 0
    n_unclassified: int = 0


@dataclass(frozen=True)
class ExportSummary:
    records_written: int
    token_estimate: int
    path: str


def measure_turn_difficulty(inp: DifficultyInput, alpha: int, beta: int) -> bool:
    """True means difficult: a low final score, or a regeneration that barely helped."""
    if any(score < alpha for score in inp.final_scores.as_tuple()):
        return True
    if inp.regenerated:
        boosted = sum(
            1 for final, first in zip(inp.final_scores.as_tuple(), inp.first_scores.as_tuple()) if final - first > 0
        )
        if boosted < beta:
            return True
    return False


def turn_difficulty_evidence(dialogue: Dialogue, alpha: int, beta: int) -> list[dict[str, Any]]:
    """Per-turn difficulty breakdown for the difficulty.jsonl audit file."""
    evidence = []
    for t in dialogue.scored_turns():
        if t.first_scores is None or t.final_scores is None:
            continue
        inp = DifficultyInput(final_scores=t.final_scores, first_scores=t.first_scores, regenerated=t.regen_count > 0)
        boosted = sum(
            1 for final, first in zip(t.final_scores.as_tuple(), t.first_scores.as_tuple()) if final - first > 0
        )
        evidence.append(
            {
                "turn_index": t.turn_index,
                "first_scores": t.first_scores.to_dict(),
                "final_scores": t.final_scores.to_dict(),
                "regenerated": t.regen_count > 0,
                "below_alpha": any(s < alpha for s in t.final_scores.as_tuple()),
                "boosted_count": boosted,
                "difficult": measure_turn_difficulty(inp, alpha, beta),
            }
        )
    return evidence


def classify_dialogue(dialogue: Dialogue, alpha: int, beta: int) -> str:
    """easy | difficult | unclassified; difficult on the first difficult scored turn."""
    if dialogue.aborted:
        return UNCLASSIFIED
    scored = dialogue.scored_turns()
    if not scored or any(t.first_scores is None or t.final_scores is None for t in scored):
        return UNCLASSIFIED
    for t in scored:
        inp = DifficultyInput(final_scores=t.final_scores, first_scores=t.first_scores, regenerated=t.regen_count > 0)
        if measure_turn_difficulty(inp, alpha, beta):
            return DIFFICULT
    return EASY


def build_training_set(corpus: CorpusIteration, alpha: int, beta: int) -> TrainingSet:
    """Partition one iteration into the easy training set and carried-over users.

    Unclassified (aborted/unscored) dialogues join the difficult-user list so
    their users retry next round, but they are excluded from the easy-rate
    denominator.
    """
    if not corpus.dialogues:
        raise ValueError("corpus must be non-empty")
    easy: list[Dialogue] = []
    difficult_ids: list[str] = []
    n_difficult = 0
    n_unclassified = 0
    for d in corpus.dialogues:
        label = classify_dialogue(d, alpha, beta)
        labeled = dataclasses.replace(d, difficulty=label)
        if label == EASY:
            easy.append(labeled)
        elif label == DIFFICULT:
            n_difficult += 1
            difficult_ids.append(d.user_id)
        else:
            n_unclassified += 1
            difficult_ids.append(d.user_id)
    classified = len(easy) + n_difficult
    easy_rate = len(easy) / classified if classified else 0.0
    return TrainingSet(
        iteration=corpus.iteration,
        easy_dialogues=tuple(easy),
        difficult_user_ids=tuple(difficult_ids),
        easy_rate=easy_rate,
        n_difficult=n_difficult,
        n_unclassified=n_unclassified,
    )


def dialogue_to_chat_record(dialogue: Dialogue, system_prompt: str) -> dict[str, Any]:
    """Chat-SFT record: system prompt, then alternating final-utterance exchanges.

    Only bot_final text is exported; rejected attempts and regeneration
    feedback never reach the training file.
    """
    messages: list[dict[str, str]] = [{"role": "system", "content": system_prompt}]
    for turn in dialogue.turns:
        messages.append({"role": "assistant", "content": turn.bot_final})
        messages.append({"role": "user", "content": turn.user_reply})
    return {"messages": messages}


def export_dialogues(dialogues: Sequence[Dialogue], path: str | Path) -> ExportSummary:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    system_prompt = render_chatbot_system()
    token_estimate = 0
    with io.open(path, "w", encoding="utf-8", newline="\n") as fh:
        for d in dialogues:
            record = dialogue_to_chat_record(d, system_prompt)
            token_estimate += sum(len(m["content"]) for m in record["messages"]) // 4
            fh.write(dump_json(record) + "\n")
    return ExportSummary(records_written=len(dialogues), token_estimate=token_estimate, path=str(path))


def export_sft(training_set: TrainingSet, path: str | Path) -> ExportSummary:
    """Export the easy training set in chat-SFT layout, one record per dialogue."""
    if not training_set.easy_dialogues:
        raise EmptyTrainingSet(f"iteration {training_set.iteration} has no easy dialogues to export")
    return export_dialogues(training_set.easy_dialogues, path)


# ---------------------------------------------------------------------------
# Trainer hook
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainerHook:
    """External fine-tuning command, or a passthrough stub for offline runs.

    The command template gets {train_file}, {base_model}, and
    {output_model_id} substituted; on success the new endpoint reuses the
    current endpoint's connection with the output model id.  The passthrough
    stub swaps in the next endpoint name from `endpoint_sequence` (a stub
    script id or model name per iteration) without running anything; an
    exhausted or empty sequence keeps the current endpoint.
    """

    kind: str  # external_command | passthrough_stub
    command: str | None = None
    timeout: float = 3600.0
    endpoint_sequence: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "command": self.command,
            "timeout": self.timeout,
            "endpoint_sequence": list(self.endpoint_sequence),
        }


@dataclass(frozen=True)
class TrainerResult:
    ok: bool
    endpoint: EndpointRef | None
    detail: str


def invoke_trainer(
    hook: TrainerHook,
    gateway: Gateway,
    current: EndpointRef,
    train_file: str | Path,
    iteration: int,
) -> TrainerResult:
    if hook.kind == "passthrough_stub":
        if iteration - 1 < len(hook.endpoint_sequence):
            name = hook.endpoint_sequence[iteration - 1]
            if gateway.has_stub(name):
                endpoint = EndpointRef(id=f"stub:{name}", kind="stub", model_name=name)
            else:
                endpoint = derive_endpoint(current, name, new_id=f"{current.id}-it{iteration}")
            return TrainerResult(ok=True, endpoint=endpoint, detail=f"passthrough -> {name}")
        return TrainerResult(ok=True, endpoint=current, detail="passthrough (sequence exhausted)")

    if hook.kind != "external_command" or not hook.command:
        return TrainerResult(ok=False, endpoint=None, detail=f"unusable trainer hook: {hook.kind}")
    output_model_id = f"{current.model_name}-ft{iteration}"
    command = hook.command.format(
        train_file=shlex.quote(str(train_file)),
        base_model=shlex.quote(current.model_name),
        output_model_id=shlex.quote(output_model_id),
    )
    try:
        proc = subprocess.run(command, shell=True, capture_output=True, text=True, timeout=hook.timeout)
    except subprocess.TimeoutExpired:
        return TrainerResult(ok=False, endpoint=None, detail=f"trainer timed out after {hook.timeout}s")
    if proc.returncode != 0:
        tail = (proc.stderr or proc.stdout or "").strip()[-500:]
        return TrainerResult(ok=False, endpoint=None, detail=f"trainer exited {proc.returncode}: {tail}")
    endpoint = derive_endpoint(current, output_model_id, new_id=f"{current.id}-it{iteration}")
    return TrainerResult(ok=True, endpoint=endpoint, detail=f"trained -> {output_model_id}")


# ---------------------------------------------------------------------------
# Iteration loop
# ---------------------------------------------------------------------------


class RunMode(str, Enum):
    """Pipeline ablation variants, selectable per run.

    SFT: plain self-play collection, no critic at all, single fine-tune.
    SFT_CDC: critic-guided collection, endpoint fixed, single fine-tune.
    CDC_IFT: critic-guided collection, iterative fine-tuning on all
        classified dialogues.
    FULL: CDC_IFT plus difficulty-aware selection; trains on easy dialogues
        only.
    """

    SFT = "sft"
    SFT_CDC = "sft_cdc"
    CDC_IFT = "cdc_ift"
    FULL = "full"

    @property
    def uses_critic(self) -> bool:
        return self is not RunMode.SFT

    @property
    def advances_endpoint(self) -> bool:
        return self in (RunMode.CDC_IFT, RunMode.FULL)

    @property
    def easy_only(self) -> bool:
        return self is RunMode.FULL


def run_curriculum(
    gateway: Gateway,
    config: GenerationConfig,
    users_train: list[UserBackground],
    chatbot: EndpointRef,
    user_endpoint: EndpointRef,
    critic_endpoint: EndpointRef | None,
    trainer: TrainerHook,
    mode: RunMode,
    run_dir: str | Path,
    run_id: str = "run",
    users_validation: list[UserBackground] | None = None,
    dataset_manifest: str | None = None,
    max_iterations_this_session: int | None = None,
) -> RunManifest:
    """Start a fresh curriculum run; returns the manifest (saved in run_dir).

    Stops with status `completed` after max_iterations, `converged` when the
    validation mean improves by less than convergence_epsilon, `halted` on
    trainer failure, or `running` when max_iterations_this_session limits the
    session (resume later with resume_curriculum).
    """
    if users_validation:
        train_ids = {u.id for u in users_train}
        if train_ids & {u.id for u in users_validation}:
            raise ValueError("train and validation splits must be disjoint")
    if mode.uses_critic and critic_endpoint is None:
        raise ValueError(f"mode {mode.value} requires a critic endpoint")
    manifest = RunManifest(
        run_id=run_id,
        mode=mode.value,
        status=STATUS_RUNNING,
        config_snapshot=config.to_dict(),
        initial_endpoint=chatbot.to_dict(),
        dataset_manifest=dataset_manifest,
    )
    save_manifest(run_dir, manifest)
    return _advance(
        gateway,
        manifest,
        config,
        users_train,
        user_endpoint,
        critic_endpoint,
        trainer,
        Path(run_dir),
        users_validation or [],
        max_iterations_this_session,
    )


def resume_curriculum(
    gateway: Gateway,
    run_dir: str | Path,
    users_train: list[UserBackground],
    user_endpoint: EndpointRef,
    critic_endpoint: EndpointRef | None,
    trainer: TrainerHook,
    users_validation: list[UserBackground] | None = None,
    max_iterations_this_session: int | None = None,
) -> RunManifest:
    """Continue a halted or interrupted run from its manifest.

    Stub endpoints recorded in the manifest must be re-registered on the
    gateway before resuming.  Completed iterations are never re-run.
    """
    manifest = load_manifest(run_dir)
    if manifest.status in (STATUS_COMPLETED, STATUS_CONVERGED):
        return manifest
    config = GenerationConfig.from_dict(manifest.config_snapshot)
    mode = RunMode(manifest.mode)
    if mode.uses_critic and critic_endpoint is None:
        raise ValueError(f"mode {mode.value} requires a critic endpoint")
    manifest.status = STATUS_RUNNING
    manifest.halt_reason = None
    return _advance(
        gateway,
        manifest,
        config,
        users_train,
        user_endpoint,
        critic_endpoint,
        trainer,
        Path(run_dir),
        users_validation or [],
        max_iterations_this_session,
    )


def _difficult_ids_of(manifest: RunManifest, run_dir: Path, config: GenerationConfig) -> set[str]:
    """User ids carried over from the last completed iteration's difficulty file."""
    if not manifest.iterations:
        return set()
    record = manifest.iterations[-1]
    if not record.difficulty_path:
        return set()
    corpus = read_corpus(run_dir / record.corpus_path)
    ts = build_training_set(corpus, config.alpha, config.beta)
    return set(ts.difficult_user_ids)


def _advance(
    gateway: Gateway,
    manifest: RunManifest,
    config: GenerationConfig,
    users_train: list[UserBackground],
    user_endpoint: EndpointRef,
    critic_endpoint: EndpointRef | None,
    trainer: TrainerHook,
    run_dir: Path,
    users_validation: list[UserBackground],
    max_iterations_this_session: int | None,
) -> RunManifest:
    mode = RunMode(manifest.mode)
    iterations_this_session = 0
    previous_val_mean: float | None = None
    if manifest.iterations and manifest.iterations[-1].validation:
        previous_val_mean = _validation_mean(manifest.iterations[-1].validation)

    while manifest.completed_iterations() < config.max_iterations:
        if max_iterations_this_session is not None and iterations_this_session >= max_iterations_this_session:
            save_manifest(run_dir, manifest)
            return manifest
        k = manifest.completed_iterations() + 1
        chatbot = EndpointRef.from_dict(manifest.current_endpoint_dict())
        logger.info("iteration %d/%d with endpoint %s", k, config.max_iterations, chatbot.id)

        users = users_train
        if config.redialogue_difficult_only and k > 1:
            carried = _difficult_ids_of(manifest, run_dir, config)
            users = [u for u in users_train if u.id in carried]
            if not users:
                manifest.status = STATUS_CONVERGED
                manifest.halt_reason = None
                save_manifest(run_dir, manifest)
                return manifest

        critic = critic_endpoint if mode.uses_critic else None
        critic_calls_before = gateway.telemetry.calls(critic.id) if critic else 0
        corpus = generate_corpus(gateway, chatbot, users, user_endpoint, critic, config, iteration=k)
        critic_calls = (gateway.telemetry.calls(critic.id) - critic_calls_before) if critic else 0

        corpus_rel = f"iter_{k}/corpus.jsonl"
        scores_rel = f"iter_{k}/scores.jsonl"
        write_corpus(run_dir / corpus_rel, corpus)
        write_scores(run_dir / scores_rel, corpus)

        record = IterationRecord(
            iteration=k,
            corpus_path=corpus_rel,
            scores_path=scores_rel,
            chatbot_endpoint=chatbot.to_dict(),
            critic_calls=critic_calls,
        )

        train_dialogues: tuple[Dialogue, ...] | None = None
        if mode.uses_critic and mode.advances_endpoint:
            ts = build_training_set(corpus, config.alpha, config.beta)
            difficulty_rel = f"iter_{k}/difficulty.jsonl"
            _write_difficulty(run_dir / difficulty_rel, corpus, config)
            record.difficulty_path = difficulty_rel
            record.easy_rate = ts.easy_rate
            record.n_easy = len(ts.easy_dialogues)
            record.n_difficult = ts.n_difficult
            record.n_unclassified = ts.n_unclassified
            if mode.easy_only:
                train_dialogues = ts.easy_dialogues
            else:
                classified = tuple(
                    d for d in corpus.dialogues if classify_dialogue(d, config.alpha, config.beta) != UNCLASSIFIED
                )
                train_dialogues = classified

        if mode.advances_endpoint:
            if train_dialogues is None or not train_dialogues:
                manifest.iterations.append(record)
                manifest.status = STATUS_HALTED
                manifest.halt_reason = f"iteration {k}: no dialogues eligible for training"
                save_manifest(run_dir, manifest)
                return manifest
            train_rel = f"iter_{k}/train.jsonl"
            export_dialogues(train_dialogues, run_dir / train_rel)
            record.train_path = train_rel
            result = invoke_trainer(trainer, gateway, chatbot, run_dir / train_rel, k)
            record.trainer_detail = result.detail
            if not result.ok:
                manifest.iterations.append(record)
                manifest.status = STATUS_HALTED
                manifest.halt_reason = f"iteration {k}: {result.detail}"
                save_manifest(run_dir, manifest)
                return manifest
            record.trained_endpoint = result.endpoint.to_dict()

            if users_validation and critic_endpoint is not None:
                report = evaluate_chatbot(
                    gateway, result.endpoint, users_validation, user_endpoint, critic_endpoint, config
                )
                record.validation = report.to_dict()

        manifest.iterations.append(record)
        save_manifest(run_dir, manifest)
        iterations_this_session += 1

        if record.validation is not None:
            val_mean = _validation_mean(record.validation)
            if previous_val_mean is not None and (val_mean - previous_val_mean) < config.convergence_epsilon:
                manifest.status = STATUS_CONVERGED
                save_manifest(run_dir, manifest)
                return manifest
            previous_val_mean = val_mean

    # non-advancing modes accumulate the corpus and fine-tune once at the end
    if not mode.advances_endpoint and manifest.final_trained_endpoint is None:
        dialogues: list[Dialogue] = []
        for rec in manifest.iterations:
            corpus = read_corpus(run_dir / rec.corpus_path)
            dialogues.extend(d for d in corpus.dialogues if not d.aborted)
        final_rel = f"iter_{manifest.completed_iterations()}/train.jsonl"
        export_dialogues(tuple(dialogues), run_dir / final_rel)
        manifest.final_train_path = final_rel
        chatbot = EndpointRef.from_dict(manifest.initial_endpoint)
        result = invoke_trainer(trainer, gateway, chatbot, run_dir / final_rel, manifest.completed_iterations())
        if not result.ok:
            manifest.status = STATUS_HALTED
            manifest.halt_reason = f"final fine-tune: {result.detail}"
            save_manifest(run_dir, manifest)
            return manifest
        manifest.final_trained_endpoint = result.endpoint.to_dict()

    manifest.status = STATUS_COMPLETED
    save_manifest(run_dir, manifest)
    return manifest


def _validation_mean(report_dict: dict[str, Any]) -> float:
    return (report_dict["rel_mean"] + report_dict["int_mean"] + report_dict["val_mean"]) / 3.0


def _write_difficulty(path: Path, corpus: CorpusIteration, config: GenerationConfig) -> None:
    rows = []
    for d in corpus.dialogues:
        rows.append(
            {
                "user_id": d.user_id,
                "iteration": d.iteration,
                "difficulty": classify_dialogue(d, config.alpha, config.beta),
                "turns": turn_difficulty_evidence(d, config.alpha, config.beta),
            }
        )
    write_jsonl(path, rows, kind="difficulty")
