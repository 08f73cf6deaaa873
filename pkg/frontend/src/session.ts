import { ArenaClient } from "./api";
import {
  type Ballot,
  type BotLabel,
  type Choice,
  type SessionView,
  type StreamChunk,
  VOTE_DIMENSIONS,
  type VoteDimension,
} from "./types";

export class BallotIncomplete extends Error {
  constructor(public readonly missing: VoteDimension[]) {
    super(`choose a winner for: ${missing.join(", ")}`);
  }
}

export function newSessionView(sessionId: string): SessionView {
  return {
    sessionId,
    transcriptA: [],
    transcriptB: [],
    phase: "chatting",
    exchanges: 0,
    revealedAssignment: null,
  };
}

export async function startSession(client: ArenaClient): Promise<SessionView> {
  return newSessionView(await client.createSession());
}

function transcriptOf(view: SessionView, bot: BotLabel) {
  return bot === "A" ? view.transcriptA : view.transcriptB;
}

/**
 * Send one message to both bots and grow both transcripts, rendering
 * incrementally as reply chunks arrive. A failed bot gets an error entry
 * with a retry affordance instead of losing the transcript.
 */
export async function sendAndRender(
  client: ArenaClient,
  view: SessionView,
  text: string,
  onUpdate: (view: SessionView) => void = () => {},
): Promise<SessionView> {
  if (view.phase !== "chatting") {
    throw new Error(`cannot send in phase ${view.phase}`);
  }
  for (const bot of ["A", "B"] as const) {
    transcriptOf(view, bot).push({ role: "user", text });
    transcriptOf(view, bot).push({ role: "bot", text: "", streaming: true });
  }
  onUpdate(view);

  const replySlot = (bot: BotLabel) => {
    const transcript = transcriptOf(view, bot);
    return transcript[transcript.length - 1]!;
  };
  let anyReply = false;
  await client.sendMessageStreaming(view.sessionId, text, (chunk: StreamChunk) => {
    if (chunk.bot) {
      const slot = replySlot(chunk.bot);
      if (chunk.error) {
        slot.error = chunk.error;
        slot.streaming = false;
      } else if (chunk.delta) {
        slot.text += chunk.delta;
        anyReply = true;
      }
      onUpdate(view);
    }
    if (chunk.done) {
      for (const bot of ["A", "B"] as const) {
        replySlot(bot).streaming = false;
      }
      onUpdate(view);
    }
  });
  if (anyReply) {
    view.exchanges += 1;
  }
  onUpdate(view);
  return view;
}

/** Re-send the last user message to one failed bot only. */
export async function retryBot(
  client: ArenaClient,
  view: SessionView,
  bot: BotLabel,
  onUpdate: (view: SessionView) => void = () => {},
): Promise<SessionView> {
  if (view.phase !== "chatting") {
    throw new Error(`cannot retry in phase ${view.phase}`);
  }
  const transcript = transcriptOf(view, bot);
  const failed = transcript[transcript.length - 1];
  const userMessage = transcript[transcript.length - 2];
  if (!failed?.error || userMessage?.role !== "user") {
    return view;
  }
  failed.error = undefined;
  failed.streaming = true;
  onUpdate(view);
  const response = await client.sendMessage(view.sessionId, userMessage.text, [bot]);
  const reply = bot === "A" ? response.reply_a : response.reply_b;
  const error = bot === "A" ? response.error_a : response.error_b;
  if (reply !== null) {
    failed.text = reply;
    failed.streaming = false;
  } else {
    failed.error = error ?? "bot_unavailable";
    failed.streaming = false;
  }
  onUpdate(view);
  return view;
}

/** The ballot is reachable only after at least one successful exchange. */
export function canOpenBallot(view: SessionView): boolean {
  return view.phase === "chatting" && view.exchanges >= 1;
}

export function openBallot(view: SessionView): SessionView {
  if (!canOpenBallot(view)) {
    throw new Error("ballot requires at least one exchange");
  }
  view.phase = "voting";
  return view;
}

export function missingDimensions(ballot: Ballot): VoteDimension[] {
  return VOTE_DIMENSIONS.filter((dimension) => ballot[dimension] === undefined);
}

/**
 * Submit the ballot; transitions to done and reveals the assignment.
 * Incomplete ballots are rejected client-side with the missing dimensions.
 * A second call on a done session is a no-op (idempotent done state).
 */
export async function castBallot(
  client: ArenaClient,
  view: SessionView,
  ballot: Ballot,
): Promise<SessionView> {
  if (view.phase === "done") {
    return view;
  }
  if (view.phase !== "voting") {
    throw new Error("open the ballot before voting");
  }
  const missing = missingDimensions(ballot);
  if (missing.length > 0) {
    throw new BallotIncomplete(missing);
  }
  const response = await client.submitVote(view.sessionId, ballot as Record<VoteDimension, Choice>);
  view.phase = "done";
  view.revealedAssignment = response.assignment;
  return view;
}
