export type BotLabel = "A" | "B";

export type Phase = "chatting" | "voting" | "done";

export type Choice = "A" | "B" | "tie";

export const VOTE_DIMENSIONS = ["overall", "relevance", "interest", "value"] as const;

export type VoteDimension = (typeof VOTE_DIMENSIONS)[number];

export type Ballot = Partial<Record<VoteDimension, Choice>>;

export interface TranscriptEntry {
  role: "user" | "bot";
  text: string;
  /** Set when this slot failed and can be retried for one bot only. */
  error?: string;
  /** Still receiving incremental chunks. */
  streaming?: boolean;
}

/**
 * Client-side session state. The hidden assignment exists only after a
 * successful vote; transcripts never carry anything but the labels A/B
 * before the session is done.
 */
export interface SessionView {
  sessionId: string;
  transcriptA: TranscriptEntry[];
  transcriptB: TranscriptEntry[];
  phase: Phase;
  exchanges: number;
  revealedAssignment: Record<BotLabel, string> | null;
}

export interface MessageResponse {
  reply_a: string | null;
  reply_b: string | null;
  error_a: string | null;
  error_b: string | null;
}

export interface VoteResponse {
  recorded: boolean;
  assignment: Record<BotLabel, string>;
}

export interface StreamChunk {
  bot?: BotLabel;
  delta?: string;
  error?: string;
  done?: boolean;
}
