import type { Ballot, BotLabel, MessageResponse, StreamChunk, VoteResponse } from "./types";

export class ApiError extends Error {
  constructor(
    public readonly code: string,
    message: string,
  ) {
    super(message);
  }
}

async function throwApiError(response: Response): Promise<never> {
  let code = `http_${response.status}`;
  let message = response.statusText;
  try {
    const body = await response.json();
    if (body?.detail?.code) {
      code = body.detail.code;
      message = body.detail.message ?? message;
    }
  } catch {
    // non-JSON error body; keep the status-derived code
  }
  throw new ApiError(code, message);
}

/** Thin typed client over the arena HTTP API; no other backend contact. */
export class ArenaClient {
  constructor(private readonly baseUrl: string = "") {}

  async createSession(): Promise<string> {
    const response = await fetch(`${this.baseUrl}/arena/sessions`, { method: "POST" });
    if (!response.ok) await throwApiError(response);
    const body = (await response.json()) as { session_id: string };
    return body.session_id;
  }

  async sendMessage(sessionId: string, text: string, bots?: BotLabel[]): Promise<MessageResponse> {
    const response = await fetch(`${this.baseUrl}/arena/sessions/${sessionId}/messages`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(bots ? { text, bots } : { text }),
    });
    if (!response.ok) await throwApiError(response);
    return (await response.json()) as MessageResponse;
  }

  /**
   * Incremental variant: parses the NDJSON stream and invokes onChunk per
   * parsed line. Falls back to nothing extra; the caller assembles state.
   */
  async sendMessageStreaming(
    sessionId: string,
    text: string,
    onChunk: (chunk: StreamChunk) => void,
    bots?: BotLabel[],
  ): Promise<void> {
    const response = await fetch(`${this.baseUrl}/arena/sessions/${sessionId}/messages/stream`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(bots ? { text, bots } : { text }),
    });
    if (!response.ok) await throwApiError(response);
    if (!response.body) throw new ApiError("no_stream", "response has no body");
    const reader = response.body.getReader();
    const decoder = new TextDecoder();
    let buffered = "";
    for (;;) {
      const { value, done } = await reader.read();
      if (done) break;
      buffered += decoder.decode(value, { stream: true });
      let newline = buffered.indexOf("\n");
      while (newline >= 0) {
        const line = buffered.slice(0, newline).trim();
        buffered = buffered.slice(newline + 1);
        if (line) onChunk(JSON.parse(line) as StreamChunk);
        newline = buffered.indexOf("\n");
      }
    }
    if (buffered.trim()) onChunk(JSON.parse(buffered) as StreamChunk);
  }

  async submitVote(sessionId: string, ballot: Required<Ballot>): Promise<VoteResponse> {
    const response = await fetch(`${this.baseUrl}/arena/sessions/${sessionId}/vote`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(ballot),
    });
    if (!response.ok) await throwApiError(response);
    return (await response.json()) as VoteResponse;
  }
}
