import type { Ballot, SessionView, TranscriptEntry, VoteDimension } from "./types";
import { VOTE_DIMENSIONS } from "./types";
import { missingDimensions } from "./session";

export function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}

function entryHtml(entry: TranscriptEntry, bot: string): string {
  if (entry.error) {
    return (
      `<div class="msg error">Bot ${bot} is unavailable. ` +
      `<button class="retry" data-bot="${bot}">Retry</button></div>`
    );
  }
  const cls = entry.role === "user" ? "msg user" : entry.streaming ? "msg bot streaming" : "msg bot";
  const speaker = entry.role === "user" ? "You" : `Bot ${bot}`;
  return `<div class="${cls}"><span class="speaker">${speaker}</span> ${escapeHtml(entry.text)}</div>`;
}

export function renderTranscript(entries: TranscriptEntry[], bot: "A" | "B"): string {
  return entries.map((entry) => entryHtml(entry, bot)).join("\n");
}

/**
 * Whole-view rendering as an HTML string: a dual-pane transcript (one input,
 * two reply panes), the ballot when voting, and the reveal once done.
 * Before the done phase the output names the systems only as A and B.
 */
export function renderView(view: SessionView, ballot: Ballot = {}): string {
  const panes = `
<div class="panes">
  <section class="pane" id="pane-a"><h2>Bot A</h2>${renderTranscript(view.transcriptA, "A")}</section>
  <section class="pane" id="pane-b"><h2>Bot B</h2>${renderTranscript(view.transcriptB, "B")}</section>
</div>`;
  if (view.phase === "chatting") {
    const voteGate = view.exchanges >= 1
      ? '<button id="open-ballot">Finish and vote</button>'
      : '<button id="open-ballot" disabled title="chat with both bots first">Finish and vote</button>';
    return `${panes}
<form id="composer"><input id="message" autocomplete="off" placeholder="Say something to both bots" />
<button id="send">Send</button>${voteGate}</form>`;
  }
  if (view.phase === "voting") {
    return `${panes}\n${renderBallot(ballot)}`;
  }
  return `${panes}\n${renderReveal(view)}`;
}

export function renderBallot(ballot: Ballot): string {
  const missing = new Set(missingDimensions(ballot));
  const rows = VOTE_DIMENSIONS.map((dimension: VoteDimension) => {
    const highlight = missing.has(dimension) ? ' class="missing"' : "";
    const options = (["A", "B", "tie"] as const)
      .map((choice) => {
        const checked = ballot[dimension] === choice ? " checked" : "";
        return `<label><input type="radio" name="${dimension}" value="${choice}"${checked}/> ${choice}</label>`;
      })
      .join(" ");
    return `<fieldset${highlight}><legend>${dimension}</legend>${options}</fieldset>`;
  });
  const blocked = missing.size > 0 ? " disabled" : "";
  return `<form id="ballot">${rows.join("\n")}<button id="submit-vote"${blocked}>Submit vote</button></form>`;
}

export function renderReveal(view: SessionView): string {
  if (!view.revealedAssignment) {
    return '<p class="thanks">Thank you for participating.</p>';
  }
  const { A, B } = view.revealedAssignment;
  return (
    '<p class="thanks">Thank you! Your vote is recorded.</p>' +
    `<p class="reveal">Bot A was <strong>${escapeHtml(A)}</strong>; Bot B was <strong>${escapeHtml(B)}</strong>.</p>`
  );
}
