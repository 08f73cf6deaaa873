import { ArenaClient } from "./api";
import { renderView } from "./render";
import { canOpenBallot, castBallot, openBallot, retryBot, sendAndRender, startSession, BallotIncomplete } from "./session";
import type { Ballot, BotLabel, Choice, SessionView, VoteDimension } from "./types";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app container");

const client = new ArenaClient("");
let view: SessionView;
let ballot: Ballot = {};
let busy = false;

function draw(): void {
  root!.innerHTML = renderView(view, ballot);
  wire();
}

function wire(): void {
  const composer = document.getElementById("composer") as HTMLFormElement | null;
  composer?.addEventListener("submit", (event) => {
    event.preventDefault();
    const input = document.getElementById("message") as HTMLInputElement;
    const text = input.value.trim();
    if (!text || busy) return;
    input.value = "";
    busy = true;
    sendAndRender(client, view, text, draw)
      .catch((error) => console.error(error))
      .finally(() => {
        busy = false;
        draw();
      });
  });
  document.getElementById("open-ballot")?.addEventListener("click", (event) => {
    event.preventDefault();
    if (canOpenBallot(view)) {
      openBallot(view);
      draw();
    }
  });
  for (const button of root!.querySelectorAll("button.retry")) {
    button.addEventListener("click", (event) => {
      event.preventDefault();
      const bot = (event.currentTarget as HTMLElement).dataset.bot as BotLabel;
      retryBot(client, view, bot, draw).catch((error) => console.error(error));
    });
  }
  const ballotForm = document.getElementById("ballot") as HTMLFormElement | null;
  ballotForm?.addEventListener("change", (event) => {
    const input = event.target as HTMLInputElement;
    if (input.name && input.value) {
      ballot[input.name as VoteDimension] = input.value as Choice;
      draw();
    }
  });
  ballotForm?.addEventListener("submit", (event) => {
    event.preventDefault();
    castBallot(client, view, ballot)
      .then(draw)
      .catch((error) => {
        if (error instanceof BallotIncomplete) {
          draw(); // re-render highlights the missing dimensions
        } else {
          console.error(error);
        }
      });
  });
}

startSession(client).then((created) => {
  view = created;
  ballot = {};
  draw();
});
