import { beforeEach, describe, expect, it } from "vitest";

import { ArenaClient } from "../src/api";
import { castBallot, openBallot, sendAndRender, startSession } from "../src/session";
import { renderView } from "../src/render";
import type { SessionView } from "../src/types";
import { MockArena } from "./mockArena";

let arena: MockArena;
let client: ArenaClient;

beforeEach(() => {
  arena = new MockArena();
  arena.install();
  client = new ArenaClient("");
});

describe("anonymity before the vote", () => {
  it("no rendered payload pre-vote contains a system identity string", async () => {
    const identityMarkers = [arena.system1, arena.system2, "system_1", "system_2"];
    const rendered: string[] = [];
    const snapshot = (view: SessionView) => rendered.push(renderView(view));

    const view = await startSession(client);
    snapshot(view);
    await sendAndRender(client, view, "tell me something", snapshot);
    await sendAndRender(client, view, "and something else", snapshot);
    snapshot(view);
    openBallot(view);
    rendered.push(renderView(view, { overall: "A" }));

    expect(rendered.length).toBeGreaterThan(4);
    for (const html of rendered) {
      for (const marker of identityMarkers) {
        expect(html).not.toContain(marker);
      }
    }

    // the network payloads served so far carry labels only, too
    for (const payload of arena.served) {
      for (const marker of [arena.system1, arena.system2]) {
        expect(payload).not.toContain(marker);
      }
    }
  });

  it("identity strings appear only in the done phase", async () => {
    const view = await startSession(client);
    await sendAndRender(client, view, "hello");
    openBallot(view);
    await castBallot(client, view, { overall: "A", relevance: "A", interest: "A", value: "A" });
    const done = renderView(view);
    expect(done).toContain(arena.system1);
    expect(done).toContain(arena.system2);
  });
});
