// @vitest-environment jsdom
import { beforeEach, describe, expect, it } from "vitest";

import { GateApi } from "../src/api.js";
import { InspectorApp } from "../src/app.js";
import { MockGateServer } from "./mockserver.js";

function mount(mock: MockGateServer): InspectorApp {
  document.body.innerHTML = '<div id="app"></div>';
  const api = new GateApi("", mock.fetch);
  return new InspectorApp(document.getElementById("app") as HTMLElement, api, {
    pollMs: 100000, // poll manually in tests
    playMs: 100000,
  });
}

describe("InspectorApp", () => {
  let mock: MockGateServer;
  let app: InspectorApp;

  beforeEach(() => {
    mock = new MockGateServer();
    app = mount(mock);
  });

  it("shows an empty queue, then a pending card with thumbnail", async () => {
    await app.poller.runOnce();
    expect(document.querySelector("#queue .empty")?.textContent).toContain("no rollouts");
    mock.add("t000c000a00");
    await app.poller.runOnce();
    const card = document.querySelector('[data-rollout="t000c000a00"]');
    expect(card).not.toBeNull();
    const thumb = card?.querySelector("img.thumb") as HTMLImageElement;
    expect(thumb.src).toContain("/rollouts/t000c000a00/frames/rgb/0/0.png");
    expect(card?.querySelector(".chip")?.textContent).toBe("pending");
  });

  it("shows an error banner when the server is unreachable and recovers", async () => {
    mock.failNext = true;
    await app.poller.runOnce();
    const banner = document.getElementById("banner") as HTMLElement;
    expect(banner.hidden).toBe(false);
    expect(banner.textContent).toContain("unreachable");
    await app.poller.runOnce(); // next poll succeeds
    expect(banner.hidden).toBe(true);
  });

  it("scrubbing synchronizes all six tiles on one frame", async () => {
    mock.add("r1");
    await app.poller.runOnce();
    app.select("r1");
    const scrub = document.getElementById("scrub") as HTMLInputElement;
    expect(scrub.max).toBe("4"); // 5-frame rollout scrubs 0..4
    scrub.value = "3";
    scrub.dispatchEvent(new Event("input"));
    const tiles = Array.from(document.querySelectorAll("#grid img")) as HTMLImageElement[];
    expect(tiles.length).toBe(6); // 3 views x (primary + heatmap)
    for (const tile of tiles) {
      expect(tile.src).toMatch(/\/3\.png$/);
      expect(tile.src).toContain("/rollouts/r1/frames/");
    }
  });

  it("clicking a primary tile cycles its stream only", async () => {
    mock.add("r1");
    await app.poller.runOnce();
    app.select("r1");
    const primaries = Array.from(
      document.querySelectorAll('#grid img[data-kind="primary"]'),
    ) as HTMLImageElement[];
    primaries[1]!.dispatchEvent(new Event("click"));
    expect(primaries[1]!.src).toContain("/frames/overlay/1/");
    expect(primaries[0]!.src).toContain("/frames/rgb/0/");
    const heats = Array.from(document.querySelectorAll('#grid img[data-kind="heat"]')) as HTMLImageElement[];
    for (const heat of heats) expect(heat.src).toContain("/frames/heatmap/");
  });

  it("approve posts once, disables the gate, and reflects execution", async () => {
    mock.add("r1");
    await app.poller.runOnce();
    app.select("r1");
    const approve = document.querySelector('button[data-action="approve"]') as HTMLButtonElement;
    expect(approve.disabled).toBe(false);
    approve.click();
    approve.click(); // double-click guarded locally
    await new Promise((r) => setTimeout(r, 20));
    expect(mock.decisionLog).toEqual([{ id: "r1", action: "approve" }]);
    mock.markExecuted("r1");
    await app.poller.runOnce();
    expect(app.store.stateOf("r1")).toBe("executed");
    const chip = document.querySelector("#player .chip") as HTMLElement;
    expect(chip.textContent).toBe("executed");
    const buttons = Array.from(document.querySelectorAll(".gate button")) as HTMLButtonElement[];
    for (const b of buttons) expect(b.disabled).toBe(true);
  });

  it("reject produces a differently-seeded replacement card", async () => {
    mock.add("r1", "pending", 7);
    await app.poller.runOnce();
    app.select("r1");
    const reject = document.querySelector('button[data-action="reject"]') as HTMLButtonElement;
    reject.click();
    await new Promise((r) => setTimeout(r, 20));
    expect(mock.decisionLog).toEqual([{ id: "r1", action: "reject" }]);
    const replacement = mock.resample("r1");
    await app.poller.runOnce();
    const cards = Array.from(document.querySelectorAll(".card [data-rollout], .card")).length;
    expect(cards).toBeGreaterThanOrEqual(2);
    expect(app.store.metas.get(replacement.id)?.seed).not.toBe(7);
    const second = await app.store.decide("r1", "approve");
    expect(second.kind).toBe("blocked"); // one decision per id, ever
  });
});
