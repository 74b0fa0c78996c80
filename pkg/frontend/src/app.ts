import { DecisionAction, GateApi, RolloutMeta } from "./api.js";
import { Player } from "./player.js";
import { Poller } from "./poller.js";
import { InspectorStore } from "./store.js";

export interface AppOptions {
  pollMs?: number;
  playMs?: number;
  doc?: Document;
}

/** Mounts the inspector: pending queue, synchronized 3-view player, gate buttons. */
export class InspectorApp {
  readonly store: InspectorStore;
  readonly poller: Poller;
  player: Player | null = null;
  selected: string | null = null;
  private playTimer: ReturnType<typeof setInterval> | null = null;
  private readonly doc: Document;
  private readonly playMs: number;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: GateApi,
    options: AppOptions = {},
  ) {
    this.doc = options.doc ?? document;
    this.playMs = options.playMs ?? 180;
    this.store = new InspectorStore(api);
    this.poller = new Poller(() => this.store.refresh(), options.pollMs ?? 1000, () => this.render());
    this.renderShell();
  }

  start(): void {
    this.poller.start();
  }

  stop(): void {
    this.poller.stop();
    if (this.playTimer !== null) clearInterval(this.playTimer);
  }

  private el<K extends keyof HTMLElementTagNameMap>(tag: K, cls?: string, text?: string) {
    const node = this.doc.createElement(tag);
    if (cls) node.className = cls;
    if (text !== undefined) node.textContent = text;
    return node;
  }

  private byId(id: string): HTMLElement {
    const node = this.root.querySelector(`#${id}`);
    if (!node) throw new Error(`missing element ${id}`);
    return node as HTMLElement;
  }

  private renderShell(): void {
    this.root.innerHTML = "";
    const header = this.el("header");
    header.appendChild(this.el("h1", "", "rollout inspector"));
    const banner = this.el("div", "banner");
    banner.id = "banner";
    banner.hidden = true;
    header.appendChild(banner);
    const notice = this.el("div", "notice");
    notice.id = "notice";
    header.appendChild(notice);
    this.root.appendChild(header);
    const queue = this.el("section", "queue");
    queue.id = "queue";
    this.root.appendChild(queue);
    const playerBox = this.el("section", "player");
    playerBox.id = "player";
    this.root.appendChild(playerBox);
  }

  select(id: string): void {
    const meta = this.store.metas.get(id);
    if (!meta) return;
    this.selected = id;
    this.player = new Player(meta.frames, meta.views);
    if (this.playTimer !== null) clearInterval(this.playTimer);
    this.playTimer = setInterval(() => {
      if (this.player?.playing) {
        this.player.step();
        this.updateTiles();
      }
    }, this.playMs);
    this.render();
  }

  async decide(id: string, action: DecisionAction): Promise<void> {
    await this.store.decide(id, action);
    await this.poller.runOnce();
  }

  render(): void {
    const banner = this.byId("banner");
    banner.hidden = this.poller.lastError === null;
    banner.textContent = this.poller.lastError === null ? "" : `server unreachable: ${this.poller.lastError}`;
    this.byId("notice").textContent = this.store.notice ?? "";
    this.renderQueue();
    this.renderPlayer();
  }

  private renderQueue(): void {
    const queue = this.byId("queue");
    queue.innerHTML = "";
    queue.appendChild(this.el("h2", "", "rollouts"));
    if (this.store.summaries.length === 0) {
      queue.appendChild(this.el("p", "empty", "no rollouts yet"));
      return;
    }
    for (const item of this.store.summaries) {
      const card = this.el("div", `card state-${item.state}`);
      card.dataset.rollout = item.id;
      const thumb = this.el("img", "thumb") as HTMLImageElement;
      thumb.src = this.api.frameUrl(item.id, "rgb", 0, 0);
      thumb.alt = `${item.id} thumbnail`;
      card.appendChild(thumb);
      const label = this.el("div", "label");
      label.appendChild(this.el("span", "id", item.id));
      label.appendChild(this.el("span", `chip chip-${item.state}`, item.state));
      label.appendChild(this.el("span", "age", `${this.store.ageSeconds(item.id)}s`));
      card.appendChild(label);
      card.addEventListener("click", () => this.select(item.id));
      queue.appendChild(card);
    }
  }

  private renderPlayer(): void {
    const box = this.byId("player");
    box.innerHTML = "";
    const id = this.selected;
    const meta = id ? this.store.metas.get(id) : undefined;
    if (!id || !meta || !this.player) {
      box.appendChild(this.el("p", "empty", "select a rollout to inspect"));
      return;
    }
    const player = this.player;
    box.appendChild(this.el("h2", "", `${id} (trial ${meta.trial}, chunk ${meta.chunk_index}, seed ${meta.seed})`));
    box.appendChild(this.el("span", `chip chip-${meta.state}`, meta.state));

    const grid = this.el("div", "grid");
    grid.id = "grid";
    for (let view = 0; view < meta.views; view += 1) {
      const cell = this.el("div", "cell");
      const primary = this.el("img", "tile tile-primary") as HTMLImageElement;
      primary.dataset.view = String(view);
      primary.dataset.kind = "primary";
      primary.addEventListener("click", () => {
        player.cycleStream(view);
        this.updateTiles();
      });
      const heat = this.el("img", "tile tile-heat") as HTMLImageElement;
      heat.dataset.view = String(view);
      heat.dataset.kind = "heat";
      cell.appendChild(primary);
      cell.appendChild(heat);
      cell.appendChild(this.el("div", "caption", `view ${view}`));
      grid.appendChild(cell);
    }
    box.appendChild(grid);

    const controls = this.el("div", "controls");
    const play = this.el("button", "", player.playing ? "pause" : "play") as HTMLButtonElement;
    play.id = "play";
    play.addEventListener("click", () => {
      player.playing = !player.playing;
      play.textContent = player.playing ? "pause" : "play";
    });
    controls.appendChild(play);
    const scrub = this.el("input") as HTMLInputElement;
    scrub.type = "range";
    scrub.id = "scrub";
    scrub.min = "0";
    scrub.max = String(meta.frames - 1);
    scrub.value = String(player.frame);
    scrub.addEventListener("input", () => {
      player.playing = false;
      player.seek(Number(scrub.value));
      this.updateTiles();
    });
    controls.appendChild(scrub);
    const counter = this.el("span", "counter");
    counter.id = "frame-counter";
    controls.appendChild(counter);
    box.appendChild(controls);

    const gate = this.el("div", "gate");
    for (const action of ["approve", "reject"] as DecisionAction[]) {
      const btn = this.el("button", `gate-${action}`, action) as HTMLButtonElement;
      btn.dataset.action = action;
      btn.disabled = !this.store.canDecide(id);
      btn.addEventListener("click", () => void this.decide(id, action));
      gate.appendChild(btn);
    }
    box.appendChild(gate);
    this.updateTiles();
  }

  /** Refresh every tile from the pure (id, stream, view, frame) mapping. */
  updateTiles(): void {
    const id = this.selected;
    const player = this.player;
    if (!id || !player) return;
    const grid = this.root.querySelector("#grid");
    if (!grid) return;
    for (const img of Array.from(grid.querySelectorAll("img"))) {
      const tile = img as HTMLImageElement;
      const view = Number(tile.dataset.view);
      const stream = tile.dataset.kind === "heat" ? "heatmap" : player.streamFor(view);
      tile.src = this.api.frameUrl(id, stream, view, player.frameFor(view));
    }
    const scrub = this.root.querySelector("#scrub") as HTMLInputElement | null;
    if (scrub) scrub.value = String(player.frame);
    const counter = this.root.querySelector("#frame-counter");
    if (counter) counter.textContent = `frame ${player.frame + 1}/${player.frames}`;
  }
}

export function createApp(root: HTMLElement, api: GateApi, options: AppOptions = {}): InspectorApp {
  return new InspectorApp(root, api, options);
}
