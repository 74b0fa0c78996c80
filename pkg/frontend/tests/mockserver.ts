/** In-memory mock of the gate server wire contract, for client tests. */

import { ChunkPreview, RolloutMeta, RolloutState } from "../src/api.js";

export interface MockRollout {
  meta: RolloutMeta;
}

const PNG_1PX = Uint8Array.from([
  0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48, 0x44, 0x52,
  0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x02, 0x00, 0x00, 0x00, 0x90, 0x77, 0x53,
  0xde, 0x00, 0x00, 0x00, 0x0c, 0x49, 0x44, 0x41, 0x54, 0x08, 0xd7, 0x63, 0xf8, 0xcf, 0xc0, 0x00,
  0x00, 0x00, 0x03, 0x00, 0x01, 0x87, 0xa1, 0x4e, 0xd4, 0x00, 0x00, 0x00, 0x00, 0x49, 0x45, 0x4e,
  0x44, 0xae, 0x42, 0x60, 0x82,
]);

function chunk(seed: number, length = 4): ChunkPreview {
  const positions = Array.from({ length }, (_, k) => [seed * 0.001 + k * 0.01, 0, 0]);
  return {
    positions,
    euler: positions.map(() => [0, 0, 0]),
    euler_bins: positions.map(() => [36, 36, 36]),
    gripper: positions.map((_, k) => k % 2),
  };
}

export class MockGateServer {
  rollouts = new Map<string, RolloutMeta>();
  order: string[] = [];
  decisionLog: Array<{ id: string; action: string }> = [];
  failNext = false;

  add(id: string, state: RolloutState = "pending", seed = 7): RolloutMeta {
    const meta: RolloutMeta = {
      id,
      state,
      trial: 0,
      chunk_index: this.order.length,
      attempt: 0,
      seed,
      frames: 5,
      views: 3,
      streams: ["rgb", "heatmap", "overlay"],
      frame_url_template: "/rollouts/{id}/frames/{stream}/{view}/{t}.png",
      chunk: chunk(seed),
      executed_chunk: null,
      decided_by: null,
    };
    this.rollouts.set(id, meta);
    this.order.push(id);
    return meta;
  }

  /** fetch-compatible handler implementing the wire contract. */
  fetch = async (input: string, init?: RequestInit): Promise<Response> => {
    if (this.failNext) {
      this.failNext = false;
      throw new Error("connection refused");
    }
    const url = new URL(input, "http://mock");
    const path = url.pathname;
    if (path === "/health") return Response.json({ status: "ok" });
    if (path === "/rollouts") {
      return Response.json(this.order.map((id) => ({ id, state: this.rollouts.get(id)!.state })));
    }
    const frameMatch = path.match(/^\/rollouts\/([^/]+)\/frames\/([^/]+)\/(\d+)\/(\d+)\.png$/);
    if (frameMatch) {
      const meta = this.rollouts.get(decodeURIComponent(frameMatch[1]!));
      if (!meta) return Response.json({ error: "unknown rollout" }, { status: 404 });
      if (!["rgb", "heatmap", "overlay"].includes(frameMatch[2]!)) {
        return Response.json({ error: "unknown stream" }, { status: 400 });
      }
      return new Response(PNG_1PX, { headers: { "Content-Type": "image/png" } });
    }
    const decisionMatch = path.match(/^\/rollouts\/([^/]+)\/decision$/);
    if (decisionMatch && init?.method === "POST") {
      const meta = this.rollouts.get(decodeURIComponent(decisionMatch[1]!));
      if (!meta) return Response.json({ error: "unknown rollout" }, { status: 404 });
      const body = JSON.parse(String(init.body)) as { action?: string };
      if (body.action !== "approve" && body.action !== "reject") {
        return Response.json({ error: "invalid action" }, { status: 400 });
      }
      if (meta.state !== "pending") {
        return Response.json({ error: "already decided", state: meta.state }, { status: 409 });
      }
      meta.state = body.action === "approve" ? "approved" : "rejected";
      meta.decided_by = "http";
      this.decisionLog.push({ id: meta.id, action: body.action });
      return Response.json({ id: meta.id, state: meta.state });
    }
    const metaMatch = path.match(/^\/rollouts\/([^/]+)$/);
    if (metaMatch) {
      const meta = this.rollouts.get(decodeURIComponent(metaMatch[1]!));
      if (!meta) return Response.json({ error: "unknown rollout" }, { status: 404 });
      return Response.json(meta);
    }
    return Response.json({ error: "not found" }, { status: 404 });
  };

  /** Server-side lifecycle helpers used by tests. */
  markExecuted(id: string): void {
    const meta = this.rollouts.get(id)!;
    meta.state = "executed";
    meta.executed_chunk = meta.chunk;
  }

  resample(afterId: string): RolloutMeta {
    const prev = this.rollouts.get(afterId)!;
    return this.add(`${afterId}-retry`, "pending", prev.seed + 1);
  }
}
