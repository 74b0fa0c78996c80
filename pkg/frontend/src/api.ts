/**
 * Typed client for the rollout-gate HTTP contract.
 *
 * Endpoints:
 *   GET  /health
 *   GET  /rollouts
 *   GET  /rollouts/{id}
 *   GET  /rollouts/{id}/frames/{stream}/{view}/{t}.png
 *   POST /rollouts/{id}/decision  {"action": "approve" | "reject"}  (409 on repeat)
 */

export type RolloutState = "pending" | "approved" | "rejected" | "executed";
export type Stream = "rgb" | "heatmap" | "overlay";
export type DecisionAction = "approve" | "reject";

export interface RolloutSummary {
  id: string;
  state: RolloutState;
}

export interface ChunkPreview {
  positions: number[][];
  euler: number[][];
  euler_bins: number[][];
  gripper: number[];
}

export interface RolloutMeta extends RolloutSummary {
  trial: number;
  chunk_index: number;
  attempt: number;
  seed: number;
  frames: number;
  views: number;
  streams: Stream[];
  frame_url_template: string;
  chunk: ChunkPreview;
  executed_chunk: ChunkPreview | null;
  decided_by: string | null;
}

export type DecisionOutcome =
  | { kind: "accepted"; state: RolloutState }
  | { kind: "already_decided" }
  | { kind: "error"; message: string };

/** Frame URLs are a pure function of (id, stream, view, t); nothing else may
 * influence which image a tile shows. */
export function frameUrl(base: string, id: string, stream: Stream, view: number, t: number): string {
  return `${base}/rollouts/${encodeURIComponent(id)}/frames/${stream}/${view}/${t}.png`;
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class GateApi {
  constructor(
    readonly base: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  async health(): Promise<boolean> {
    try {
      const res = await this.fetchFn(`${this.base}/health`);
      if (!res.ok) return false;
      const body = (await res.json()) as { status?: string };
      return body.status === "ok";
    } catch {
      return false;
    }
  }

  async listRollouts(): Promise<RolloutSummary[]> {
    const res = await this.fetchFn(`${this.base}/rollouts`);
    if (!res.ok) throw new Error(`GET /rollouts failed: ${res.status}`);
    return (await res.json()) as RolloutSummary[];
  }

  async getRollout(id: string): Promise<RolloutMeta> {
    const res = await this.fetchFn(`${this.base}/rollouts/${encodeURIComponent(id)}`);
    if (!res.ok) throw new Error(`GET /rollouts/${id} failed: ${res.status}`);
    return (await res.json()) as RolloutMeta;
  }

  frameUrl(id: string, stream: Stream, view: number, t: number): string {
    return frameUrl(this.base, id, stream, view, t);
  }

  async decide(id: string, action: DecisionAction): Promise<DecisionOutcome> {
    let res: Response;
    try {
      res = await this.fetchFn(`${this.base}/rollouts/${encodeURIComponent(id)}/decision`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ action }),
      });
    } catch (err) {
      return { kind: "error", message: String(err) };
    }
    if (res.status === 409) return { kind: "already_decided" };
    if (!res.ok) return { kind: "error", message: `decision failed: ${res.status}` };
    const body = (await res.json()) as { state: RolloutState };
    return { kind: "accepted", state: body.state };
  }
}
