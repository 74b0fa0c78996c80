import { Stream } from "./api.js";

const STREAM_CYCLE: Stream[] = ["rgb", "overlay", "heatmap"];

/**
 * Frame-synchronized playback over one rollout's views.
 *
 * A single cursor drives every tile; per-view stream toggles only change
 * which stream a tile shows, never which frame.
 */
export class Player {
  frame = 0;
  playing = false;
  private streams: Stream[];

  constructor(
    readonly frames: number,
    readonly views: number,
  ) {
    this.streams = Array.from({ length: views }, () => "rgb" as Stream);
  }

  seek(t: number): void {
    this.frame = Math.min(Math.max(0, Math.floor(t)), this.frames - 1);
  }

  step(): void {
    this.frame = (this.frame + 1) % this.frames;
  }

  frameFor(_view: number): number {
    return this.frame; // synchronization invariant: one cursor for all views
  }

  streamFor(view: number): Stream {
    return this.streams[view] ?? "rgb";
  }

  cycleStream(view: number): Stream {
    const current = this.streamFor(view);
    const next = STREAM_CYCLE[(STREAM_CYCLE.indexOf(current) + 1) % STREAM_CYCLE.length] as Stream;
    this.streams[view] = next;
    return next;
  }
}
