/**
 * Fixed-interval polling with a sticky error banner: a failed tick surfaces
 * the error and polling simply continues until the server answers again.
 */
export class Poller {
  lastError: string | null = null;
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private readonly tick: () => Promise<void>,
    readonly intervalMs: number,
    private readonly onChange: () => void = () => {},
  ) {}

  start(): void {
    if (this.timer !== null) return;
    void this.runOnce();
    this.timer = setInterval(() => void this.runOnce(), this.intervalMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  async runOnce(): Promise<void> {
    try {
      await this.tick();
      this.lastError = null;
    } catch (err) {
      this.lastError = String(err);
    }
    this.onChange();
  }
}
