import { DecisionAction, DecisionOutcome, GateApi, RolloutMeta, RolloutSummary } from "./api.js";

/**
 * Client-side rollout state.
 *
 * The decision lock guarantees the UI never issues more than one decision
 * request per rollout id: the lock is taken before the request leaves and is
 * only released again on a transport error (where no decision can have been
 * recorded server-side).
 */
export class InspectorStore {
  summaries: RolloutSummary[] = [];
  metas = new Map<string, RolloutMeta>();
  firstSeen = new Map<string, number>();
  notice: string | null = null;
  private locks = new Set<string>();

  constructor(
    private readonly api: GateApi,
    private readonly now: () => number = () => Date.now(),
  ) {}

  async refresh(): Promise<void> {
    this.summaries = await this.api.listRollouts();
    for (const item of this.summaries) {
      if (!this.firstSeen.has(item.id)) this.firstSeen.set(item.id, this.now());
      const known = this.metas.get(item.id);
      if (known === undefined || known.state !== item.state) {
        this.metas.set(item.id, await this.api.getRollout(item.id));
      }
    }
  }

  pending(): RolloutSummary[] {
    return this.summaries.filter((r) => r.state === "pending");
  }

  ageSeconds(id: string): number {
    const seen = this.firstSeen.get(id);
    return seen === undefined ? 0 : Math.max(0, Math.round((this.now() - seen) / 1000));
  }

  stateOf(id: string): string | undefined {
    return this.summaries.find((r) => r.id === id)?.state;
  }

  canDecide(id: string): boolean {
    return this.stateOf(id) === "pending" && !this.locks.has(id);
  }

  isLocked(id: string): boolean {
    return this.locks.has(id);
  }

  async decide(id: string, action: DecisionAction): Promise<DecisionOutcome | { kind: "blocked" }> {
    if (!this.canDecide(id)) return { kind: "blocked" };
    this.locks.add(id);
    const outcome = await this.api.decide(id, action);
    if (outcome.kind === "error") {
      this.locks.delete(id); // nothing was recorded; allow a retry
      this.notice = outcome.message;
    } else if (outcome.kind === "already_decided") {
      this.notice = `rollout ${id}: already decided`;
    } else {
      this.notice = `rollout ${id}: ${action} sent`;
    }
    return outcome;
  }
}
