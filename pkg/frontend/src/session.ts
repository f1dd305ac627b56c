/** View-side state machine for one participant session.
 *
 * The controller owns what the UI is allowed to do at any moment: begin a
 * trial, watch it stream, build a ranking by clicking objects, revise, and
 * submit. It never computes scores or tau; everything judged comes back
 * from the server. The selection buffer is always a prefix of a
 * permutation of the trial's objects and duplicate picks are ignored.
 */

import type { SessionApi } from "./client.js";
import type {
  FramePacket,
  RankingResult,
  ResultsSummary,
  SessionInfo,
  TrialInfo,
} from "./protocol.js";

export type UiPhase =
  | "idle"
  | "ready"
  | "running"
  | "linger"
  | "awaiting-ranking"
  | "submitted"
  | "done";

export class SelectionBuffer {
  private picked: string[] = [];

  constructor(readonly objects: readonly string[]) {}

  get order(): readonly string[] {
    return this.picked;
  }

  get complete(): boolean {
    return this.picked.length === this.objects.length;
  }

  /** Append the next rank; returns false (pick ignored) for duplicates,
   * unknown ids, or when the ranking is already complete. */
  select(id: string): boolean {
    if (!this.objects.includes(id)) return false;
    if (this.picked.includes(id)) return false;
    if (this.complete) return false;
    this.picked.push(id);
    return true;
  }

  /** 1-based rank of an object, or null when not yet picked. */
  rankOf(id: string): number | null {
    const i = this.picked.indexOf(id);
    return i < 0 ? null : i + 1;
  }

  clear(): void {
    this.picked = [];
  }
}

export interface ControllerEvents {
  onFrame?: (packet: FramePacket) => void;
  onPhase?: (phase: UiPhase) => void;
}

export class SessionController {
  phase: UiPhase = "idle";
  session: SessionInfo | null = null;
  trial: TrialInfo | null = null;
  packet: FramePacket | null = null;
  selection: SelectionBuffer | null = null;
  lastResult: RankingResult | null = null;
  results: ResultsSummary | null = null;

  constructor(
    private readonly client: SessionApi,
    private readonly events: ControllerEvents = {},
  ) {}

  private setPhase(phase: UiPhase): void {
    this.phase = phase;
    this.events.onPhase?.(phase);
  }

  get totalTrials(): number {
    const s = this.session;
    return s ? s.n_blocks * s.trials_per_block : 0;
  }

  async start(participant?: number): Promise<SessionInfo> {
    this.session = await this.client.createSession(participant);
    this.setPhase("idle");
    return this.session;
  }

  /** Advance to the next trial and play its stream to completion. */
  async beginTrial(): Promise<RankingPrompt> {
    if (!this.session) throw new Error("no session; call start() first");
    if (this.phase !== "idle" && this.phase !== "submitted") {
      throw new Error(`cannot begin a trial in phase ${this.phase}`);
    }
    this.trial = await this.client.nextTrial(this.session.session_id);
    this.selection = new SelectionBuffer(this.trial.objects);
    this.lastResult = null;
    this.setPhase("ready");
    const outcome = await this.client.stream(this.session.session_id, (packet) => {
      this.packet = packet;
      if (packet.phase !== this.phase) {
        this.setPhase(packet.phase === "linger" ? "linger" : "running");
      }
      this.events.onFrame?.(packet);
    });
    this.setPhase("awaiting-ranking");
    return { trial: this.trial, frames: outcome.frames };
  }

  /** Click an object; only meaningful while a ranking is being collected. */
  select(id: string): boolean {
    if (this.phase !== "awaiting-ranking" || !this.selection) return false;
    return this.selection.select(id);
  }

  revise(): void {
    if (this.phase === "awaiting-ranking") this.selection?.clear();
  }

  get canSubmit(): boolean {
    return this.phase === "awaiting-ranking" && this.selection?.complete === true;
  }

  async submit(): Promise<RankingResult> {
    if (!this.session || !this.selection) throw new Error("nothing to submit");
    if (!this.canSubmit) throw new Error("ranking incomplete");
    const result = await this.client.submitRanking(this.session.session_id, [
      ...this.selection.order,
    ]);
    this.lastResult = result;
    this.results = await this.client.results(this.session.session_id);
    this.setPhase(this.results.completed >= this.results.total ? "done" : "submitted");
    return result;
  }
}

export interface RankingPrompt {
  trial: TrialInfo;
  frames: FramePacket[];
}
