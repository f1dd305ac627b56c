import { describe, expect, it } from "vitest";

import type { SessionApi, StreamOutcome } from "../src/client";
import type {
  FramePacket,
  RankingResult,
  ResultsSummary,
  SessionInfo,
  TrialInfo,
} from "../src/protocol";
import { SelectionBuffer, SessionController } from "../src/session";
import { makePacket, makeTrial } from "./fixtures";

function makeSessionInfo(): SessionInfo {
  return {
    v: 1,
    session_id: "sess-0000",
    participant: 0,
    n_blocks: 4,
    trials_per_block: 12,
    block_order: [
      { label: "xai+lidar", xai_visible: true, lidar_visible: true },
      { label: "xai", xai_visible: true, lidar_visible: false },
      { label: "lidar", xai_visible: false, lidar_visible: true },
      { label: "none", xai_visible: false, lidar_visible: false },
    ],
    phase: "idle",
    cursor: null,
    completed: 0,
  };
}

/** Canned server: one trial, three frames, fixed tau. */
class FakeApi implements SessionApi {
  submissions: string[][] = [];
  completedAfterSubmit = 1;

  async createSession(): Promise<SessionInfo> {
    return makeSessionInfo();
  }

  async sessionInfo(): Promise<SessionInfo> {
    return makeSessionInfo();
  }

  async nextTrial(): Promise<TrialInfo> {
    return makeTrial();
  }

  async submitRanking(_sid: string, ranking: string[]): Promise<RankingResult> {
    this.submissions.push(ranking);
    return {
      v: 1,
      session_id: "sess-0000",
      block: 0,
      trial: 0,
      scenario_id: "scn-000",
      ranking,
      tau: 0.8,
    };
  }

  async results(): Promise<ResultsSummary> {
    return {
      v: 1,
      session_id: "sess-0000",
      participant: 0,
      completed: this.completedAfterSubmit,
      total: 48,
      per_condition: { "xai+lidar": { mean: 0.8, sd: 0, n: this.completedAfterSubmit } },
    };
  }

  async stream(_sid: string, onFrame?: (p: FramePacket) => void): Promise<StreamOutcome> {
    const frames = [
      makePacket({ timestep: 0, phase: "running" }),
      makePacket({ timestep: 1, phase: "running" }),
      makePacket({ timestep: 2, phase: "linger" }),
    ];
    for (const f of frames) onFrame?.(f);
    return { frames, final: { v: 1, type: "phase", phase: "awaiting-ranking" } };
  }
}

describe("selection buffer", () => {
  const objects = ["a", "b", "c", "d", "e"];

  it("keeps click order and completes at five", () => {
    const buf = new SelectionBuffer(objects);
    for (const id of ["c", "a", "e", "b"]) expect(buf.select(id)).toBe(true);
    expect(buf.complete).toBe(false);
    expect(buf.select("d")).toBe(true);
    expect(buf.complete).toBe(true);
    expect([...buf.order]).toEqual(["c", "a", "e", "b", "d"]);
  });

  it("ignores duplicate clicks", () => {
    const buf = new SelectionBuffer(objects);
    expect(buf.select("a")).toBe(true);
    expect(buf.select("a")).toBe(false);
    expect([...buf.order]).toEqual(["a"]);
  });

  it("ignores ids not in the trial", () => {
    const buf = new SelectionBuffer(objects);
    expect(buf.select("ghost")).toBe(false);
    expect(buf.order.length).toBe(0);
  });

  it("reports 1-based ranks and clears on revise", () => {
    const buf = new SelectionBuffer(objects);
    buf.select("b");
    buf.select("d");
    expect(buf.rankOf("b")).toBe(1);
    expect(buf.rankOf("d")).toBe(2);
    expect(buf.rankOf("a")).toBeNull();
    buf.clear();
    expect(buf.order.length).toBe(0);
    expect(buf.rankOf("b")).toBeNull();
  });
});

describe("session controller", () => {
  it("walks idle -> running -> linger -> awaiting-ranking -> submitted", async () => {
    const api = new FakeApi();
    const phases: string[] = [];
    const c = new SessionController(api, { onPhase: (p) => phases.push(p) });
    await c.start();
    await c.beginTrial();
    expect(c.phase).toBe("awaiting-ranking");
    for (const id of ["ob0", "ob3", "ob1", "ob4", "ob2"]) expect(c.select(id)).toBe(true);
    expect(c.canSubmit).toBe(true);
    const result = await c.submit();
    expect(result.tau).toBe(0.8);
    expect(c.phase).toBe("submitted");
    expect(phases).toEqual(["idle", "ready", "running", "linger", "awaiting-ranking", "submitted"]);
    expect(api.submissions).toEqual([["ob0", "ob3", "ob1", "ob4", "ob2"]]);
  });

  it("refuses selection outside the ranking phase", async () => {
    const api = new FakeApi();
    const c = new SessionController(api);
    await c.start();
    expect(c.select("ob0")).toBe(false);
    const pending = c.beginTrial();
    await pending;
    expect(c.select("ob0")).toBe(true);
  });

  it("gates submit until all five are picked", async () => {
    const c = new SessionController(new FakeApi());
    await c.start();
    await c.beginTrial();
    c.select("ob0");
    c.select("ob1");
    expect(c.canSubmit).toBe(false);
    await expect(c.submit()).rejects.toThrow(/incomplete/);
  });

  it("revise clears the buffer so a new order can be entered", async () => {
    const api = new FakeApi();
    const c = new SessionController(api);
    await c.start();
    await c.beginTrial();
    for (const id of ["ob0", "ob1", "ob2", "ob3", "ob4"]) c.select(id);
    c.revise();
    expect(c.canSubmit).toBe(false);
    for (const id of ["ob4", "ob3", "ob2", "ob1", "ob0"]) expect(c.select(id)).toBe(true);
    await c.submit();
    expect(api.submissions).toEqual([["ob4", "ob3", "ob2", "ob1", "ob0"]]);
  });

  it("will not start a second trial while one is unresolved", async () => {
    const c = new SessionController(new FakeApi());
    await c.start();
    await c.beginTrial();
    await expect(c.beginTrial()).rejects.toThrow(/phase/);
  });

  it("reaches done when the server reports the session complete", async () => {
    const api = new FakeApi();
    api.completedAfterSubmit = 48;
    const c = new SessionController(api);
    await c.start();
    await c.beginTrial();
    for (const id of ["ob0", "ob1", "ob2", "ob3", "ob4"]) c.select(id);
    await c.submit();
    expect(c.phase).toBe("done");
  });

  it("keeps the latest packet for rendering", async () => {
    const c = new SessionController(new FakeApi());
    await c.start();
    const { frames } = await c.beginTrial();
    expect(frames.length).toBe(3);
    expect(c.packet?.timestep).toBe(2);
    expect(c.packet?.phase).toBe("linger");
  });
});
