/** Hand-built wire fixtures shared by the unit tests. */

import type { FramePacket, ScenePayload, TrialInfo } from "../src/protocol";
import { N_RAYS, N_SECTORS } from "../src/protocol";

export function makeScene(): ScenePayload {
  return {
    format: "navxai-scene/1",
    bounds: [-5, -5, 5, 5],
    obstacles: [
      { id: "ob0", shape: "circle", center: [1.5, 1.0], radius: 0.4 },
      { id: "ob1", shape: "rect", center: [-2.0, 0.5], half_extents: [0.5, 0.3] },
      { id: "ob2", shape: "circle", center: [0.0, -2.0], radius: 0.3 },
      { id: "ob3", shape: "rect", center: [3.0, -1.0], half_extents: [0.4, 0.4] },
      { id: "ob4", shape: "circle", center: [-3.0, -3.0], radius: 0.5 },
    ],
    goal: [4.0, 4.0],
    start: { position: [-4.0, -4.0], heading: Math.PI / 4 },
    observer: null,
    seed: 0,
  };
}

export function makeTrial(overrides: Partial<TrialInfo> = {}): TrialInfo {
  return {
    v: 1,
    session_id: "sess-0000",
    block: 0,
    trial: 0,
    condition: { label: "xai+lidar", xai_visible: true, lidar_visible: true },
    scenario_id: "scn-000",
    scene: makeScene(),
    objects: ["ob0", "ob1", "ob2", "ob3", "ob4"],
    n_running_frames: 30,
    n_linger_frames: 10,
    ...overrides,
  };
}

export function makePacket(overrides: Partial<FramePacket> = {}): FramePacket {
  const endpoints: [number, number][] = [];
  const hits: boolean[] = [];
  for (let i = 0; i < N_RAYS; i++) {
    const a = (2 * Math.PI * i) / N_RAYS;
    endpoints.push([-4 + 6 * Math.cos(a), -4 + 6 * Math.sin(a)]);
    hits.push(i % 7 === 0);
  }
  const g_star = Array.from({ length: N_SECTORS }, (_, i) => i / (N_SECTORS - 1));
  return {
    v: 1,
    type: "frame",
    timestep: 0,
    phase: "running",
    pose: { x: -4, y: -4, heading: Math.PI / 4 },
    action: { v: 0.8, omega: 0.1 },
    ray_endpoints: endpoints,
    ray_hits: hits,
    g_star,
    object_scores: { ob0: 1.0, ob1: 0.25, ob2: 0.0, ob3: 0.6, ob4: 0.1 },
    outline_widths: { ob0: 6.0, ob1: 1.875, ob2: 0.5, ob3: 3.8, ob4: 1.05 },
    xai_visible: true,
    lidar_visible: true,
    ...overrides,
  };
}
