/** Browser entry point: wires the canvas, buttons and status line to the
 * session controller. Everything interesting lives in the other modules;
 * this file is DOM glue only.
 */

import { ApiClient } from "./client.js";
import { computeLayers, drawLayers, obstacleAt, screenToWorld } from "./render.js";
import { SessionController } from "./session.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function main(): void {
  const canvas = el<HTMLCanvasElement>("scene");
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("2d canvas unsupported");
  const view = { width: canvas.width, height: canvas.height };

  const beginBtn = el<HTMLButtonElement>("begin");
  const reviseBtn = el<HTMLButtonElement>("revise");
  const submitBtn = el<HTMLButtonElement>("submit");
  const status = el<HTMLElement>("status");
  const feedback = el<HTMLElement>("feedback");
  const meansBody = el<HTMLElement>("means");

  const base = `${location.protocol}//${location.host}`;
  const client = new ApiClient(base, {
    fetchImpl: (input, init) => fetch(input, init),
    socketFactory: (url) => {
      const ws = new WebSocket(url);
      const adapter = {
        onmessage: null as ((ev: { data: unknown }) => void) | null,
        onclose: null as ((ev: unknown) => void) | null,
        onerror: null as ((ev: unknown) => void) | null,
        close: () => ws.close(),
      };
      ws.onmessage = (ev) => adapter.onmessage?.({ data: ev.data });
      ws.onclose = (ev) => adapter.onclose?.(ev);
      ws.onerror = (ev) => adapter.onerror?.(ev);
      return adapter;
    },
  });

  const controller = new SessionController(client, {
    onFrame: () => redraw(),
    onPhase: () => sync(),
  });

  function redraw(): void {
    if (controller.trial && controller.packet) {
      const layers = computeLayers(
        controller.trial,
        controller.packet,
        controller.selection?.order ?? [],
      );
      drawLayers(ctx!, layers, view);
    }
  }

  function sync(): void {
    const t = controller.trial;
    const where = t ? `block ${t.block + 1}, trial ${t.trial + 1} (${t.condition.label})` : "";
    status.textContent = `${controller.phase}${where ? "  " + where : ""}`;
    beginBtn.disabled = !(controller.phase === "idle" || controller.phase === "submitted");
    reviseBtn.disabled = controller.phase !== "awaiting-ranking";
    submitBtn.disabled = !controller.canSubmit;
    redraw();
  }

  function showMeans(): void {
    const res = controller.results;
    if (!res) return;
    meansBody.innerHTML = "";
    for (const [label, stats] of Object.entries(res.per_condition)) {
      const row = document.createElement("tr");
      row.innerHTML = `<td>${label}</td><td>${stats.mean.toFixed(3)}</td><td>${stats.n}</td>`;
      meansBody.appendChild(row);
    }
  }

  beginBtn.addEventListener("click", () => {
    feedback.textContent = "";
    controller
      .beginTrial()
      .then(() => sync())
      .catch((err) => {
        feedback.textContent = String(err);
        sync();
      });
  });

  reviseBtn.addEventListener("click", () => {
    controller.revise();
    sync();
  });

  submitBtn.addEventListener("click", () => {
    controller
      .submit()
      .then((result) => {
        feedback.textContent = `tau = ${result.tau.toFixed(3)}`;
        showMeans();
        sync();
      })
      .catch((err) => {
        feedback.textContent = String(err);
        sync();
      });
  });

  canvas.addEventListener("click", (ev) => {
    const trial = controller.trial;
    if (!trial || controller.phase !== "awaiting-ranking") return;
    const rect = canvas.getBoundingClientRect();
    const [wx, wy] = screenToWorld(
      trial.scene.bounds,
      view,
      ev.clientX - rect.left,
      ev.clientY - rect.top,
    );
    const id = obstacleAt(trial.scene.obstacles, wx, wy);
    if (id !== null) {
      const accepted = controller.select(id);
      // brief cue when a duplicate click is ignored
      feedback.textContent = accepted ? "" : "already ranked";
      sync();
    }
  });

  controller
    .start()
    .then(() => sync())
    .catch((err) => {
      feedback.textContent = String(err);
    });
}

main();
