// Console wiring: session list on the left, timeline and composer in the
// middle, world / coverage / tools / metrics tabs on the right. No command
// leaves this page without a user gesture.

import { GatewayClient } from "./client.js";
import { CoverageArtifact, CoverageModel } from "./heatmap.js";
import { AppState, SessionView } from "./state.js";
import { renderMetrics, renderTimeline } from "./timeline.js";
import { drawWorld } from "./worldview.js";

const wsUrl = `${location.protocol === "https:" ? "wss" : "ws"}://${location.host}/ws`;
const client = new GatewayClient(wsUrl, { onChange: scheduleRender });

const $ = <T extends HTMLElement>(id: string): T => {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
};

const banner = $("banner");
const sessionList = $("session-list");
const timeline = $("timeline");
const composer = $<HTMLInputElement>("composer");
const sendButton = $<HTMLButtonElement>("send");
const cancelButton = $<HTMLButtonElement>("cancel");
const taskSelect = $<HTMLSelectElement>("task-select");
const agentSelect = $<HTMLSelectElement>("agent-select");
const modelInput = $<HTMLInputElement>("model-input");
const startButton = $<HTMLButtonElement>("start");
const toolsPanel = $("tools-panel");
const metricsPanel = $("metrics-panel");
const worldCanvas = $<HTMLCanvasElement>("world-canvas");
const coverageCanvas = $<HTMLCanvasElement>("coverage-canvas");
const coverageFile = $<HTMLInputElement>("coverage-file");
const toast = $("toast");

// Live coverage accumulation per session (from world_snapshot poses) plus an
// optional loaded artifact from the harness exporter.
const liveCoverage = new Map<string, { model: CoverageModel; poses: number }>();
let loadedCoverage: CoverageModel | null = null;
let loadedCoveragePath: { x: number; y: number; yaw: number }[] = [];

let renderQueued = false;
function scheduleRender(): void {
  if (renderQueued) return;
  renderQueued = true;
  requestAnimationFrame(() => {
    renderQueued = false;
    render(client.state);
  });
}

function selectedView(state: AppState): SessionView | null {
  return state.selected ? state.sessions[state.selected] ?? null : null;
}

function showToast(text: string): void {
  toast.textContent = text;
  toast.classList.add("visible");
  setTimeout(() => toast.classList.remove("visible"), 4000);
}

function accumulateCoverage(state: AppState): void {
  for (const sid of state.sessionOrder) {
    const view = state.sessions[sid];
    if (!view.snapshot) continue;
    let live = liveCoverage.get(sid);
    if (!live) {
      live = { model: CoverageModel.forSnapshot(view.snapshot), poses: 0 };
      liveCoverage.set(sid, live);
    }
    while (live.poses < view.path.length) {
      const pose = view.path[live.poses];
      live.model.addPose(
        pose.x,
        pose.y,
        pose.yaw,
        view.snapshot.fov.half_angle_deg,
        view.snapshot.fov.range_m,
      );
      live.poses += 1;
    }
  }
}

function render(state: AppState): void {
  banner.classList.toggle("hidden", state.connected);

  // Session list.
  sessionList.replaceChildren();
  for (const sid of state.sessionOrder) {
    const view = state.sessions[sid];
    const item = document.createElement("button");
    item.className = sid === state.selected ? "session-item selected" : "session-item";
    item.textContent = `${sid} · ${view.descriptor.task_id} · ${view.descriptor.agent_kind} · ${view.descriptor.status}`;
    item.onclick = () => {
      client.state.selected = sid;
      scheduleRender();
    };
    sessionList.appendChild(item);
  }

  const view = selectedView(state);
  renderTimeline(timeline, view);
  renderMetrics(metricsPanel, view);

  const inputLocked = view === null || view.ended;
  composer.disabled = inputLocked;
  sendButton.disabled = inputLocked;
  cancelButton.disabled = inputLocked;

  // Tools panel.
  toolsPanel.replaceChildren();
  for (const tool of state.tools) {
    const row = document.createElement("label");
    row.className = "tool-row";
    const box = document.createElement("input");
    box.type = "checkbox";
    box.checked = tool.enabled;
    box.onchange = () => {
      box.disabled = true; // pending until ack
      client
        .command("set_tool_enabled", { name: tool.name, flag: box.checked })
        .then((reply) => {
          if (reply.kind === "error") {
            box.checked = !box.checked;
            showToast(String(reply.payload.error));
          }
        })
        .catch((err) => showToast(String(err)))
        .finally(() => {
          box.disabled = false;
          scheduleRender();
        });
    };
    const text = document.createElement("span");
    text.textContent = ` ${tool.name}`;
    text.title = tool.description;
    row.append(box, text);
    toolsPanel.appendChild(row);
  }
  if (state.droppedSnapshots > 0) {
    const note = document.createElement("div");
    note.className = "drop-note";
    note.textContent = `${state.droppedSnapshots} world snapshots dropped (slow client)`;
    toolsPanel.appendChild(note);
  }

  // World view.
  accumulateCoverage(state);
  const worldCtx = worldCanvas.getContext("2d");
  if (worldCtx && view?.snapshot) {
    drawWorld(worldCtx, worldCanvas.width, worldCanvas.height, view.snapshot, {
      path: view.path,
    });
  } else if (worldCtx) {
    worldCtx.clearRect(0, 0, worldCanvas.width, worldCanvas.height);
  }

  // Coverage view: the loaded artifact wins; otherwise live accumulation.
  const coverageCtx = coverageCanvas.getContext("2d");
  if (coverageCtx) {
    coverageCtx.clearRect(0, 0, coverageCanvas.width, coverageCanvas.height);
    const live = state.selected ? liveCoverage.get(state.selected) : undefined;
    const model = loadedCoverage ?? live?.model ?? null;
    if (model && view?.snapshot) {
      drawWorld(coverageCtx, coverageCanvas.width, coverageCanvas.height, view.snapshot, {
        coverage: model,
        path: loadedCoverage ? loadedCoveragePath : view.path,
        showLabels: false,
      });
    }
  }
}

// -- user gestures ------------------------------------------------------------

startButton.onclick = () => {
  client
    .command("start_task", {
      task_id: taskSelect.value,
      agent_kind: agentSelect.value,
      model: modelInput.value,
    })
    .then((reply) => {
      if (reply.kind === "error") showToast(String(reply.payload.error));
      else client.state.selected = String(reply.payload.session_id);
      scheduleRender();
    })
    .catch((err) => showToast(String(err)));
};

function sendInterjection(): void {
  const view = selectedView(client.state);
  const text = composer.value.trim();
  if (!view || !text) return;
  composer.disabled = true;
  client
    .command("interject", { session_id: view.descriptor.session_id, text })
    .then((reply) => {
      if (reply.kind === "error") showToast(String(reply.payload.error));
      else composer.value = "";
    })
    .catch((err) => showToast(String(err)))
    .finally(() => {
      composer.disabled = selectedView(client.state)?.ended ?? true;
      composer.focus();
      scheduleRender();
    });
}

sendButton.onclick = sendInterjection;
composer.addEventListener("keydown", (ev) => {
  if (ev.key === "Enter") sendInterjection();
});

cancelButton.onclick = () => {
  const view = selectedView(client.state);
  if (!view) return;
  client
    .command("cancel", { session_id: view.descriptor.session_id })
    .then((reply) => {
      if (reply.kind === "error") showToast(String(reply.payload.error));
    })
    .catch((err) => showToast(String(err)));
};

coverageFile.onchange = () => {
  const file = coverageFile.files?.[0];
  if (!file) {
    loadedCoverage = null;
    loadedCoveragePath = [];
    scheduleRender();
    return;
  }
  file.text().then((text) => {
    try {
      const doc = JSON.parse(text) as CoverageArtifact;
      loadedCoverage = CoverageModel.fromArtifact(doc);
      loadedCoveragePath = doc.path.map((p) => ({ x: p.x, y: p.y, yaw: p.yaw }));
      showToast(`loaded coverage grid ${loadedCoverage.nx}x${loadedCoverage.ny}`);
    } catch (err) {
      showToast(`bad coverage file: ${err}`);
    }
    scheduleRender();
  });
};

// Tab switching.
for (const button of Array.from(document.querySelectorAll<HTMLButtonElement>(".tab-button"))) {
  button.onclick = () => {
    for (const other of Array.from(document.querySelectorAll(".tab-button"))) {
      other.classList.toggle("active", other === button);
    }
    for (const panel of Array.from(document.querySelectorAll<HTMLElement>(".tab-panel"))) {
      panel.classList.toggle("hidden", panel.id !== button.dataset.panel);
    }
    scheduleRender();
  };
}

client.connect();
