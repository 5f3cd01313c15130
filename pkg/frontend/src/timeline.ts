// Timeline DOM rendering: one card per history entry, in received order.

import { SessionView, TimelineCard } from "./state.js";

function el(tag: string, className: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function chipText(action: string, actionInput: Record<string, unknown>): string {
  const args = Object.entries(actionInput)
    .map(([key, value]) => `${key}:${JSON.stringify(value)}`)
    .join(", ");
  return `${action}(${args})`;
}

export function cardElement(card: TimelineCard): HTMLElement {
  switch (card.kind) {
    case "task": {
      const node = el("div", "card user-bubble");
      node.appendChild(el("div", "card-label", "task"));
      node.appendChild(el("div", "card-text", card.text));
      return node;
    }
    case "step": {
      const node = el("div", "card step-card");
      if (card.message) node.appendChild(el("div", "card-text", card.message));
      if (card.action) node.appendChild(el("span", "action-chip", chipText(card.action, card.actionInput)));
      return node;
    }
    case "observation": {
      const node = el("div", card.isError ? "card observation-card error" : "card observation-card");
      node.appendChild(el("div", "card-label", card.sourceTool));
      node.appendChild(el("div", "card-text", card.content));
      if (card.simElapsed > 0) {
        node.appendChild(el("div", "card-meta", `+${card.simElapsed.toFixed(1)} s sim`));
      }
      return node;
    }
    case "interjection": {
      const node = el("div", "card user-bubble interjection");
      node.appendChild(el("div", "card-label", "operator"));
      node.appendChild(el("div", "card-text", card.text));
      return node;
    }
    case "ended": {
      const node = el("div", `card ended-card status-${card.status}`);
      node.appendChild(el("div", "card-label", `session ${card.status}`));
      if (card.finalReport) node.appendChild(el("div", "card-text", card.finalReport));
      return node;
    }
  }
}

export function renderTimeline(container: HTMLElement, view: SessionView | null): void {
  container.replaceChildren();
  if (view === null) {
    container.appendChild(el("div", "placeholder", "Start or select a session."));
    return;
  }
  for (const card of view.cards) container.appendChild(cardElement(card));
  container.scrollTop = container.scrollHeight;
}

export function renderMetrics(container: HTMLElement, view: SessionView | null): void {
  container.replaceChildren();
  if (view === null) return;
  const rows: [string, string][] = [
    ["status", view.descriptor.status],
    ["agent", view.descriptor.agent_kind],
    ["steps", String(view.stepCount)],
    ["tokens", view.tokenTotal > 0 ? String(view.tokenTotal) : "n/a"],
    ["sim time", `${view.simTime.toFixed(1)} s`],
  ];
  if (view.finalTokenUsage) {
    rows.push(["final tokens", String(view.finalTokenUsage.total)]);
  }
  if (view.tokenMismatch) {
    rows.push(["token check", "MISMATCH between stream and final totals"]);
  }
  for (const [label, value] of rows) {
    const row = el("div", view.tokenMismatch && label === "token check" ? "metric warn" : "metric");
    row.appendChild(el("span", "metric-label", label));
    row.appendChild(el("span", "metric-value", value));
    container.appendChild(row);
  }
}
