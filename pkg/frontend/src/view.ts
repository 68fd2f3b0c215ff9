// DOM builders for transcript turns. All payload strings go through
// textContent, so titles, response text, and raw tokens appear verbatim
// and nothing from the server is interpreted as markup.

import { BeamRow } from "./api.js";
import { RenderedTurn } from "./session.js";

export function escapeHtml(value: string): string {
  return value
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  node.className = className;
  if (text !== undefined) {
    node.textContent = text;
  }
  return node;
}

export function renderItemCard(itemId: string, title: string): HTMLElement {
  const card = el("div", "item-card");
  card.appendChild(el("span", "item-card__title", "«" + title + "»"));
  card.appendChild(el("span", "item-card__id", "(" + itemId + ")"));
  return card;
}

export function renderBeamTable(rows: BeamRow[]): HTMLTableElement {
  const table = el("table", "beam");
  const head = document.createElement("thead");
  head.innerHTML =
    "<tr><th>#</th><th>title</th><th>item</th><th>score</th><th>sid</th></tr>";
  table.appendChild(head);
  const body = document.createElement("tbody");
  rows.forEach((row, i) => {
    const tr = document.createElement("tr");
    tr.className = "beam__row";
    tr.appendChild(el("td", "beam__rank", String(i + 1)));
    tr.appendChild(el("td", "beam__title", row.title));
    tr.appendChild(el("td", "beam__item", row.item_id));
    tr.appendChild(el("td", "beam__score", row.score.toFixed(3)));
    tr.appendChild(el("td", "beam__sid", row.sid));
    body.appendChild(tr);
  });
  table.appendChild(body);
  return table;
}

export function renderTurn(
  turn: RenderedTurn,
  showTokens: boolean,
): HTMLElement {
  const root = el("div", "turn turn--" + turn.role);
  root.appendChild(
    el("div", "turn__role", turn.role === "user" ? "you" : "model"),
  );
  root.appendChild(el("div", "turn__text", turn.text));
  if (turn.role === "assistant" && turn.mode === "REC" && turn.itemId) {
    root.appendChild(renderItemCard(turn.itemId, turn.itemTitle ?? ""));
  }
  if (turn.topk && turn.topk.length > 0) {
    root.appendChild(renderBeamTable(turn.topk));
  }
  if (turn.tokens && turn.tokens.length > 0) {
    const pre = el("pre", "turn__tokens", turn.tokens.join(" "));
    pre.hidden = !showTokens;
    root.appendChild(pre);
  }
  return root;
}
