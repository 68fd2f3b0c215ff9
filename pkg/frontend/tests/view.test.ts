import { describe, expect, it } from "vitest";

import { BeamRow } from "../src/api.js";
import { escapeHtml, renderBeamTable, renderTurn } from "../src/view.js";

const beam: BeamRow[] = [
  { item_id: "i1", title: "One", score: -0.1234, sid: "<a_0><b_1>" },
  { item_id: "i2", title: "Two", score: -1.5, sid: "<a_2><b_0>" },
  { item_id: "i3", title: "Three", score: -2.25, sid: "<a_2><b_3>" },
];

describe("renderTurn", () => {
  it("renders a user turn without item chrome", () => {
    const node = renderTurn({ role: "user", text: "hi there" }, false);
    expect(node.className).toBe("turn turn--user");
    expect(node.querySelector(".turn__text")?.textContent).toBe("hi there");
    expect(node.querySelector(".item-card")).toBeNull();
    expect(node.querySelector(".beam")).toBeNull();
  });

  it("renders an item card for REC turns only", () => {
    const rec = renderTurn(
      {
        role: "assistant",
        text: "«One» (i1)",
        mode: "REC",
        itemId: "i1",
        itemTitle: "One",
      },
      false,
    );
    const card = rec.querySelector(".item-card")!;
    expect(card.querySelector(".item-card__title")?.textContent).toBe(
      "«One»",
    );
    expect(card.querySelector(".item-card__id")?.textContent).toBe("(i1)");

    const chat = renderTurn(
      { role: "assistant", text: "hello", mode: "CHAT" },
      false,
    );
    expect(chat.querySelector(".item-card")).toBeNull();
  });

  it("keeps markup-like payload text inert", () => {
    const node = renderTurn(
      { role: "assistant", text: "<script>alert(1)</script>", mode: "CHAT" },
      false,
    );
    expect(node.querySelector("script")).toBeNull();
    expect(node.querySelector(".turn__text")?.textContent).toBe(
      "<script>alert(1)</script>",
    );
  });

  it("shows raw tokens verbatim only when toggled on", () => {
    const turn = {
      role: "assistant" as const,
      text: "«One» (i1)",
      mode: "REC" as const,
      itemId: "i1",
      itemTitle: "One",
      tokens: ["<MODE=REC>", "<BOI>", "<a_0>", "<b_1>", "<EOI>"],
    };
    const hidden = renderTurn(turn, false);
    const pre = hidden.querySelector<HTMLElement>(".turn__tokens")!;
    expect(pre.hidden).toBe(true);
    expect(pre.textContent).toBe("<MODE=REC> <BOI> <a_0> <b_1> <EOI>");

    const shown = renderTurn(turn, true);
    expect(shown.querySelector<HTMLElement>(".turn__tokens")!.hidden).toBe(
      false,
    );
  });
});

describe("renderBeamTable", () => {
  it("numbers ranks contiguously from 1 and echoes payload fields", () => {
    const table = renderBeamTable(beam);
    const rows = table.querySelectorAll("tbody tr");
    expect(rows.length).toBe(3);
    const ranks = [...rows].map(
      (r) => r.querySelector(".beam__rank")?.textContent,
    );
    expect(ranks).toEqual(["1", "2", "3"]);
    const titles = [...rows].map(
      (r) => r.querySelector(".beam__title")?.textContent,
    );
    expect(titles).toEqual(["One", "Two", "Three"]);
    expect(rows[0].querySelector(".beam__score")?.textContent).toBe("-0.123");
    expect(rows[0].querySelector(".beam__sid")?.textContent).toBe(
      "<a_0><b_1>",
    );
  });
});

describe("escapeHtml", () => {
  it("escapes the five metacharacters", () => {
    expect(escapeHtml("<a href=\"x\">&'</a>")).toBe(
      "&lt;a href=&quot;x&quot;&gt;&amp;&#39;&lt;/a&gt;",
    );
  });
});
