import { describe, expect, it, vi } from "vitest";

import { ApiError, TurnPayload } from "../src/api.js";
import { App, ServerApi } from "../src/main.js";

const recReply: TurnPayload = {
  mode: "REC",
  item_id: "i2",
  item_title: "Two",
  response_text: "«Two» (i2)",
  topk: [
    { item_id: "i2", title: "Two", score: -0.2, sid: "<a_1><b_0>" },
    { item_id: "i5", title: "Five", score: -0.9, sid: "<a_1><b_4>" },
  ],
};

function makeApi(overrides: Partial<ServerApi> = {}): ServerApi {
  return {
    health: vi.fn().mockResolvedValue({ status: "ok", items: 8, vocab: 41 }),
    createSession: vi.fn().mockResolvedValue({ session_id: "s1" }),
    getSession: vi.fn().mockResolvedValue({
      session_id: "s1",
      created_at: "now",
      history: [],
    }),
    sendMessage: vi
      .fn()
      .mockResolvedValue({ mode: "CHAT", response_text: "hello !" }),
    searchItems: vi.fn().mockResolvedValue([]),
    ...overrides,
  };
}

async function makeApp(api: ServerApi) {
  const root = document.createElement("div");
  document.body.appendChild(root);
  const app = new App(api, root);
  await app.start();
  return { app, root };
}

function sendDraft(root: HTMLElement, text: string): void {
  root.querySelector<HTMLInputElement>(".composer__input")!.value = text;
  root
    .querySelector<HTMLFormElement>(".composer")!
    .dispatchEvent(new Event("submit", { bubbles: true, cancelable: true }));
}

describe("App", () => {
  it("connects, reports the catalog size, and opens a session", async () => {
    const api = makeApi();
    const { root } = await makeApp(api);
    expect(root.querySelector(".chat__status")?.textContent).toBe(
      "8 items · vocab 41",
    );
    expect(api.createSession).toHaveBeenCalledTimes(1);
    expect(root.querySelectorAll(".turn").length).toBe(0);
  });

  it("sends the draft and renders both turns", async () => {
    const api = makeApi();
    const { app, root } = await makeApp(api);
    sendDraft(root, "hi there");
    await app.settle();
    expect(api.sendMessage).toHaveBeenCalledWith("s1", {
      text: "hi there",
      want_topk: 5,
    });
    const turns = root.querySelectorAll(".turn");
    expect(turns.length).toBe(2);
    expect(turns[0].className).toContain("turn--user");
    expect(turns[1].className).toContain("turn--assistant");
    expect(root.querySelector<HTMLInputElement>(".composer__input")!.value).toBe(
      "",
    );
  });

  it("ignores blank drafts", async () => {
    const api = makeApi();
    const { app, root } = await makeApp(api);
    sendDraft(root, "   ");
    await app.settle();
    expect(api.sendMessage).not.toHaveBeenCalled();
  });

  it("disables every control while a reply is pending", async () => {
    let finish!: (p: TurnPayload) => void;
    const api = makeApi({
      sendMessage: vi.fn().mockReturnValue(
        new Promise<TurnPayload>((resolve) => {
          finish = resolve;
        }),
      ),
    });
    const { app, root } = await makeApp(api);
    sendDraft(root, "hold");
    const sel = <T extends HTMLElement>(s: string) =>
      root.querySelector<T>(s)!;
    expect(sel<HTMLButtonElement>(".composer__send").disabled).toBe(true);
    expect(sel<HTMLInputElement>(".composer__input").disabled).toBe(true);
    expect(sel<HTMLSelectElement>(".controls__mode").disabled).toBe(true);
    expect(sel<HTMLInputElement>(".controls__topk").disabled).toBe(true);
    expect(sel<HTMLButtonElement>(".chat__new").disabled).toBe(true);
    expect(sel<HTMLInputElement>(".picker__input").disabled).toBe(true);
    finish({ mode: "CHAT", response_text: "done" });
    await app.settle();
    expect(sel<HTMLButtonElement>(".composer__send").disabled).toBe(false);
    expect(sel<HTMLInputElement>(".composer__input").disabled).toBe(false);
  });

  it("surfaces errors inline and keeps the draft", async () => {
    const api = makeApi({
      sendMessage: vi
        .fn()
        .mockRejectedValue(new ApiError(400, "generation_failed", "boom")),
    });
    const { app, root } = await makeApp(api);
    sendDraft(root, "my draft");
    await app.settle();
    const bar = root.querySelector<HTMLElement>(".chat__error")!;
    expect(bar.hidden).toBe(false);
    expect(bar.textContent).toBe("generation_failed: boom");
    expect(root.querySelector<HTMLInputElement>(".composer__input")!.value).toBe(
      "my draft",
    );
    expect(root.querySelectorAll(".turn").length).toBe(0);
  });

  it("renders chat replies without an item card", async () => {
    const { app, root } = await makeApp(makeApi());
    sendDraft(root, "hello");
    await app.settle();
    expect(root.querySelector(".item-card")).toBeNull();
    expect(root.querySelector(".beam")).toBeNull();
  });

  it("renders rec replies with the card and ranked beam rows", async () => {
    const api = makeApi({
      sendMessage: vi.fn().mockResolvedValue(recReply),
    });
    const { app, root } = await makeApp(api);
    root.querySelector<HTMLSelectElement>(".controls__mode")!.value = "rec";
    root
      .querySelector<HTMLSelectElement>(".controls__mode")!
      .dispatchEvent(new Event("change"));
    sendDraft(root, "rec me");
    await app.settle();
    expect(api.sendMessage).toHaveBeenCalledWith("s1", {
      text: "rec me",
      mode_override: "rec",
      want_topk: 5,
    });
    expect(root.querySelector(".item-card__title")?.textContent).toBe(
      "«Two»",
    );
    const ranks = [...root.querySelectorAll(".beam__rank")].map(
      (cell) => cell.textContent,
    );
    expect(ranks).toEqual(["1", "2"]);
  });

  it("passes the picked item as item_override", async () => {
    const api = makeApi();
    const { app, root } = await makeApp(api);
    app.picker.select({ item_id: "i3", title: "Three" });
    sendDraft(root, "this one");
    await app.settle();
    expect(api.sendMessage).toHaveBeenCalledWith("s1", {
      text: "this one",
      item_override: "i3",
      want_topk: 5,
    });
  });

  it("toggles raw token visibility on existing turns", async () => {
    const api = makeApi({
      sendMessage: vi.fn().mockResolvedValue({
        ...recReply,
        tokens: ["<MODE=REC>", "<BOI>", "<a_1>", "<b_0>", "<EOI>"],
      }),
    });
    const { app, root } = await makeApp(api);
    sendDraft(root, "rec me");
    await app.settle();
    const pre = root.querySelector<HTMLElement>(".turn__tokens")!;
    expect(pre.hidden).toBe(true);
    const toggle = root.querySelector<HTMLInputElement>(".controls__tokens")!;
    toggle.checked = true;
    toggle.dispatchEvent(new Event("change"));
    expect(pre.hidden).toBe(false);
    expect(pre.textContent).toBe("<MODE=REC> <BOI> <a_1> <b_0> <EOI>");
  });

  it("starts a fresh session on request", async () => {
    const api = makeApi();
    const { app, root } = await makeApp(api);
    sendDraft(root, "hello");
    await app.settle();
    expect(root.querySelectorAll(".turn").length).toBe(2);
    root.querySelector<HTMLButtonElement>(".chat__new")!.click();
    await app.settle();
    expect(api.createSession).toHaveBeenCalledTimes(2);
    expect(root.querySelectorAll(".turn").length).toBe(0);
  });

  it("reports an unreachable server in the status line", async () => {
    const api = makeApi({
      health: vi
        .fn()
        .mockRejectedValue(new ApiError(0, "network_error", "refused")),
    });
    const { root } = await makeApp(api);
    expect(root.querySelector(".chat__status")?.textContent).toBe(
      "unreachable",
    );
    expect(root.querySelector<HTMLElement>(".chat__error")!.hidden).toBe(false);
  });
});
