/**
 * Single-page chat client for a gencrs server.
 *
 * The page is all client-side plumbing: every title, score, token, and
 * response string shown comes from a server payload, and all decoding
 * stays on the server. One message request is in flight per session at
 * most; the controls are disabled while a reply is pending.
 */

import { ApiClient, ApiError, HealthView } from "./api.js";
import { ChatSession, ModeControl, SessionApi } from "./session.js";
import { ItemPicker, ItemSearch } from "./picker.js";
import { renderTurn } from "./view.js";

export interface ServerApi extends SessionApi, ItemSearch {
  health(): Promise<HealthView>;
}

export class App {
  readonly session: ChatSession;
  picker!: ItemPicker;
  showTokens = false;

  private root: HTMLElement;
  private status!: HTMLElement;
  private thread!: HTMLElement;
  private errorBar!: HTMLElement;
  private modeSelect!: HTMLSelectElement;
  private topkInput!: HTMLInputElement;
  private tokensToggle!: HTMLInputElement;
  private composerInput!: HTMLInputElement;
  private sendBtn!: HTMLButtonElement;
  private newBtn!: HTMLButtonElement;
  // tests await this to observe the end of a click-triggered send
  private pendingSend: Promise<void> = Promise.resolve();

  constructor(
    private readonly client: ServerApi,
    root: HTMLElement,
  ) {
    this.root = root;
    this.session = new ChatSession(client);
  }

  async start(): Promise<void> {
    this.buildDom();
    await this.connect();
  }

  settle(): Promise<void> {
    return this.pendingSend;
  }

  private buildDom(): void {
    this.root.classList.add("chat");
    this.root.innerHTML =
      '<header class="chat__top">' +
      '<span class="chat__name">gencrs</span>' +
      '<span class="chat__status">connecting...</span>' +
      '<button class="chat__new" type="button">new session</button>' +
      "</header>" +
      '<div class="controls">' +
      '<label class="controls__field">mode ' +
      '<select class="controls__mode">' +
      '<option value="auto">auto</option>' +
      '<option value="rec">rec</option>' +
      '<option value="chat">chat</option>' +
      "</select></label>" +
      '<label class="controls__field">top-k ' +
      '<input class="controls__topk" type="number" min="0" max="50" value="5">' +
      "</label>" +
      '<div class="controls__picker"></div>' +
      '<label class="controls__field controls__debug">' +
      '<input class="controls__tokens" type="checkbox"> raw tokens</label>' +
      "</div>" +
      '<div class="thread"></div>' +
      '<div class="chat__error" hidden></div>' +
      '<form class="composer">' +
      '<input class="composer__input" type="text"' +
      ' placeholder="say something..." autocomplete="off">' +
      '<button class="composer__send" type="submit">send</button>' +
      "</form>";

    const q = <T extends Element>(sel: string): T =>
      this.root.querySelector<T>(sel)!;
    this.status = q(".chat__status");
    this.thread = q(".thread");
    this.errorBar = q(".chat__error");
    this.modeSelect = q(".controls__mode");
    this.topkInput = q(".controls__topk");
    this.tokensToggle = q(".controls__tokens");
    this.composerInput = q(".composer__input");
    this.sendBtn = q(".composer__send");
    this.newBtn = q(".chat__new");
    this.picker = new ItemPicker(this.client, q(".controls__picker"));

    this.modeSelect.addEventListener("change", () => {
      this.session.controls.mode = this.modeSelect.value as ModeControl;
    });
    this.topkInput.addEventListener("change", () => {
      const k = Number(this.topkInput.value);
      this.session.controls.topkK = Number.isFinite(k) && k > 0 ? k : 0;
    });
    this.picker.onChange = (item) => {
      this.session.controls.conditionedItem = item;
    };
    this.tokensToggle.addEventListener("change", () => {
      this.showTokens = this.tokensToggle.checked;
      for (const pre of this.thread.querySelectorAll<HTMLElement>(
        ".turn__tokens",
      )) {
        pre.hidden = !this.showTokens;
      }
    });
    this.root
      .querySelector<HTMLFormElement>(".composer")!
      .addEventListener("submit", (event) => {
        event.preventDefault();
        this.pendingSend = this.handleSend();
      });
    this.newBtn.addEventListener("click", () => {
      this.pendingSend = this.startSession();
    });
  }

  private async connect(): Promise<void> {
    try {
      const health = await this.client.health();
      if (health.status !== "ok") {
        this.status.textContent = "model loading, retry shortly";
        return;
      }
      this.status.textContent =
        health.items + " items · vocab " + health.vocab;
      await this.startSession();
    } catch (err) {
      this.status.textContent = "unreachable";
      this.showError(err);
    }
  }

  private async startSession(): Promise<void> {
    this.clearError();
    try {
      await this.session.open();
      this.renderTranscript();
    } catch (err) {
      this.showError(err);
    }
  }

  private async handleSend(): Promise<void> {
    const draft = this.composerInput.value;
    const text = draft.trim();
    if (!text || this.session.busy) {
      return;
    }
    this.setBusy(true);
    this.clearError();
    try {
      await this.session.sendTurn(text);
      // clear the draft only once the server accepted the turn
      this.composerInput.value = "";
      this.renderTranscript();
    } catch (err) {
      this.showError(err);
    } finally {
      this.setBusy(false);
    }
  }

  private renderTranscript(): void {
    this.thread.innerHTML = "";
    for (const turn of this.session.transcript) {
      this.thread.appendChild(renderTurn(turn, this.showTokens));
    }
    this.thread.scrollTop = this.thread.scrollHeight;
  }

  private setBusy(busy: boolean): void {
    this.sendBtn.disabled = busy;
    this.composerInput.disabled = busy;
    this.modeSelect.disabled = busy;
    this.topkInput.disabled = busy;
    this.newBtn.disabled = busy;
    this.picker.setEnabled(!busy);
  }

  private showError(err: unknown): void {
    const text =
      err instanceof ApiError ? err.code + ": " + err.message : String(err);
    this.errorBar.textContent = text;
    this.errorBar.hidden = false;
  }

  private clearError(): void {
    this.errorBar.hidden = true;
    this.errorBar.textContent = "";
  }
}

const mount = typeof document !== "undefined" && document.getElementById("app");
if (mount) {
  const app = new App(new ApiClient(""), mount);
  void app.start();
}
