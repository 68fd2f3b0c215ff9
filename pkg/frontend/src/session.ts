import {
  ItemSummary,
  MessageRequest,
  SessionView,
  TurnPayload,
} from "./api.js";

export interface SessionApi {
  createSession(): Promise<{ session_id: string }>;
  getSession(sessionId: string): Promise<SessionView>;
  sendMessage(sessionId: string, body: MessageRequest): Promise<TurnPayload>;
}

export type ModeControl = "auto" | "rec" | "chat";

export interface Controls {
  mode: ModeControl;
  conditionedItem: ItemSummary | null;
  /** top-k beam rows to request alongside REC turns; 0 disables */
  topkK: number;
}

export interface RenderedTurn {
  role: "user" | "assistant";
  text: string;
  mode?: "REC" | "CHAT";
  itemId?: string;
  itemTitle?: string;
  topk?: TurnPayload["topk"];
  tokens?: string[];
}

/**
 * Client-side session state: the transcript plus the control panel that
 * shapes each POST /messages body. The transcript is only appended after
 * a successful round-trip, so it mirrors the server history at all times
 * (a failed send leaves both sides untouched).
 */
export class ChatSession {
  readonly controls: Controls = { mode: "auto", conditionedItem: null, topkK: 5 };
  transcript: RenderedTurn[] = [];
  sessionId = "";
  private inFlight = false;

  constructor(private readonly client: SessionApi) {}

  get busy(): boolean {
    return this.inFlight;
  }

  async open(): Promise<void> {
    const created = await this.client.createSession();
    this.sessionId = created.session_id;
    this.transcript = [];
  }

  async sendTurn(text: string): Promise<TurnPayload> {
    if (!this.sessionId) {
      throw new Error("session not created");
    }
    if (this.inFlight) {
      throw new Error("a request is already in flight");
    }
    const body: MessageRequest = { text };
    if (this.controls.mode !== "auto") {
      body.mode_override = this.controls.mode;
    }
    if (this.controls.conditionedItem) {
      body.item_override = this.controls.conditionedItem.item_id;
    }
    if (this.controls.topkK >= 1) {
      body.want_topk = this.controls.topkK;
    }
    this.inFlight = true;
    try {
      const payload = await this.client.sendMessage(this.sessionId, body);
      this.transcript.push({ role: "user", text });
      this.transcript.push({
        role: "assistant",
        text: payload.response_text,
        mode: payload.mode,
        itemId: payload.item_id,
        itemTitle: payload.item_title,
        topk: payload.topk,
        tokens: payload.tokens,
      });
      return payload;
    } finally {
      this.inFlight = false;
    }
  }

  /** True when the local transcript equals GET /sessions/{id} on the server. */
  async reconcile(): Promise<boolean> {
    const view = await this.client.getSession(this.sessionId);
    const mine = this.transcript.map((turn) => {
      const entry: { role: string; text: string; item_id?: string } = {
        role: turn.role,
        text: turn.text,
      };
      if (turn.itemId !== undefined) {
        entry.item_id = turn.itemId;
      }
      return entry;
    });
    return JSON.stringify(mine) === JSON.stringify(view.history);
  }
}
