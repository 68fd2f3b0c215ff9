// Typed client for the gencrs HTTP API. Every payload shape here mirrors
// the server's JSON exactly; nothing is synthesized on the client side.

export interface ItemSummary {
  item_id: string;
  title: string;
}

export interface BeamRow {
  item_id: string;
  title: string;
  score: number;
  sid: string;
}

export interface TurnPayload {
  mode: "REC" | "CHAT";
  item_id?: string;
  item_title?: string;
  topk?: BeamRow[];
  response_text: string;
  tokens?: string[];
}

export interface HistoryTurn {
  role: string;
  text: string;
  item_id?: string;
}

export interface SessionView {
  session_id: string;
  created_at: string;
  history: HistoryTurn[];
}

export interface HealthView {
  status: string;
  items?: number;
  vocab?: number;
}

export interface MessageRequest {
  text: string;
  mode_override?: "rec" | "chat";
  item_override?: string;
  want_topk?: number;
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export class ApiClient {
  constructor(private readonly baseUrl: string = "") {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await fetch(this.baseUrl + path, init);
    } catch (err) {
      throw new ApiError(0, "network_error", String(err));
    }
    if (!response.ok) {
      // The server's error envelope is {code, message}; fall back to the
      // bare status when a proxy or crash returns something else.
      let code = "http_" + response.status;
      let message = response.statusText || "request failed";
      try {
        const body = await response.json();
        if (typeof body.code === "string") code = body.code;
        if (typeof body.message === "string") message = body.message;
      } catch {
        // non-JSON error body
      }
      throw new ApiError(response.status, code, message);
    }
    return (await response.json()) as T;
  }

  health(): Promise<HealthView> {
    return this.request<HealthView>("/api/health");
  }

  createSession(): Promise<{ session_id: string }> {
    return this.request<{ session_id: string }>("/api/sessions", {
      method: "POST",
    });
  }

  getSession(sessionId: string): Promise<SessionView> {
    return this.request<SessionView>(
      "/api/sessions/" + encodeURIComponent(sessionId),
    );
  }

  async searchItems(query: string): Promise<ItemSummary[]> {
    const body = await this.request<{ items: ItemSummary[] }>(
      "/api/items?query=" + encodeURIComponent(query),
    );
    return body.items;
  }

  sendMessage(sessionId: string, body: MessageRequest): Promise<TurnPayload> {
    return this.request<TurnPayload>(
      "/api/sessions/" + encodeURIComponent(sessionId) + "/messages",
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
      },
    );
  }
}
