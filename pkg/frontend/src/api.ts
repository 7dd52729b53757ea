// Typed client for the consultation service. All medical content comes from
// the server verbatim; this layer only moves JSON.

export type SessionStatus = "active" | "completed" | "failed_incomplete";

export interface RecordSnapshot {
  cc: string;
  hpi: string;
  ph: string;
}

export interface TriageCandidate {
  department: string;
  confidence: number;
}

export interface TriageSnapshot {
  primary: TriageCandidate[];
  secondary: TriageCandidate[];
}

export interface Progress {
  completed_subtasks: number;
  active_group: string | null;
  round: number;
}

export interface TurnResponse {
  session_id: string;
  status: SessionStatus;
  next_question: string | null;
  record_snapshot: RecordSnapshot;
  triage_snapshot: TriageSnapshot | null;
  progress: Progress;
}

export interface SessionReport {
  session_id: string;
  status: SessionStatus;
  rounds_used: number;
  record: RecordSnapshot;
}

export interface ErrorBody {
  code: string;
  message: string;
  retryable: boolean;
}

export class ApiError extends Error {
  constructor(readonly status: number, readonly body: ErrorBody) {
    super(body.message);
    this.name = "ApiError";
  }

  get retryable(): boolean {
    return this.body.retryable;
  }
}

export interface ClientOptions {
  baseUrl: string;
  authToken?: string;
  // injectable for tests; defaults to the platform fetch
  fetchImpl?: typeof fetch;
}

export class PreconsultClient {
  private readonly baseUrl: string;
  private readonly authToken: string;
  private readonly fetchImpl: typeof fetch;

  constructor(options: ClientOptions) {
    this.baseUrl = options.baseUrl.replace(/\/+$/, "");
    this.authToken = options.authToken ?? "";
    this.fetchImpl = options.fetchImpl ?? fetch;
  }

  async createSession(
    overrides?: Partial<{ controller_strategy: string; max_rounds: number }>,
  ): Promise<TurnResponse> {
    return this.request<TurnResponse>("POST", "/sessions", overrides ?? {});
  }

  async sendReply(sessionId: string, text: string): Promise<TurnResponse> {
    return this.request<TurnResponse>(
      "POST",
      `/sessions/${encodeURIComponent(sessionId)}/reply`,
      { text },
    );
  }

  async getReport(sessionId: string): Promise<SessionReport> {
    return this.request<SessionReport>(
      "GET",
      `/sessions/${encodeURIComponent(sessionId)}/report`,
    );
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = { "content-type": "application/json" };
    if (this.authToken) {
      headers["authorization"] = `Bearer ${this.authToken}`;
    }
    let response: Response;
    try {
      response = await this.fetchImpl(this.baseUrl + path, {
        method,
        headers,
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (err) {
      throw new ApiError(0, {
        code: "unreachable",
        message: `service unreachable: ${String(err)}`,
        retryable: true,
      });
    }
    if (!response.ok) {
      throw new ApiError(response.status, await parseErrorBody(response));
    }
    return (await response.json()) as T;
  }
}

async function parseErrorBody(response: Response): Promise<ErrorBody> {
  try {
    const data = (await response.json()) as Partial<ErrorBody>;
    if (typeof data.code === "string" && typeof data.message === "string") {
      return { code: data.code, message: data.message, retryable: !!data.retryable };
    }
  } catch {
    // fall through to the generic body
  }
  return {
    code: `http_${response.status}`,
    message: `request failed with status ${response.status}`,
    retryable: response.status >= 500,
  };
}
