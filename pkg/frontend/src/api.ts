/** Typed client for the listening-test service.
 *
 * This is the client's entire knowledge of the outside world: session
 * creation, the per-session playlist of opaque clip tokens, audio bytes
 * behind those tokens, and rating/transcript submission.  No payload in
 * or out ever carries condition metadata -- the client never has it.
 */

export interface PlaylistItem {
  token: string;
  reference_text: string;
}

export interface SessionSnapshot {
  session_id: string;
  experiment: string;
  lock: string;
  playlist: PlaylistItem[];
  completed: string[];
}

export interface Ack {
  status: string;
  audit_entries: number;
}

export interface SessionOptions {
  raterId: string;
  experiment: string;
  seed?: number;
  takeover?: boolean;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

/** The surface the session controller depends on; the HTTP implementation
 * below is the production one, tests substitute in-memory fakes. */
export interface ListenApi {
  createSession(opts: SessionOptions): Promise<SessionSnapshot>;
  getSession(sessionId: string): Promise<SessionSnapshot>;
  clipUrl(token: string): string;
  fetchClip(token: string): Promise<ArrayBuffer>;
  submitRating(
    sessionId: string,
    token: string,
    scale: string,
    score: number,
  ): Promise<Ack>;
  submitTranscript(
    sessionId: string,
    token: string,
    text: string,
  ): Promise<Ack>;
}

async function parseError(res: Response): Promise<never> {
  let detail = res.statusText;
  try {
    const body = (await res.json()) as { detail?: unknown };
    if (body.detail !== undefined) detail = JSON.stringify(body.detail);
  } catch {
    /* non-JSON error body; keep the status text */
  }
  throw new ApiError(res.status, detail);
}

export class HttpListenApi implements ListenApi {
  constructor(
    readonly baseUrl: string,
    // wrapped so the global fetch keeps its own receiver in browsers
    private readonly fetchFn: typeof fetch = (input, init) =>
      fetch(input, init),
  ) {}

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchFn(`${this.baseUrl}${path}`, init);
    if (!res.ok) await parseError(res);
    return (await res.json()) as T;
  }

  createSession(opts: SessionOptions): Promise<SessionSnapshot> {
    return this.json<SessionSnapshot>("/sessions", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({
        rater_id: opts.raterId,
        experiment: opts.experiment,
        seed: opts.seed ?? 0,
        takeover: opts.takeover ?? false,
      }),
    });
  }

  getSession(sessionId: string): Promise<SessionSnapshot> {
    return this.json<SessionSnapshot>(`/sessions/${sessionId}`);
  }

  clipUrl(token: string): string {
    return `${this.baseUrl}/clips/${token}`;
  }

  async fetchClip(token: string): Promise<ArrayBuffer> {
    const res = await this.fetchFn(this.clipUrl(token));
    if (!res.ok) await parseError(res);
    return res.arrayBuffer();
  }

  submitRating(
    sessionId: string,
    token: string,
    scale: string,
    score: number,
  ): Promise<Ack> {
    return this.json<Ack>("/ratings", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({
        session_id: sessionId,
        token,
        scale,
        score,
      }),
    });
  }

  submitTranscript(
    sessionId: string,
    token: string,
    text: string,
  ): Promise<Ack> {
    return this.json<Ack>("/transcripts", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ session_id: sessionId, token, text }),
    });
  }
}
