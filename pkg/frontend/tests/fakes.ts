/** In-memory stand-ins for the service API and the browser's
 * localStorage, mirroring the real service's semantics closely enough
 * for controller and form tests: last-write-wins ratings, completion =
 * three scales + a transcript, 409 on duplicate sessions, injectable
 * failures. */

import {
  ApiError,
  type Ack,
  type ListenApi,
  type SessionOptions,
  type SessionSnapshot,
} from "../src/api";
import type { KeyValueStore } from "../src/session";
import { SCALES } from "../src/prompts";

export class MemoryStore implements KeyValueStore {
  readonly map = new Map<string, string>();

  getItem(key: string): string | null {
    return this.map.get(key) ?? null;
  }

  setItem(key: string, value: string): void {
    this.map.set(key, value);
  }

  removeItem(key: string): void {
    this.map.delete(key);
  }
}

export interface RecordedRating {
  sessionId: string;
  token: string;
  scale: string;
  score: number;
}

export interface RecordedTranscript {
  sessionId: string;
  token: string;
  text: string;
}

const DEFAULT_PLAYLIST = [
  { token: "tok-aaaa", reference_text: "Woof woof!!" },
  { token: "tok-bbbb", reference_text: "Good boys." },
  { token: "tok-cccc", reference_text: "Woof woof!!" },
  { token: "tok-dddd", reference_text: "Good boys." },
];

export class FakeApi implements ListenApi {
  ratings: RecordedRating[] = [];
  transcripts: RecordedTranscript[] = [];
  /** When set, the next matching submission is rejected once. */
  failNext: { kind: "rating" | "transcript"; status: number } | null = null;
  private readonly active = new Set<string>();

  constructor(
    readonly playlist = DEFAULT_PLAYLIST,
    readonly experiment = "fake_study",
  ) {}

  private sessionIdFor(opts: SessionOptions): string {
    return `sess-${opts.raterId}-${opts.seed ?? 0}`;
  }

  private snapshot(sessionId: string): SessionSnapshot {
    const done = this.playlist
      .map((item) => item.token)
      .filter(
        (token) =>
          SCALES.every((scale) =>
            this.ratings.some(
              (r) =>
                r.sessionId === sessionId &&
                r.token === token &&
                r.scale === scale,
            ),
          ) &&
          this.transcripts.some(
            (t) => t.sessionId === sessionId && t.token === token,
          ),
      );
    return {
      session_id: sessionId,
      experiment: this.experiment,
      lock: "lock0",
      playlist: this.playlist.map((item) => ({ ...item })),
      completed: done,
    };
  }

  createSession(opts: SessionOptions): Promise<SessionSnapshot> {
    const sid = this.sessionIdFor(opts);
    if (this.active.has(sid) && !opts.takeover) {
      return Promise.reject(
        new ApiError(409, "session already active in another tab"),
      );
    }
    this.active.add(sid);
    return Promise.resolve(this.snapshot(sid));
  }

  getSession(sessionId: string): Promise<SessionSnapshot> {
    if (!this.active.has(sessionId)) {
      return Promise.reject(new ApiError(403, "unknown session"));
    }
    return Promise.resolve(this.snapshot(sessionId));
  }

  clipUrl(token: string): string {
    return `fake://clips/${token}`;
  }

  fetchClip(): Promise<ArrayBuffer> {
    return Promise.resolve(new ArrayBuffer(16));
  }

  submitRating(
    sessionId: string,
    token: string,
    scale: string,
    score: number,
  ): Promise<Ack> {
    if (this.failNext?.kind === "rating") {
      const { status } = this.failNext;
      this.failNext = null;
      return Promise.reject(new ApiError(status, "injected rating failure"));
    }
    this.ratings.push({ sessionId, token, scale, score });
    const entries = this.ratings.filter(
      (r) =>
        r.sessionId === sessionId && r.token === token && r.scale === scale,
    ).length;
    return Promise.resolve({ status: "ok", audit_entries: entries });
  }

  submitTranscript(
    sessionId: string,
    token: string,
    text: string,
  ): Promise<Ack> {
    if (this.failNext?.kind === "transcript") {
      const { status } = this.failNext;
      this.failNext = null;
      return Promise.reject(
        new ApiError(status, "injected transcript failure"),
      );
    }
    this.transcripts.push({ sessionId, token, text });
    const entries = this.transcripts.filter(
      (t) => t.sessionId === sessionId && t.token === token,
    ).length;
    return Promise.resolve({ status: "ok", audit_entries: entries });
  }
}
