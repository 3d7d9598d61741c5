/** DOM-free session controller.
 *
 * Owns the playlist cursor and one local draft per clip (three scores
 * plus a transcript).  Drafts persist through a localStorage-compatible
 * store, so a page reload restores them.  Advancing past a clip requires
 * all three scales scored locally, and actually happens only after the
 * service has acknowledged three rating submissions plus one transcript
 * submission; any failure keeps the rater on the clip with the draft
 * intact.
 */

import type { Ack, ListenApi, SessionOptions, SessionSnapshot } from "./api";
import { SCALES, type Scale } from "./prompts";

export interface Draft {
  scores: Partial<Record<Scale, number>>;
  transcript: string;
}

/** The subset of the Web Storage API the controller needs; pass
 * `window.localStorage` in the browser or a Map-backed fake in tests. */
export interface KeyValueStore {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

const emptyDraft = (): Draft => ({ scores: {}, transcript: "" });

export class SessionController {
  private snapshot: SessionSnapshot;
  private cursor: number;

  constructor(
    private readonly api: ListenApi,
    private readonly store: KeyValueStore,
    snapshot: SessionSnapshot,
  ) {
    this.snapshot = snapshot;
    this.cursor = this.firstPending();
  }

  /** Create (or take over) a session and position after any clips the
   * service already saw completed -- re-opening a finished tab resumes
   * where the records say the rater left off. */
  static async begin(
    api: ListenApi,
    store: KeyValueStore,
    opts: SessionOptions,
  ): Promise<SessionController> {
    const snapshot = await api.createSession(opts);
    return new SessionController(api, store, snapshot);
  }

  get sessionId(): string {
    return this.snapshot.session_id;
  }

  get playlist(): SessionSnapshot["playlist"] {
    return this.snapshot.playlist;
  }

  /** Index of the clip the rater is on, or playlist length when done. */
  get index(): number {
    return this.cursor;
  }

  get done(): boolean {
    return this.cursor >= this.snapshot.playlist.length;
  }

  get current(): SessionSnapshot["playlist"][number] | null {
    return this.done ? null : (this.snapshot.playlist[this.cursor] ?? null);
  }

  progress(): { done: number; total: number } {
    return { done: this.cursor, total: this.snapshot.playlist.length };
  }

  private firstPending(): number {
    const completed = new Set(this.snapshot.completed);
    const items = this.snapshot.playlist;
    for (let i = 0; i < items.length; i++) {
      const item = items[i];
      if (item && !completed.has(item.token)) return i;
    }
    return items.length;
  }

  private draftKey(token: string): string {
    return `listen-ui:${this.snapshot.session_id}:${token}`;
  }

  draft(token: string): Draft {
    const raw = this.store.getItem(this.draftKey(token));
    if (raw === null) return emptyDraft();
    try {
      const parsed = JSON.parse(raw) as Draft;
      return { scores: { ...parsed.scores }, transcript: parsed.transcript };
    } catch {
      return emptyDraft();
    }
  }

  private saveDraft(token: string, draft: Draft): void {
    this.store.setItem(this.draftKey(token), JSON.stringify(draft));
  }

  setScore(token: string, scale: Scale, score: number): void {
    if (!Number.isInteger(score) || score < 1 || score > 5) {
      throw new RangeError(`score must be an integer in 1..5, got ${score}`);
    }
    const draft = this.draft(token);
    draft.scores[scale] = score;
    this.saveDraft(token, draft);
  }

  setTranscript(token: string, text: string): void {
    const draft = this.draft(token);
    draft.transcript = text;
    this.saveDraft(token, draft);
  }

  /** All three scales scored locally; the gate for submit/advance. */
  canSubmit(token: string): boolean {
    const draft = this.draft(token);
    return SCALES.every((scale) => draft.scores[scale] !== undefined);
  }

  /** Submit the current clip's three ratings and transcript, then move
   * to the next clip.  Every submission must be acknowledged before the
   * cursor moves; on any rejection the cursor and draft stay put and the
   * error propagates to the caller for display. */
  async submitAndAdvance(): Promise<"advanced" | "completed"> {
    const item = this.current;
    if (item === null) throw new Error("session already completed");
    if (!this.canSubmit(item.token)) {
      throw new Error("all three scales must be scored before submitting");
    }
    const draft = this.draft(item.token);
    const acks: Ack[] = [];
    for (const scale of SCALES) {
      acks.push(
        await this.api.submitRating(
          this.snapshot.session_id,
          item.token,
          scale,
          draft.scores[scale] as number,
        ),
      );
    }
    acks.push(
      await this.api.submitTranscript(
        this.snapshot.session_id,
        item.token,
        draft.transcript,
      ),
    );
    if (acks.some((ack) => ack.status !== "ok")) {
      throw new Error("service did not acknowledge every submission");
    }
    this.store.removeItem(this.draftKey(item.token));
    this.cursor += 1;
    return this.done ? "completed" : "advanced";
  }

  /** Re-fetch the server-side view (e.g. after reconnecting). */
  async refresh(): Promise<void> {
    this.snapshot = await this.api.getSession(this.snapshot.session_id);
    this.cursor = Math.max(this.cursor, this.firstPending());
  }
}
