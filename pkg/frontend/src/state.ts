// DOM-free session store. The UI is a pure projection of the last server
// snapshot plus two client-side flags (in-flight request, draft text), so it
// can be tested without a browser and re-rendered from scratch at any time.

import type {
  RecordSnapshot,
  SessionStatus,
  TriageSnapshot,
  TurnResponse,
} from "./api.js";

export const TOTAL_SUBTASKS = 13;

export interface Bubble {
  who: "assistant" | "patient";
  text: string;
  // true while the patient bubble is optimistic, before the server confirms
  pending: boolean;
}

export type Phase = "idle" | "starting" | "active" | "sending" | "finished";

export interface ViewModel {
  phase: Phase;
  bubbles: Bubble[];
  round: number;
  status: SessionStatus | null;
  record: RecordSnapshot;
  triage: TriageSnapshot | null;
  completedSubtasks: number;
  totalSubtasks: number;
  activeGroup: string | null;
  // blocking banner shown when the session could not start at all
  startError: string | null;
  // inline error for a failed reply; the draft text is preserved for retry
  replyError: string | null;
  draft: string;
  inputDisabled: boolean;
  startDisabled: boolean;
}

const EMPTY_RECORD: RecordSnapshot = { cc: "", hpi: "", ph: "" };

export class SessionStore {
  private phase: Phase = "idle";
  private sessionId = "";
  private snapshot: TurnResponse | null = null;
  private bubbles: Bubble[] = [];
  private startError: string | null = null;
  private replyError: string | null = null;
  private draft = "";

  get id(): string {
    return this.sessionId;
  }

  setDraft(text: string): void {
    this.draft = text;
  }

  beginStart(): void {
    if (this.phase !== "idle") {
      throw new Error(`cannot start from phase ${this.phase}`);
    }
    this.phase = "starting";
    this.startError = null;
  }

  failStart(message: string): void {
    this.phase = "idle";
    this.startError = message;
  }

  beginSend(text: string): void {
    if (this.phase !== "active") {
      throw new Error(`cannot send from phase ${this.phase}`);
    }
    if (!text.trim()) {
      throw new Error("cannot send an empty reply");
    }
    this.phase = "sending";
    this.replyError = null;
    this.draft = "";
    this.bubbles.push({ who: "patient", text, pending: true });
  }

  failSend(message: string): void {
    if (this.phase !== "sending") {
      throw new Error(`no reply in flight (phase ${this.phase})`);
    }
    // roll the optimistic bubble back and put the text back in the box
    const last = this.bubbles[this.bubbles.length - 1];
    if (last && last.who === "patient" && last.pending) {
      this.bubbles.pop();
      this.draft = last.text;
    }
    this.phase = "active";
    this.replyError = message;
  }

  applySnapshot(turn: TurnResponse): void {
    if (this.phase !== "starting" && this.phase !== "sending") {
      throw new Error(`unexpected snapshot in phase ${this.phase}`);
    }
    if (this.snapshot) {
      const before = this.snapshot.progress.completed_subtasks;
      if (turn.progress.completed_subtasks < before) {
        throw new Error(
          `server progress went backwards: ${before} -> ${turn.progress.completed_subtasks}`,
        );
      }
    }
    this.sessionId = turn.session_id;
    this.snapshot = turn;
    const last = this.bubbles[this.bubbles.length - 1];
    if (last && last.pending) {
      last.pending = false;
    }
    if (turn.next_question !== null) {
      this.bubbles.push({ who: "assistant", text: turn.next_question, pending: false });
    }
    this.phase = turn.status === "active" ? "active" : "finished";
  }

  view(): ViewModel {
    const snapshot = this.snapshot;
    return {
      phase: this.phase,
      bubbles: this.bubbles.map((b) => ({ ...b })),
      round: snapshot ? snapshot.progress.round : 0,
      status: snapshot ? snapshot.status : null,
      // the server snapshot may carry extra fields (revision history); the
      // view model keeps only what gets rendered
      record: snapshot
        ? {
            cc: snapshot.record_snapshot.cc,
            hpi: snapshot.record_snapshot.hpi,
            ph: snapshot.record_snapshot.ph,
          }
        : { ...EMPTY_RECORD },
      triage: snapshot ? snapshot.triage_snapshot : null,
      completedSubtasks: snapshot ? snapshot.progress.completed_subtasks : 0,
      totalSubtasks: TOTAL_SUBTASKS,
      activeGroup: snapshot ? snapshot.progress.active_group : null,
      startError: this.startError,
      replyError: this.replyError,
      draft: this.draft,
      inputDisabled: this.phase !== "active",
      startDisabled: this.phase !== "idle",
    };
  }
}
