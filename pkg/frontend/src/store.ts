/**
 * Review session state machine.
 *
 * Owns every transition the UI can make and talks to the server through the
 * injected ReviewApi; no DOM access, so the whole flow is testable headless.
 *
 * Phases:
 *   idle -> loading -> reviewing <-> submitting -> done
 *                         |  ^                       ^
 *                         v  |                       |
 *                        failed ---- retryNow() -----+
 *
 * The server is the source of truth. Conflicts (someone else resolved the
 * item first, HTTP 409) refresh the queue and skip forward. Submissions
 * that never reach the server are parked in a retry queue and flushed with
 * retryNow(); a page reload simply drops them, and the items stay pending
 * server-side.
 */

import {
  ApiError,
  Choice,
  NetworkError,
  QueueStats,
  ReviewApi,
  ReviewItemDetail,
} from './api.js';

export type Phase = 'idle' | 'loading' | 'reviewing' | 'submitting' | 'done' | 'failed';

export interface PendingSubmission {
  itemId: string;
  choice: Choice;
}

export interface SessionState {
  phase: Phase;
  queue: string[];
  current: ReviewItemDetail | null;
  detailsOpen: boolean;
  reviewer: string;
  reviewedCount: number;
  conflictCount: number;
  retryQueue: PendingSubmission[];
  offline: boolean;
  lastError: string | null;
  stats: QueueStats | null;
}

type Listener = (state: SessionState) => void;

export class ReviewSession {
  readonly state: SessionState;
  private listeners: Listener[] = [];
  private handled = new Set<string>();
  private inFlight = 0;
  private settleWaiters: (() => void)[] = [];

  constructor(private readonly api: ReviewApi, reviewer = 'anonymous') {
    this.state = {
      phase: 'idle',
      queue: [],
      current: null,
      detailsOpen: false,
      reviewer,
      reviewedCount: 0,
      conflictCount: 0,
      retryQueue: [],
      offline: false,
      lastError: null,
      stats: null,
    };
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  /** Resolves once no action is in flight. For tests and fire-and-forget callers. */
  settled(): Promise<void> {
    if (this.inFlight === 0) return Promise.resolve();
    return new Promise((resolve) => this.settleWaiters.push(resolve));
  }

  setReviewer(name: string): void {
    const trimmed = name.trim();
    if (trimmed) this.state.reviewer = trimmed;
    this.notify();
  }

  toggleDetails(): void {
    if (this.state.phase !== 'reviewing') return;
    this.state.detailsOpen = !this.state.detailsOpen;
    this.notify();
  }

  async start(): Promise<void> {
    await this.run(async () => {
      this.state.phase = 'loading';
      this.state.lastError = null;
      this.notify();
      try {
        const items = await this.api.listPending();
        this.state.queue = items.map((i) => i.item_id);
      } catch (err) {
        this.fail(err);
        return;
      }
      await this.advance();
    });
  }

  /** Pick one of the displayed candidates (slot is 1-based). */
  async choose(slot: number): Promise<void> {
    const current = this.state.current;
    if (this.state.phase !== 'reviewing' || current === null) return;
    const candidate = current.candidates[slot - 1];
    if (candidate === undefined) return;
    await this.submit(current.item_id, candidate.class_id);
  }

  async rejectAll(): Promise<void> {
    const current = this.state.current;
    if (this.state.phase !== 'reviewing' || current === null) return;
    await this.submit(current.item_id, 'rejected_all');
  }

  /** Put the current item at the back of the queue and move on. */
  async skip(): Promise<void> {
    const current = this.state.current;
    if (this.state.phase !== 'reviewing' || current === null) return;
    await this.run(async () => {
      this.state.queue.push(current.item_id);
      await this.advance();
    });
  }

  /** Flush parked submissions, then resume wherever we got stuck. */
  async retryNow(): Promise<void> {
    await this.run(async () => {
      this.state.lastError = null;
      while (this.state.retryQueue.length > 0) {
        const next = this.state.retryQueue[0];
        try {
          await this.api.resolve(next.itemId, next.choice, this.state.reviewer);
          this.state.reviewedCount += 1;
        } catch (err) {
          if (err instanceof NetworkError) {
            this.state.offline = true;
            this.notify();
            return; // still unreachable; keep the queue for the next retry
          }
          if (err instanceof ApiError && err.status === 409) {
            this.state.conflictCount += 1;
          } else {
            this.state.lastError = err instanceof Error ? err.message : String(err);
          }
        }
        this.state.retryQueue.shift();
        this.notify();
      }
      this.state.offline = false;
      if (this.state.phase === 'failed' || this.state.phase === 'done'
          || this.state.current === null) {
        await this.refreshQueue();
        await this.advance();
      } else {
        this.notify();
      }
    });
  }

  private async submit(itemId: string, choice: Choice): Promise<void> {
    await this.run(async () => {
      this.state.phase = 'submitting';
      this.state.lastError = null; // each action starts with a clean slate
      this.notify();
      try {
        await this.api.resolve(itemId, choice, this.state.reviewer);
        this.state.reviewedCount += 1;
        this.handled.add(itemId);
      } catch (err) {
        if (err instanceof NetworkError) {
          // Park the decision; the item is handled as far as this session
          // is concerned, the server will hear about it on retry.
          this.state.retryQueue.push({ itemId, choice });
          this.state.offline = true;
          this.handled.add(itemId);
        } else if (err instanceof ApiError && err.status === 409) {
          this.state.conflictCount += 1;
          this.handled.add(itemId);
          await this.refreshQueue();
        } else {
          this.state.lastError = err instanceof Error ? err.message : String(err);
          this.handled.add(itemId);
        }
      }
      await this.advance();
    });
  }

  private async refreshQueue(): Promise<void> {
    try {
      const items = await this.api.listPending();
      this.state.queue = items.map((i) => i.item_id);
    } catch (err) {
      if (!(err instanceof NetworkError)) throw err;
      this.state.offline = true; // keep the local queue; it is the best we have
    }
  }

  private async advance(): Promise<void> {
    this.state.detailsOpen = false;
    while (true) {
      const nextId = this.state.queue.find((id) => !this.handled.has(id));
      if (nextId === undefined) {
        this.state.current = null;
        this.state.phase = 'done';
        this.notify();
        await this.loadStats();
        return;
      }
      this.state.queue = this.state.queue.filter((id) => id !== nextId);
      try {
        const detail = await this.api.getItem(nextId);
        if (detail.status !== 'pending') {
          this.handled.add(nextId); // resolved elsewhere between list and fetch
          continue;
        }
        this.state.current = detail;
        this.state.phase = 'reviewing';
        this.notify();
        return;
      } catch (err) {
        if (err instanceof ApiError && err.status === 404) {
          this.handled.add(nextId);
          continue;
        }
        this.state.queue.unshift(nextId); // keep it for the retry
        this.fail(err);
        return;
      }
    }
  }

  private async loadStats(): Promise<void> {
    try {
      this.state.stats = await this.api.stats();
    } catch {
      this.state.stats = null; // the done screen just omits the numbers
    }
    this.notify();
  }

  private fail(err: unknown): void {
    this.state.offline = err instanceof NetworkError;
    this.state.lastError = err instanceof Error ? err.message : String(err);
    this.state.current = null;
    this.state.phase = 'failed';
    this.notify();
  }

  private notify(): void {
    const snapshot = this.state;
    for (const listener of this.listeners) listener(snapshot);
  }

  private async run(action: () => Promise<void>): Promise<void> {
    this.inFlight += 1;
    try {
      await action();
    } finally {
      this.inFlight -= 1;
      if (this.inFlight === 0) {
        const waiters = this.settleWaiters;
        this.settleWaiters = [];
        for (const w of waiters) w();
      }
    }
  }
}
