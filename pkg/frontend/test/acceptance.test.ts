/**
 * End-to-end review session driven only through the keyboard, against the
 * in-memory server. Covers the full happy path plus the two failure modes
 * the UI has to absorb: a rival resolving an item first (409) and the page
 * going away mid-session (reload must lose nothing the server accepted).
 */

import { describe, expect, it } from 'vitest';

import { Choice, ReviewApi } from '../src/api.js';
import { MountedApp, mountApp } from '../src/app.js';
import { MockReviewServer } from './mock_server.js';

const KEYS = ['1', '2', '3', '0'] as const;

function pressKey(key: string): void {
  window.dispatchEvent(new KeyboardEvent('keydown', { key }));
}

/** Press a key for the current item and remember what that key meant. */
function recordAndPress(app: MountedApp, key: string, expected: Map<string, Choice>): void {
  const current = app.session.state.current;
  if (current === null) throw new Error('no current item to press a key for');
  const choice: Choice =
    key === '0' ? 'rejected_all' : current.candidates[Number(key) - 1].class_id;
  expected.set(current.item_id, choice);
  pressKey(key);
}

function mount(server: MockReviewServer, reviewer: string) {
  document.body.innerHTML = '<div id="app"></div>';
  const root = document.getElementById('app') as HTMLElement;
  const app = mountApp(root, new ReviewApi(server.fetchFn), reviewer);
  return { root, app };
}

describe('keyboard-only review session', () => {
  it('clears a 25-item queue, surviving a mid-session reload and a stolen item', async () => {
    const server = new MockReviewServer(25);
    const expected = new Map<string, Choice>();
    let press = 0;

    // First visit: work through ten items, then the tab goes away.
    let { app } = mount(server, 'keys-only');
    await app.session.start();
    for (let i = 0; i < 10; i++) {
      expect(app.session.state.phase).toBe('reviewing');
      recordAndPress(app, KEYS[press++ % KEYS.length], expected);
      await app.session.settled();
    }
    expect(app.session.state.reviewedCount).toBe(10);
    expect(server.resolvedCount()).toBe(10);
    app.destroy();

    // Reload: fresh mount against the same server. Every decision that
    // reached the server is still there; the counter is session-local.
    let root: HTMLElement;
    ({ root, app } = mount(server, 'keys-only'));
    await app.session.start();
    expect(server.resolvedCount()).toBe(10);
    expect(app.session.state.phase).toBe('reviewing');
    expect(app.session.state.reviewedCount).toBe(0);

    // Three more, then a rival wins the race on the item on screen.
    for (let i = 0; i < 3; i++) {
      recordAndPress(app, KEYS[press++ % KEYS.length], expected);
      await app.session.settled();
    }
    const stolen = app.session.state.current!.item_id;
    server.resolveOutOfBand(stolen);
    pressKey(KEYS[press++ % KEYS.length]);
    await app.session.settled();
    expect(app.session.state.conflictCount).toBe(1);
    expect(app.session.state.current?.item_id).not.toBe(stolen);
    expect(server.items.get(stolen)!.resolution?.reviewer).toBe('rival');

    // Clear the remainder.
    let guard = 0;
    while (app.session.state.phase === 'reviewing' && guard++ < 40) {
      recordAndPress(app, KEYS[press++ % KEYS.length], expected);
      await app.session.settled();
    }

    expect(app.session.state.phase).toBe('done');
    expect(press).toBe(25);
    expect(server.pendingCount()).toBe(0);
    expect(server.resolvedCount()).toBe(25);
    expect(app.session.state.reviewedCount).toBe(14);
    expect(app.session.state.stats).toEqual({
      pending: 0,
      resolved: 25,
      agreement_rate: expect.any(Number),
    });

    // Every keypress landed as the resolution it promised.
    expect(expected.size).toBe(24);
    for (const [itemId, choice] of expected) {
      const item = server.items.get(itemId)!;
      expect(item.resolution?.chosen_class_id).toBe(choice);
      expect(item.resolution?.reviewer).toBe('keys-only');
    }

    const main = root.querySelector('.main') as HTMLElement;
    expect(main.textContent).toContain('queue clear');
    expect(main.textContent).toContain('14 item(s)');
    expect(main.textContent).toContain('1 taken by someone else');
    expect(main.textContent).toContain('25 resolved');
  });

  it('parks decisions while offline and resumes after r', async () => {
    const server = new MockReviewServer(5);
    const { root, app } = mount(server, 'keys-only');
    await app.session.start();

    server.offline = true;
    pressKey('1');
    await app.session.settled();
    expect(app.session.state.retryQueue).toHaveLength(1);
    expect(app.session.state.phase).toBe('failed');
    expect(server.resolvedCount()).toBe(0);
    const banner = root.querySelector('.banner') as HTMLElement;
    expect(banner.textContent).toContain('1 decision(s) queued');

    // Dead keys while there is nothing on screen.
    const requestsBefore = server.requestCount;
    pressKey('1');
    pressKey('0');
    await app.session.settled();
    expect(server.requestCount).toBe(requestsBefore);
    expect(app.session.state.retryQueue).toHaveLength(1);

    server.offline = false;
    pressKey('r');
    await app.session.settled();
    expect(app.session.state.offline).toBe(false);
    expect(app.session.state.retryQueue).toHaveLength(0);
    expect(server.resolvedCount()).toBe(1);
    expect(app.session.state.phase).toBe('reviewing');
    expect(banner.textContent).toBe('');

    let guard = 0;
    while (app.session.state.phase === 'reviewing' && guard++ < 10) {
      pressKey('1');
      await app.session.settled();
    }
    expect(app.session.state.phase).toBe('done');
    expect(server.resolvedCount()).toBe(5);
    const ours = server.resolvedBy('keys-only');
    expect(ours).toHaveLength(5);
    for (const item of ours) {
      expect(item.resolution?.chosen_class_id).toBe(item.top3[0][0]);
    }
  });
});
