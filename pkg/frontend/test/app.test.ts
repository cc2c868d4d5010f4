import { afterEach, describe, expect, it } from 'vitest';

import { ReviewApi } from '../src/api.js';
import { MountedApp, mountApp } from '../src/app.js';
import { MockReviewServer } from './mock_server.js';

let mounted: MountedApp | null = null;

function mount(server: MockReviewServer, reviewer = 'tess') {
  document.body.innerHTML = '<div id="app"></div>';
  const root = document.getElementById('app') as HTMLElement;
  mounted = mountApp(root, new ReviewApi(server.fetchFn), reviewer);
  return { root, app: mounted };
}

function key(k: string, target: EventTarget = window): void {
  target.dispatchEvent(new KeyboardEvent('keydown', { key: k, bubbles: true }));
}

afterEach(() => {
  mounted?.destroy();
  mounted = null;
});

describe('review card', () => {
  it('renders the candidates, the image, and the queue depth', async () => {
    const server = new MockReviewServer(3);
    const { root, app } = mount(server);
    await app.session.start();
    const main = root.querySelector('.main') as HTMLElement;
    expect(main.querySelectorAll('button[data-action=choose]')).toHaveLength(3);
    expect(main.textContent).toContain('none of these');
    expect(main.textContent).toContain('2 more');
    const img = main.querySelector('img') as HTMLImageElement;
    expect(img.getAttribute('src')).toBe('/images/item-000');
  });

  it('clicking a candidate resolves and moves on', async () => {
    const server = new MockReviewServer(2);
    const { root, app } = mount(server);
    await app.session.start();
    const second = root.querySelector('button[data-slot="2"]') as HTMLButtonElement;
    second.click();
    await app.session.settled();
    expect(server.resolvedBy('tess')).toHaveLength(1);
    expect(app.session.state.current?.item_id).toBe('item-001');
  });

  it('d toggles the disagreement details, s skips and closes them', async () => {
    const server = new MockReviewServer(2);
    const { root, app } = mount(server);
    await app.session.start();
    const main = root.querySelector('.main') as HTMLElement;
    expect(main.querySelector('.details')).toBeNull();
    key('d');
    expect(main.querySelector('.details')).not.toBeNull();
    expect(main.textContent).toContain('image branch');
    expect(main.textContent).toContain('ocr text for item-000');
    key('d');
    expect(main.querySelector('.details')).toBeNull();
    key('d');
    key('s');
    await app.session.settled();
    expect(app.session.state.current?.item_id).toBe('item-001');
    expect(main.querySelector('.details')).toBeNull();
  });
});

describe('input handling', () => {
  it('ignores shortcut keys typed into the reviewer field', async () => {
    const server = new MockReviewServer(1);
    const { root, app } = mount(server);
    await app.session.start();
    const input = root.querySelector('input[name=reviewer]') as HTMLInputElement;
    key('1', input);
    key('0', input);
    await app.session.settled();
    expect(server.resolvedCount()).toBe(0);
    expect(app.session.state.phase).toBe('reviewing');
  });

  it('ignores chords with ctrl or meta held', async () => {
    const server = new MockReviewServer(1);
    const { app } = mount(server);
    await app.session.start();
    window.dispatchEvent(new KeyboardEvent('keydown', { key: '1', ctrlKey: true }));
    window.dispatchEvent(new KeyboardEvent('keydown', { key: '1', metaKey: true }));
    await app.session.settled();
    expect(server.resolvedCount()).toBe(0);
  });

  it('picks up a reviewer rename for later submissions', async () => {
    const server = new MockReviewServer(2);
    const { root, app } = mount(server);
    await app.session.start();
    key('1');
    await app.session.settled();
    const input = root.querySelector('input[name=reviewer]') as HTMLInputElement;
    input.value = 'vera';
    input.dispatchEvent(new Event('change', { bubbles: true }));
    key('1');
    await app.session.settled();
    expect(server.resolvedBy('tess')).toHaveLength(1);
    expect(server.resolvedBy('vera')).toHaveLength(1);
  });

  it('stops listening after destroy', async () => {
    const server = new MockReviewServer(2);
    const { app } = mount(server);
    await app.session.start();
    app.destroy();
    key('1');
    await app.session.settled();
    expect(server.resolvedCount()).toBe(0);
  });
});

describe('failure banner', () => {
  it('offers retry from the failed screen and recovers on click', async () => {
    const server = new MockReviewServer(2);
    server.offline = true;
    const { root, app } = mount(server);
    await app.session.start();
    expect(app.session.state.phase).toBe('failed');
    const main = root.querySelector('.main') as HTMLElement;
    expect(main.textContent).toContain('cannot reach the queue');

    server.offline = false;
    (main.querySelector('button[data-action=retry]') as HTMLButtonElement).click();
    await app.session.settled();
    expect(app.session.state.phase).toBe('reviewing');
    expect(app.session.state.current?.item_id).toBe('item-000');
  });
});
