/**
 * DOM layer: renders the session state and translates clicks and keys into
 * session actions. No framework; one delegated click listener plus a window
 * keydown listener, torn down by destroy().
 */

import { ReviewApi, ReviewItemDetail } from './api.js';
import { ReviewSession, SessionState } from './store.js';

function esc(s: string): string {
  return s
    .replaceAll('&', '&amp;')
    .replaceAll('<', '&lt;')
    .replaceAll('>', '&gt;')
    .replaceAll('"', '&quot;');
}

function pct(p: number): string {
  return `${(100 * p).toFixed(1)}%`;
}

function classLabel(detail: ReviewItemDetail, classId: number): string {
  const match = detail.candidates.find((c) => c.class_id === classId);
  return match ? match.class_name : `class #${classId}`;
}

function candidateRows(detail: ReviewItemDetail): string {
  const rows = detail.candidates.map((c, i) => `
    <button class="candidate" data-action="choose" data-slot="${i + 1}">
      <kbd>${i + 1}</kbd>
      <span class="name">${esc(c.class_name)}</span>
      <span class="prob">${pct(c.probability)}</span>
      <span class="bar" style="width:${pct(c.probability)}"></span>
    </button>`);
  rows.push(`
    <button class="candidate reject" data-action="reject">
      <kbd>0</kbd>
      <span class="name">none of these</span>
    </button>`);
  return rows.join('');
}

function detailsPanel(detail: ReviewItemDetail): string {
  // The item is queued precisely because the branches disagreed; show what
  // each one wanted plus the OCR text the text branch saw.
  return `
    <div class="details">
      <dl>
        <dt>image branch</dt><dd>${esc(classLabel(detail, detail.argmax_image))}</dd>
        <dt>text branch</dt><dd>${esc(classLabel(detail, detail.argmax_text))}</dd>
      </dl>
      <p class="document">${esc(detail.document || '(no text extracted)')}</p>
    </div>`;
}

function reviewCard(api: ReviewApi, state: SessionState): string {
  const detail = state.current as ReviewItemDetail;
  return `
    <div class="card">
      <div class="imagebox">
        <img src="${esc(api.imageUrl(detail))}" alt="promotion crop ${esc(detail.image_id)}">
      </div>
      <div class="side">
        <div class="itemid">${esc(detail.item_id)} <span class="left">${state.queue.length} more</span></div>
        <div class="candidates">${candidateRows(detail)}</div>
        <div class="tools">
          <button data-action="details">${state.detailsOpen ? 'hide' : 'why flagged?'} <kbd>d</kbd></button>
          <button data-action="skip">skip <kbd>s</kbd></button>
        </div>
        ${state.detailsOpen ? detailsPanel(detail) : ''}
      </div>
    </div>`;
}

function doneView(state: SessionState): string {
  const stats = state.stats;
  const unsynced = state.retryQueue.length;
  return `
    <div class="done">
      <h2>queue clear</h2>
      <p>you resolved ${state.reviewedCount} item(s)` +
      `${state.conflictCount ? `, ${state.conflictCount} taken by someone else` : ''}.</p>
      ${stats ? `<p>server totals: ${stats.pending} pending, ${stats.resolved} resolved` +
        `${stats.agreement_rate !== null
          ? `, ${pct(stats.agreement_rate)} agree with the model`
          : ''}.</p>` : ''}
      ${unsynced ? `<p class="warn">${unsynced} decision(s) not yet synced.</p>` : ''}
    </div>`;
}

function render(root: HTMLElement, api: ReviewApi, state: SessionState): void {
  const counts = root.querySelector('.counts') as HTMLElement;
  counts.textContent = `${state.reviewedCount} reviewed`;

  const banner = root.querySelector('.banner') as HTMLElement;
  if (state.offline || state.retryQueue.length > 0) {
    banner.innerHTML = `
      <span>offline: ${state.retryQueue.length} decision(s) queued</span>
      <button data-action="retry">retry <kbd>r</kbd></button>`;
    banner.className = 'banner offline';
  } else if (state.lastError && state.phase !== 'failed') {
    banner.innerHTML = `<span>${esc(state.lastError)}</span>`;
    banner.className = 'banner error';
  } else {
    banner.innerHTML = '';
    banner.className = 'banner';
  }

  const main = root.querySelector('.main') as HTMLElement;
  switch (state.phase) {
    case 'idle':
    case 'loading':
      main.innerHTML = '<p class="status">loading queue…</p>';
      break;
    case 'failed':
      main.innerHTML = `
        <p class="status">cannot reach the queue: ${esc(state.lastError ?? 'unknown error')}</p>
        <button data-action="retry">retry <kbd>r</kbd></button>`;
      break;
    case 'done':
      main.innerHTML = doneView(state);
      break;
    case 'reviewing':
    case 'submitting':
      main.innerHTML = reviewCard(api, state);
      break;
  }
}

export interface MountedApp {
  session: ReviewSession;
  destroy(): void;
}

export function mountApp(root: HTMLElement, api: ReviewApi, reviewer = 'anonymous'): MountedApp {
  const session = new ReviewSession(api, reviewer);

  root.innerHTML = `
    <header>
      <h1>review queue</h1>
      <span class="counts"></span>
      <label class="who">reviewer
        <input type="text" name="reviewer" value="${esc(reviewer)}">
      </label>
    </header>
    <div class="banner"></div>
    <div class="main"></div>`;

  const input = root.querySelector('input[name=reviewer]') as HTMLInputElement;
  input.addEventListener('change', () => session.setReviewer(input.value));

  const onClick = (ev: Event) => {
    const target = (ev.target as HTMLElement).closest('[data-action]');
    if (!(target instanceof HTMLElement)) return;
    switch (target.dataset.action) {
      case 'choose':
        void session.choose(Number(target.dataset.slot));
        break;
      case 'reject':
        void session.rejectAll();
        break;
      case 'details':
        session.toggleDetails();
        break;
      case 'skip':
        void session.skip();
        break;
      case 'retry':
        void session.retryNow();
        break;
    }
  };
  root.addEventListener('click', onClick);

  const onKeydown = (ev: KeyboardEvent) => {
    const target = ev.target;
    if (
      target instanceof HTMLInputElement ||
      target instanceof HTMLTextAreaElement ||
      target instanceof HTMLSelectElement
    ) {
      return;
    }
    if (ev.ctrlKey || ev.metaKey || ev.altKey) return;
    switch (ev.key) {
      case '1':
      case '2':
      case '3':
        ev.preventDefault();
        void session.choose(Number(ev.key));
        break;
      case '0':
        ev.preventDefault();
        void session.rejectAll();
        break;
      case 'd':
        ev.preventDefault();
        session.toggleDetails();
        break;
      case 's':
        ev.preventDefault();
        void session.skip();
        break;
      case 'r':
        ev.preventDefault();
        void session.retryNow();
        break;
    }
  };
  window.addEventListener('keydown', onKeydown);

  const unsubscribe = session.subscribe((state) => render(root, api, state));

  return {
    session,
    destroy() {
      window.removeEventListener('keydown', onKeydown);
      root.removeEventListener('click', onClick);
      unsubscribe();
      root.innerHTML = '';
    },
  };
}
