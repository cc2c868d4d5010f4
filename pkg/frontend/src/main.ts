import { ReviewApi } from './api.js';
import { mountApp } from './app.js';

const root = document.getElementById('app');
if (root) {
  let reviewer = 'anonymous';
  try {
    reviewer = window.localStorage.getItem('review-reviewer') ?? reviewer;
  } catch {
    // storage blocked; the default name is fine
  }
  const app = mountApp(root, new ReviewApi(), reviewer);
  app.session.subscribe((state) => {
    try {
      window.localStorage.setItem('review-reviewer', state.reviewer);
    } catch {
      // ignore
    }
  });
  void app.session.start();
}
