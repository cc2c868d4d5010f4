/**
 * Typed client for the review queue HTTP API.
 *
 * The transport is injectable so tests can run against an in-memory server.
 * Only the structural subset of Response that we use is required, which
 * keeps the mock free of any fetch polyfill.
 */

export interface Candidate {
  class_id: number;
  class_name: string;
  probability: number;
}

export interface QueueItemSummary {
  item_id: string;
  image_id: string;
  status: string;
  top_candidate: Candidate | null;
}

export interface Resolution {
  chosen_class_id: number | 'rejected_all';
  reviewer: string;
  resolved_at: string;
}

export interface ReviewItemDetail {
  item_id: string;
  image_id: string;
  image_url: string;
  status: string;
  candidates: Candidate[];
  document: string;
  argmax_image: number;
  argmax_text: number;
  resolution: Resolution | null;
}

export interface QueueStats {
  pending: number;
  resolved: number;
  agreement_rate: number | null;
}

export type Choice = number | 'rejected_all';

export interface HttpResponse {
  ok: boolean;
  status: number;
  json(): Promise<unknown>;
}

export type FetchFn = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<HttpResponse>;

/** Server answered with a non-2xx status. */
export class ApiError extends Error {
  constructor(public readonly status: number, message: string) {
    super(message);
    this.name = 'ApiError';
  }
}

/** The request never reached the server (offline, server down). */
export class NetworkError extends Error {
  constructor(message: string) {
    super(message);
    this.name = 'NetworkError';
  }
}

async function errorMessage(res: HttpResponse): Promise<string> {
  try {
    const body = (await res.json()) as { error?: unknown };
    if (body && typeof body.error === 'string') return body.error;
  } catch {
    // Non-JSON error body; fall through to the generic message.
  }
  return `request failed with status ${res.status}`;
}

export class ReviewApi {
  constructor(
    private readonly fetchFn: FetchFn = (url, init) => fetch(url, init),
    private readonly base = '',
  ) {}

  private async request(url: string, init?: Parameters<FetchFn>[1]): Promise<unknown> {
    let res: HttpResponse;
    try {
      res = await this.fetchFn(this.base + url, init);
    } catch (err) {
      throw new NetworkError(err instanceof Error ? err.message : String(err));
    }
    if (!res.ok) {
      throw new ApiError(res.status, await errorMessage(res));
    }
    return res.json();
  }

  async listPending(limit = 500): Promise<QueueItemSummary[]> {
    const body = (await this.request(
      `/api/queue?status=pending&limit=${limit}`,
    )) as { items: QueueItemSummary[] };
    return body.items;
  }

  async getItem(itemId: string): Promise<ReviewItemDetail> {
    return (await this.request(
      `/api/items/${encodeURIComponent(itemId)}`,
    )) as ReviewItemDetail;
  }

  async resolve(itemId: string, choice: Choice, reviewer: string): Promise<void> {
    await this.request(`/api/items/${encodeURIComponent(itemId)}/resolution`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ chosen_class_id: choice, reviewer }),
    });
  }

  async stats(): Promise<QueueStats> {
    return (await this.request('/api/stats')) as QueueStats;
  }

  imageUrl(detail: ReviewItemDetail): string {
    return this.base + detail.image_url;
  }
}
