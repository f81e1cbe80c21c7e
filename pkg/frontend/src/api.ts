/** Typed client for the rating service HTTP+JSON API. */

export const SCHEMA_VERSION = 1;

export interface SessionView {
  schema_version: number;
  session_id: string;
  observer_id: string;
  image_set: string;
  status: string;
  total: number;
  cursor: number;
}

export interface NextItem {
  schema_version: number;
  session_id: string;
  image_id: string;
  index: number;
  total: number;
  history: number[];
}

export interface RatingAck {
  schema_version: number;
  session_id: string;
  image_id: string;
  score: number;
  rated: number;
  total: number;
  status: string;
}

/** Error carrying the HTTP status so callers can branch on conflict vs gone. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }
}

export type FetchLike = (
  input: string,
  init?: RequestInit,
) => Promise<Response>;

async function decode<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = (await response.json()) as { detail?: string };
      if (body.detail) detail = body.detail;
    } catch {
      /* non-JSON error body; keep the status text */
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

export class RatingApi {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.fetchFn(this.baseUrl + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    }).then((r) => decode<T>(r));
  }

  createSession(
    observerId: string,
    imageSet: string,
    shuffleSeed = 0,
  ): Promise<SessionView> {
    return this.post<SessionView>("/sessions", {
      observer_id: observerId,
      image_set: imageSet,
      shuffle_seed: shuffleSeed,
    });
  }

  nextItem(sessionId: string): Promise<NextItem> {
    return this.fetchFn(
      `${this.baseUrl}/sessions/${encodeURIComponent(sessionId)}/next`,
    ).then((r) => decode<NextItem>(r));
  }

  submitRating(
    sessionId: string,
    imageId: string,
    rating: { score?: number; label?: number },
  ): Promise<RatingAck> {
    return this.post<RatingAck>(
      `/sessions/${encodeURIComponent(sessionId)}/ratings`,
      {
        image_id: imageId,
        score: rating.score ?? null,
        label: rating.label ?? null,
        timestamp: null,
      },
    );
  }

  withdraw(sessionId: string): Promise<SessionView> {
    return this.post<SessionView>(
      `/sessions/${encodeURIComponent(sessionId)}/withdraw`,
      {},
    );
  }

  exportCsv(imageSet: string): Promise<string> {
    return this.fetchFn(
      `${this.baseUrl}/export/${encodeURIComponent(imageSet)}.csv`,
    ).then(async (r) => {
      if (!r.ok) throw new ApiError(r.status, r.statusText);
      return r.text();
    });
  }

  /** URL the image element should load; the server sends the bytes verbatim. */
  imageUrl(imageId: string): string {
    return `${this.baseUrl}/images/${encodeURIComponent(imageId)}`;
  }
}
