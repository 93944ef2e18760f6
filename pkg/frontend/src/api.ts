/** Thin typed client for the gridfield service.
 *
 * The client only transports and decodes; it never recomputes scores,
 * distances, or masks. Every non-2xx response becomes an ApiError
 * carrying the server's stable error code; network failures use the
 * reserved code "unreachable" so the UI can offer a retry.
 */

import type {
  HealthInfo,
  QueryListing,
  QueryRequest,
  QueryResponse,
  SaveQueryRequest,
  SaveQueryResponse,
  SceneInfo,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  private readonly baseUrl: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl: string, fetchImpl?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.fetchImpl = fetchImpl ?? ((input, init) => fetch(input, init));
  }

  health(): Promise<HealthInfo> {
    return this.requestJson<HealthInfo>("/health");
  }

  scene(): Promise<SceneInfo> {
    return this.requestJson<SceneInfo>("/scene");
  }

  listQueries(): Promise<QueryListing> {
    return this.requestJson<QueryListing>("/queries");
  }

  runQuery(req: QueryRequest): Promise<QueryResponse> {
    return this.requestJson<QueryResponse>("/query", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(req),
    });
  }

  saveQuery(name: string, req: SaveQueryRequest): Promise<SaveQueryResponse> {
    return this.requestJson<SaveQueryResponse>(`/queries/${encodeURIComponent(name)}`, {
      method: "PUT",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(req),
    });
  }

  /** URL of the rendered feature map PNG for one view. */
  renderUrl(view: number): string {
    return `${this.baseUrl}/render?view=${view}`;
  }

  private async requestJson<T>(path: string, init?: RequestInit): Promise<T> {
    let resp: Response;
    try {
      resp = await this.fetchImpl(this.baseUrl + path, init);
    } catch (e) {
      throw new ApiError(0, "unreachable", `service unreachable: ${String(e)}`);
    }
    if (!resp.ok) {
      let code = `http_${resp.status}`;
      let message = resp.statusText || `HTTP ${resp.status}`;
      try {
        const body = (await resp.json()) as { code?: string; message?: string };
        if (body && typeof body.code === "string") {
          code = body.code;
          message = body.message ?? message;
        }
      } catch {
        // non-JSON error body; keep the HTTP fallback code
      }
      throw new ApiError(resp.status, code, message);
    }
    return (await resp.json()) as T;
  }
}
