/** Wire types for the gridfield HTTP API (JSON bodies). */

export interface HealthInfo {
  status: string;
  views: number;
  objects: number;
  backend: string;
}

/** One lattice cell as reported by GET /scene. */
export interface SceneObject {
  id: number;
  /** Low-dim cell center in (0,1)^3. */
  center: number[];
  /** (view, local mask index) pairs where this object appears. */
  entries: [number, number][];
}

export interface SceneInfo {
  width: number;
  height: number;
  views: number;
  K: number;
  side: number;
  embedding_dim: number;
  canonical: string[];
  objects: SceneObject[];
}

export interface SavedQueryInfo {
  view: number | null;
  dim: number;
}

export interface QueryListing {
  queries: Record<string, SavedQueryInfo>;
}

/** POST /query body; exactly one of embedding/name must be set. */
export interface QueryRequest {
  embedding?: number[];
  name?: string;
  view: number;
  tau_ac?: number;
  top_n?: number;
  aggregate?: "max" | "mean";
}

export interface QueryResponse {
  view: number;
  width: number;
  height: number;
  object_ids: number[];
  scores: number[];
  /** (x, y) of the minimum-distance pixel of the best object. */
  best_pixel: [number, number];
  area: number;
  /** Alternating (skip, run) counts over the row-major flat mask. */
  mask_rle: number[];
  from_cache: boolean;
  timings_ms: Record<string, number>;
}

export interface SaveQueryRequest {
  embedding?: number[];
  text?: string;
  view?: number | null;
}

export interface SaveQueryResponse {
  name: string;
  dim: number;
  view: number | null;
}

/** Error envelope used by every non-2xx JSON response. */
export interface ApiErrorBody {
  code: string;
  message: string;
}
