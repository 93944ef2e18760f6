/** Viewer session state: current view, active query, overlay settings,
 * and a bounded history of results for side-by-side comparison.
 *
 * The session is a pure client of the service: every mask it exposes is
 * the decoded server payload, untouched. One query may be in flight at
 * a time; a newer submission supersedes the pending one, whose result
 * (or error) is then dropped instead of reaching the UI.
 */

import { ApiClient } from "./api.js";
import { decodeMaskRle } from "./rle.js";
import type { QueryRequest, QueryResponse, SavedQueryInfo, SceneInfo } from "./types.js";

export const MAX_HISTORY = 8;

export type ActiveQuery = { name: string } | { embedding: number[] };

export interface OverlaySettings {
  opacity: number;
  heatmap: boolean;
}

export interface SessionResult {
  request: QueryRequest;
  response: QueryResponse;
  /** Decoded binary mask, row-major, one byte per pixel. */
  mask: Uint8Array;
}

export class ViewerSession {
  scene: SceneInfo | null = null;
  savedQueries: Record<string, SavedQueryInfo> = {};
  view = 0;
  tauAc = 5.0;
  topN = 1;
  aggregate: "max" | "mean" = "max";
  overlay: OverlaySettings = { opacity: 0.5, heatmap: false };
  /** Newest first, capped at MAX_HISTORY. */
  readonly history: SessionResult[] = [];

  private activeQuery: ActiveQuery | null = null;
  private seq = 0;

  constructor(private readonly client: ApiClient) {}

  /** Fetch scene info and the saved-query palette. */
  async load(): Promise<SceneInfo> {
    const scene = await this.client.scene();
    const listing = await this.client.listQueries();
    this.scene = scene;
    this.savedQueries = listing.queries;
    if (this.view >= scene.views) this.view = 0;
    return scene;
  }

  get latest(): SessionResult | null {
    return this.history[0] ?? null;
  }

  setView(view: number): void {
    if (!this.scene) throw new Error("load() the scene before selecting a view");
    if (!Number.isInteger(view) || view < 0 || view >= this.scene.views) {
      throw new Error(`view ${view} not in 0..${this.scene.views - 1}`);
    }
    this.view = view;
  }

  setOpacity(opacity: number): void {
    if (!(opacity >= 0 && opacity <= 1)) {
      throw new Error("opacity must lie in [0, 1]");
    }
    this.overlay.opacity = opacity;
  }

  toggleHeatmap(): boolean {
    this.overlay.heatmap = !this.overlay.heatmap;
    return this.overlay.heatmap;
  }

  runNamedQuery(name: string): Promise<SessionResult | null> {
    this.activeQuery = { name };
    return this.issue();
  }

  runEmbeddingQuery(embedding: number[]): Promise<SessionResult | null> {
    this.activeQuery = { embedding };
    return this.issue();
  }

  /** Slider behavior: changing tau re-issues the active query. */
  setTauAc(tauAc: number): Promise<SessionResult | null> {
    if (!(tauAc > 0)) {
      return Promise.reject(new Error("tau_ac must be positive"));
    }
    this.tauAc = tauAc;
    return this.activeQuery ? this.issue() : Promise.resolve(null);
  }

  setTopN(topN: number): Promise<SessionResult | null> {
    if (!Number.isInteger(topN) || topN < 1) {
      return Promise.reject(new Error("top_n must be a positive integer"));
    }
    this.topN = topN;
    return this.activeQuery ? this.issue() : Promise.resolve(null);
  }

  private async issue(): Promise<SessionResult | null> {
    if (!this.scene) throw new Error("load() the scene before querying");
    const ticket = ++this.seq;
    const request: QueryRequest = {
      ...this.activeQuery!,
      view: this.view,
      tau_ac: this.tauAc,
      top_n: this.topN,
      aggregate: this.aggregate,
    };
    let response: QueryResponse;
    try {
      response = await this.client.runQuery(request);
    } catch (e) {
      if (ticket !== this.seq) return null; // superseded; drop the stale error
      throw e;
    }
    if (ticket !== this.seq) return null; // superseded; drop the stale result
    const mask = decodeMaskRle(response.mask_rle, response.height, response.width);
    const result: SessionResult = { request, response, mask };
    this.history.unshift(result);
    if (this.history.length > MAX_HISTORY) this.history.pop();
    return result;
  }
}
