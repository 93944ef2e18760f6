/** Fixture loading plus a fetch stub that replays captured service
 * bodies byte-for-byte, so client tests exercise real wire payloads.
 */

import { readFileSync } from "node:fs";
import path from "node:path";
import { fileURLToPath } from "node:url";

import type { FetchLike } from "../src/api.js";
import type { QueryRequest } from "../src/types.js";

export const FIXTURES = path.join(path.dirname(fileURLToPath(import.meta.url)), "fixtures");

export function fixtureText(name: string): string {
  return readFileSync(path.join(FIXTURES, name), "utf8");
}

export function fixtureBytes(name: string): Uint8Array {
  return new Uint8Array(readFileSync(path.join(FIXTURES, name)));
}

export function fixtureJson<T>(name: string): T {
  return JSON.parse(fixtureText(name)) as T;
}

export interface FixtureCase {
  id: number;
  request: QueryRequest;
  body: string;
  png: string;
}

export interface FixtureIndex {
  width: number;
  height: number;
  views: number;
  K: number;
  cases: FixtureCase[];
  tau_sweep: {
    request: { name: string; view: number; top_n: number };
    steps: { tau_ac: number; body: string; area: number }[];
  };
}

export function loadIndex(): FixtureIndex {
  return fixtureJson<FixtureIndex>("index.json");
}

/** Canonical lookup key over the request fields that select a fixture. */
function requestKey(req: Partial<QueryRequest>): string {
  return JSON.stringify({
    name: req.name ?? null,
    embedding: req.embedding ?? null,
    view: req.view,
    tau_ac: req.tau_ac,
    top_n: req.top_n,
  });
}

function jsonResponse(text: string, status = 200): Response {
  return new Response(text, { status, headers: { "content-type": "application/json" } });
}

/** Serve captured bodies for GET /scene, /queries, /health and for the
 * POST /query requests recorded in the fixture index. Unknown queries
 * answer with the service's own error envelope shape.
 */
export function fetchFromFixtures(): FetchLike {
  const index = loadIndex();
  const bodies = new Map<string, string>();
  for (const c of index.cases) {
    bodies.set(requestKey(c.request), fixtureText(c.body));
  }
  for (const step of index.tau_sweep.steps) {
    bodies.set(requestKey({ ...index.tau_sweep.request, tau_ac: step.tau_ac }), fixtureText(step.body));
  }
  return async (input, init) => {
    const url = new URL(input, "http://fixtures");
    if (url.pathname === "/query" && init?.method === "POST") {
      const req = JSON.parse(String(init.body)) as QueryRequest;
      const body = bodies.get(requestKey(req));
      if (body === undefined) {
        return jsonResponse(
          JSON.stringify({ code: "unknown_query", message: `no fixture for ${requestKey(req)}` }),
          404,
        );
      }
      return jsonResponse(body);
    }
    if (url.pathname === "/scene") return jsonResponse(fixtureText("scene.json"));
    if (url.pathname === "/queries") return jsonResponse(fixtureText("queries.json"));
    if (url.pathname === "/health") return jsonResponse(fixtureText("health.json"));
    return jsonResponse(JSON.stringify({ code: "bad_request", message: `unhandled ${url.pathname}` }), 400);
  };
}
