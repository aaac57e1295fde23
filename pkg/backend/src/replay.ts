/**
 * Record/replay proxy: a recorded session fixture is a JSONL file whose
 * first line holds session metadata and whose remaining lines pair a
 * canonical request key with the exact serialized response. Replay
 * answers byte-identically and never touches a model.
 */

import { appendFileSync, readFileSync, writeFileSync } from "node:fs";

import type { ModelProvider } from "./provider.js";
import { respond } from "./provider.js";
import { errorResponse, requestKey } from "./protocol.js";

interface FixtureMeta {
  kind: "meta";
  dim: number;
  backend_id: string;
}

export class Recorder {
  private seen = new Set<string>();

  constructor(
    private readonly path: string,
    private readonly provider: ModelProvider,
  ) {
    const meta: FixtureMeta = {
      kind: "meta",
      dim: provider.dim,
      backend_id: `replay:${provider.backendId}`,
    };
    writeFileSync(this.path, JSON.stringify(meta) + "\n");
  }

  handle(request: { kind: string }): string {
    const response = respond(this.provider, request as Parameters<typeof respond>[1]);
    if (request.kind !== "hello") {
      const key = requestKey(request);
      if (!this.seen.has(key)) {
        this.seen.add(key);
        appendFileSync(this.path, JSON.stringify({ key, request, response }) + "\n");
      }
    }
    return response;
  }
}

export class ReplayStore {
  private constructor(
    readonly dim: number,
    readonly backendId: string,
    private readonly responses: Map<string, string>,
  ) {}

  static load(path: string): ReplayStore {
    const lines = readFileSync(path, "utf-8").split("\n").filter((l) => l.trim());
    if (lines.length === 0) {
      throw new Error(`empty replay fixture: ${path}`);
    }
    const meta = JSON.parse(lines[0]) as FixtureMeta;
    if (meta.kind !== "meta" || typeof meta.dim !== "number") {
      throw new Error(`replay fixture missing meta header: ${path}`);
    }
    const responses = new Map<string, string>();
    for (const line of lines.slice(1)) {
      const record = JSON.parse(line) as { key: string; response: string };
      responses.set(record.key, record.response);
    }
    return new ReplayStore(meta.dim, meta.backend_id, responses);
  }

  get size(): number {
    return this.responses.size;
  }

  entries(): IterableIterator<[string, string]> {
    return this.responses.entries();
  }

  handle(request: { kind: string }): string {
    if (request.kind === "hello") {
      return JSON.stringify({ kind: "hello", dim: this.dim, backend_id: this.backendId });
    }
    const stored = this.responses.get(requestKey(request));
    if (stored === undefined) {
      return errorResponse("no recorded response for this request");
    }
    return stored;
  }
}
