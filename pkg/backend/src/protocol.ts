/**
 * Length-prefixed JSON framing and request validation.
 *
 * One message per request/response: a 4-byte big-endian length followed by
 * UTF-8 JSON. Request kinds: hello, text_embed, image_embed_roi,
 * segment_boxes. Errors travel as {kind: "error", message}.
 */

import { createHash } from "node:crypto";
import { z } from "zod";

export const HEADER_SIZE = 4;
export const MAX_MESSAGE_BYTES = 64 * 1024 * 1024;

export function encodeMessage(body: string): Buffer {
  const payload = Buffer.from(body, "utf-8");
  if (payload.length > MAX_MESSAGE_BYTES) {
    throw new Error(`message of ${payload.length} bytes exceeds limit`);
  }
  const header = Buffer.alloc(HEADER_SIZE);
  header.writeUInt32BE(payload.length, 0);
  return Buffer.concat([header, payload]);
}

/** Incremental decoder: feed stream chunks, collect complete message bodies. */
export class FrameDecoder {
  private buffer: Buffer = Buffer.alloc(0);

  push(chunk: Buffer): string[] {
    this.buffer = Buffer.concat([this.buffer, chunk]);
    const messages: string[] = [];
    for (;;) {
      if (this.buffer.length < HEADER_SIZE) break;
      const length = this.buffer.readUInt32BE(0);
      if (length > MAX_MESSAGE_BYTES) {
        throw new Error(`incoming message of ${length} bytes exceeds limit`);
      }
      if (this.buffer.length < HEADER_SIZE + length) break;
      messages.push(this.buffer.subarray(HEADER_SIZE, HEADER_SIZE + length).toString("utf-8"));
      this.buffer = this.buffer.subarray(HEADER_SIZE + length);
    }
    return messages;
  }
}

const boxSchema = z.tuple([z.number(), z.number(), z.number(), z.number()]);

export const requestSchema = z.discriminatedUnion("kind", [
  z.object({ kind: z.literal("hello") }).strict(),
  z.object({ kind: z.literal("text_embed"), texts: z.array(z.string()) }).strict(),
  z
    .object({
      kind: z.literal("image_embed_roi"),
      image_ref: z.string(),
      boxes: z.array(boxSchema),
      context_pad: z.number().optional(),
    })
    .strict(),
  z
    .object({
      kind: z.literal("segment_boxes"),
      image_ref: z.string(),
      boxes: z.array(boxSchema),
    })
    .strict(),
]);

export type BackendRequest = z.infer<typeof requestSchema>;
export type Box = [number, number, number, number];

export interface SegmentationRecord {
  counts: number[];
  height: number;
  width: number;
  score: number;
}

/** JSON with recursively sorted object keys; numbers use JS shortest form. */
export function canonicalJson(value: unknown): string {
  if (Array.isArray(value)) {
    return `[${value.map(canonicalJson).join(",")}]`;
  }
  if (value !== null && typeof value === "object") {
    const entries = Object.entries(value as Record<string, unknown>)
      .filter(([, v]) => v !== undefined)
      .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0))
      .map(([k, v]) => `${JSON.stringify(k)}:${canonicalJson(v)}`);
    return `{${entries.join(",")}}`;
  }
  return JSON.stringify(value);
}

/** Stable lookup key for record/replay; computed server-side only. */
export function requestKey(request: unknown): string {
  return createHash("sha256").update(canonicalJson(request), "utf-8").digest("hex");
}

export function errorResponse(message: string): string {
  return JSON.stringify({ kind: "error", message });
}
