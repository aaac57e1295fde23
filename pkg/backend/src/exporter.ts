/**
 * Detection exporters: dump per-image top-N detections in the engine's
 * ingest format. The synthetic detector jitters ground-truth boxes and
 * invents background proposals; a real detector adapter would produce the
 * same record shapes from model outputs.
 *
 * Closed-set semantics: proposals on known-class objects that clear the
 * score threshold are classified (KN records, class + score); everything
 * else — novel objects, low-scoring proposals, pure background — exports
 * as classless BG records. The open-set exporter labels everything.
 */

import { writeFileSync } from "node:fs";

import { mulberry32, seedFrom } from "./embedding.js";
import type { Box } from "./protocol.js";
import type { GroundTruth, VocabEntry } from "./provider.js";

export interface ExportOptions {
  gt: GroundTruth;
  vocab: VocabEntry[];
  budget: number;
  scoreThreshold: number;
  seed: number;
}

interface Candidate {
  box: Box;
  internalScore: number;
  classId: number | null; // null -> background proposal
}

function round1(v: number): number {
  return Math.round(v * 10) / 10;
}

function round4(v: number): number {
  return Math.round(v * 10000) / 10000;
}

function jitterBox(box: Box, width: number, height: number, amount: number, rand: () => number): Box {
  const out: number[] = [];
  for (let k = 0; k < 4; k++) {
    const limit = k % 2 === 0 ? width : height;
    out.push(round1(Math.min(Math.max(box[k] + (rand() * 2 - 1) * amount, 0), limit)));
  }
  if (out[2] <= out[0]) out[2] = Math.min(out[0] + 1, width);
  if (out[3] <= out[1]) out[3] = Math.min(out[1] + 1, height);
  return out as Box;
}

function randomBox(width: number, height: number, rand: () => number): Box {
  const w = 8 + rand() * width * 0.25;
  const h = 8 + rand() * height * 0.25;
  const x = rand() * (width - w);
  const y = rand() * (height - h);
  return [round1(x), round1(y), round1(x + w), round1(y + h)];
}

function detLine(imageId: number, c: Candidate, withClass: boolean): string {
  const record: Record<string, unknown> = { image_id: imageId, box: c.box };
  if (withClass) {
    record.score = round4(Math.min(Math.max(c.internalScore, 0.01), 0.99));
    record.class_id = c.classId;
  }
  return JSON.stringify(record);
}

function candidatesFor(
  imageId: number,
  options: ExportOptions,
  tag: string,
  openSet: boolean,
): Candidate[] {
  const image = options.gt.images.find((i) => i.id === imageId)!;
  const known = new Set(options.vocab.filter((v) => v.known).map((v) => v.id));
  const rand = mulberry32(seedFrom(`${options.seed}:${tag}:${imageId}`));
  const candidates: Candidate[] = [];
  for (const ann of options.gt.annotations.filter((a) => a.image_id === imageId)) {
    const score = 0.35 + rand() * 0.6;
    const box = jitterBox(ann.bbox, image.width, image.height, openSet ? 8 : 12, rand);
    if (openSet) {
      candidates.push({ box, internalScore: score, classId: ann.category_id });
    } else if (known.has(ann.category_id) && score >= options.scoreThreshold) {
      candidates.push({ box, internalScore: score, classId: ann.category_id });
    } else {
      candidates.push({ box, internalScore: score * 0.8, classId: null });
    }
  }
  const extras = Math.max(0, Math.min(options.budget - candidates.length, 6));
  for (let k = 0; k < extras; k++) {
    const box = randomBox(image.width, image.height, rand);
    if (openSet) {
      const classId = Math.floor(rand() * options.vocab.length);
      candidates.push({ box, internalScore: 0.05 + rand() * 0.3, classId });
    } else {
      candidates.push({ box, internalScore: 0.05 + rand() * 0.3, classId: null });
    }
  }
  candidates.sort((a, b) => b.internalScore - a.internalScore);
  return candidates.slice(0, options.budget);
}

/** Closed-set export: returns {kn, bg} JSONL contents. */
export function exportClosedSet(options: ExportOptions): { kn: string; bg: string } {
  const knLines: string[] = [];
  const bgLines: string[] = [];
  for (const image of [...options.gt.images].sort((a, b) => a.id - b.id)) {
    for (const c of candidatesFor(image.id, options, "closed", false)) {
      if (c.classId === null) {
        bgLines.push(detLine(image.id, c, false));
      } else {
        knLines.push(detLine(image.id, c, true));
      }
    }
  }
  return { kn: knLines.join("\n") + "\n", bg: bgLines.join("\n") + "\n" };
}

/** Open-set export: every record labeled, top budget by score. */
export function exportOpenSet(options: ExportOptions): string {
  const lines: string[] = [];
  for (const image of [...options.gt.images].sort((a, b) => a.id - b.id)) {
    for (const c of candidatesFor(image.id, options, "open", true)) {
      lines.push(detLine(image.id, c, true));
    }
  }
  return lines.join("\n") + "\n";
}

export function writeExports(
  detector: "maskrcnn" | "gdino",
  options: ExportOptions,
  outPath: string,
  outBgPath?: string,
): void {
  if (detector === "maskrcnn") {
    const { kn, bg } = exportClosedSet(options);
    writeFileSync(outPath, kn);
    if (!outBgPath) {
      throw new Error("maskrcnn export needs --out-bg for the background records");
    }
    writeFileSync(outBgPath, bg);
  } else {
    writeFileSync(outPath, exportOpenSet(options));
  }
}
