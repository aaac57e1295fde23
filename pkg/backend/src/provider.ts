/**
 * Model providers behind the wire protocol.
 *
 * SyntheticProvider stands in for the real text/image encoders and the
 * box-prompted segmenter: text prompts resolve to per-class anchor
 * directions through the template x synonym table, ROI embeddings follow
 * the best-overlapping ground-truth box, and segmentations snap prompts
 * to that box. Real encoders plug in by implementing ModelProvider.
 */

import { readFileSync } from "node:fs";

import { addScaled, encodeEmbedding, hashUnit, normalized32, seedFrom, mulberry32 } from "./embedding.js";
import type { Box, SegmentationRecord } from "./protocol.js";
import { emptyMaskRle, rectMaskRle } from "./rle.js";

export interface ModelProvider {
  readonly dim: number;
  readonly backendId: string;
  textEmbed(texts: string[]): Float32Array[];
  imageEmbedRoi(imageRef: string, boxes: Box[], contextPad: number): Float32Array[];
  segmentBoxes(imageRef: string, boxes: Box[]): SegmentationRecord[];
}

export interface VocabEntry {
  id: number;
  name: string;
  synonyms: string[];
  known: boolean;
}

export interface GtImage {
  id: number;
  width: number;
  height: number;
  file_name?: string;
}

export interface GtAnnotation {
  image_id: number;
  bbox: Box;
  category_id: number;
}

export interface GroundTruth {
  images: GtImage[];
  annotations: GtAnnotation[];
}

export function loadVocab(path: string): VocabEntry[] {
  const doc = JSON.parse(readFileSync(path, "utf-8"));
  return (doc.classes as VocabEntry[]).map((c) => ({
    id: c.id,
    name: c.name,
    synonyms: c.synonyms ?? [c.name],
    known: c.known,
  }));
}

export function loadTemplates(path: string): string[] {
  const doc = JSON.parse(readFileSync(path, "utf-8"));
  return doc.templates as string[];
}

export function loadGroundTruth(path: string): GroundTruth {
  const doc = JSON.parse(readFileSync(path, "utf-8"));
  return { images: doc.images, annotations: doc.annotations };
}

export function iou(a: Box, b: Box): number {
  const iw = Math.min(a[2], b[2]) - Math.max(a[0], b[0]);
  const ih = Math.min(a[3], b[3]) - Math.max(a[1], b[1]);
  const inter = iw > 0 && ih > 0 ? iw * ih : 0;
  const areaA = (a[2] - a[0]) * (a[3] - a[1]);
  const areaB = (b[2] - b[0]) * (b[3] - b[1]);
  const union = areaA + areaB - inter;
  return union > 0 ? inter / union : 0;
}

const MATCH_IOU = 0.25;

export interface SyntheticOptions {
  vocab: VocabEntry[];
  templates: string[];
  gt: GroundTruth;
  dim?: number;
  seed?: number;
}

export class SyntheticProvider implements ModelProvider {
  readonly dim: number;
  readonly backendId: string;
  private readonly seed: number;
  private readonly anchors = new Map<number, Float64Array>();
  private readonly promptToClass = new Map<string, number>();
  private readonly imagesByRef = new Map<string, GtImage>();
  private readonly annotationsByImage = new Map<number, GtAnnotation[]>();

  constructor(options: SyntheticOptions) {
    this.dim = options.dim ?? 64;
    this.seed = options.seed ?? 0;
    this.backendId = `synthetic:dim=${this.dim}:seed=${this.seed}`;
    for (const entry of options.vocab) {
      this.anchors.set(entry.id, hashUnit(`${this.seed}:anchor:${entry.name}`, this.dim));
      for (const synonym of entry.synonyms) {
        for (const template of options.templates) {
          const prompt = template.replace("[CLASS]", synonym);
          if (!this.promptToClass.has(prompt)) {
            this.promptToClass.set(prompt, entry.id);
          }
        }
      }
    }
    for (const image of options.gt.images) {
      this.imagesByRef.set(image.file_name ?? String(image.id), image);
    }
    for (const ann of options.gt.annotations) {
      const list = this.annotationsByImage.get(ann.image_id) ?? [];
      list.push(ann);
      this.annotationsByImage.set(ann.image_id, list);
    }
  }

  private noisyAnchor(classId: number, tag: string, noise: number): Float32Array {
    const anchor = this.anchors.get(classId)!;
    return normalized32(addScaled(anchor, hashUnit(`${this.seed}:${tag}`, this.dim), noise));
  }

  textEmbed(texts: string[]): Float32Array[] {
    return texts.map((text) => {
      const classId = this.promptToClass.get(text);
      if (classId === undefined) {
        return normalized32(hashUnit(`${this.seed}:text:${text}`, this.dim));
      }
      return this.noisyAnchor(classId, `text:${text}`, 0.15);
    });
  }

  private bestGt(imageRef: string, box: Box): { ann: GtAnnotation; overlap: number } | undefined {
    const image = this.imagesByRef.get(imageRef);
    if (!image) return undefined;
    let best: { ann: GtAnnotation; overlap: number } | undefined;
    for (const ann of this.annotationsByImage.get(image.id) ?? []) {
      const overlap = iou(box, ann.bbox);
      if (overlap >= MATCH_IOU && (best === undefined || overlap > best.overlap)) {
        best = { ann, overlap };
      }
    }
    return best;
  }

  imageEmbedRoi(imageRef: string, boxes: Box[], _contextPad: number): Float32Array[] {
    return boxes.map((box) => {
      const tag = `roi:${imageRef}:${box.join(",")}`;
      const hit = this.bestGt(imageRef, box);
      if (hit === undefined) {
        return normalized32(hashUnit(`${this.seed}:${tag}`, this.dim));
      }
      return this.noisyAnchor(hit.ann.category_id, tag, 0.1);
    });
  }

  segmentBoxes(imageRef: string, boxes: Box[]): SegmentationRecord[] {
    const image = this.imagesByRef.get(imageRef);
    return boxes.map((box) => {
      if (!image) {
        return { counts: emptyMaskRle(64, 64), height: 64, width: 64, score: 0.05 };
      }
      const hit = this.bestGt(imageRef, box);
      if (hit !== undefined) {
        const [x1, y1, x2, y2] = hit.ann.bbox;
        return {
          counts: rectMaskRle(image.height, image.width, y1, y2, x1, x2),
          height: image.height,
          width: image.width,
          score: 0.55 + 0.45 * hit.overlap,
        };
      }
      const area = Math.max(0, box[2] - box[0]) * Math.max(0, box[3] - box[1]);
      if (area < 4) {
        return {
          counts: emptyMaskRle(image.height, image.width),
          height: image.height,
          width: image.width,
          score: 0.05,
        };
      }
      const cx = (box[0] + box[2]) / 2;
      const cy = (box[1] + box[3]) / 2;
      const hw = (box[2] - box[0]) * 0.4;
      const hh = (box[3] - box[1]) * 0.4;
      const wobble = mulberry32(seedFrom(`${this.seed}:seg:${imageRef}:${box.join(",")}`))();
      return {
        counts: rectMaskRle(image.height, image.width, cy - hh, cy + hh, cx - hw, cx + hw),
        height: image.height,
        width: image.width,
        score: 0.25 + 0.2 * wobble,
      };
    });
  }
}

/** Serialize provider output into wire responses. */
export function respond(provider: ModelProvider, request: {
  kind: string;
  texts?: string[];
  image_ref?: string;
  boxes?: Box[];
  context_pad?: number;
}): string {
  switch (request.kind) {
    case "hello":
      return JSON.stringify({ kind: "hello", dim: provider.dim, backend_id: provider.backendId });
    case "text_embed": {
      const vectors = provider.textEmbed(request.texts!).map(encodeEmbedding);
      return JSON.stringify({ kind: "embeddings", dim: provider.dim, vectors });
    }
    case "image_embed_roi": {
      const vectors = provider
        .imageEmbedRoi(request.image_ref!, request.boxes!, request.context_pad ?? 0)
        .map(encodeEmbedding);
      return JSON.stringify({ kind: "embeddings", dim: provider.dim, vectors });
    }
    case "segment_boxes": {
      const results = provider.segmentBoxes(request.image_ref!, request.boxes!);
      return JSON.stringify({ kind: "segmentations", results });
    }
    default:
      return JSON.stringify({ kind: "error", message: `unknown kind ${request.kind}` });
  }
}
