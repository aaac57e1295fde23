import { describe, expect, test } from "vitest";

import { decodeEmbedding } from "../src/embedding.js";
import type { Box } from "../src/protocol.js";
import { SyntheticProvider, iou, respond } from "../src/provider.js";

const vocab = [
  { id: 0, name: "person", synonyms: ["person", "human"], known: true },
  { id: 1, name: "car", synonyms: ["car"], known: true },
  { id: 2, name: "xylophone", synonyms: ["xylophone", "marimba"], known: false },
];
const templates = ["a photo of a [CLASS]", "a [CLASS] in the scene"];
const gt = {
  images: [{ id: 1, width: 64, height: 48, file_name: "one.jpg" }],
  annotations: [
    { image_id: 1, bbox: [4, 4, 24, 28] as Box, category_id: 0 },
    { image_id: 1, bbox: [30, 10, 60, 40] as Box, category_id: 2 },
  ],
};

function makeProvider(seed = 5) {
  return new SyntheticProvider({ vocab, templates, gt, dim: 32, seed });
}

function cosine(a: Float32Array, b: Float32Array): number {
  let dot = 0;
  let na = 0;
  let nb = 0;
  for (let i = 0; i < a.length; i++) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / Math.sqrt(na * nb);
}

describe("synthetic provider", () => {
  test("dimension is consistent across every call kind", () => {
    const provider = makeProvider();
    const texts = provider.textEmbed(["a photo of a person", "unrelated words"]);
    const rois = provider.imageEmbedRoi("one.jpg", [[4, 4, 24, 28]], 0);
    for (const vec of [...texts, ...rois]) {
      expect(vec.length).toBe(provider.dim);
    }
  });

  test("same-class prompts cluster, cross-class prompts do not", () => {
    const provider = makeProvider();
    const [p1, p2, cross] = provider.textEmbed([
      "a photo of a person",
      "a human in the scene",
      "a photo of a xylophone",
    ]);
    expect(cosine(p1, p2)).toBeGreaterThan(0.9);
    expect(cosine(p1, cross)).toBeLessThan(0.5);
  });

  test("roi embedding follows the best-overlapping ground truth", () => {
    const provider = makeProvider();
    const [personPrompt, xyloPrompt] = provider.textEmbed([
      "a photo of a person",
      "a photo of a xylophone",
    ]);
    const [roiPerson, roiXylo, roiNowhere] = provider.imageEmbedRoi(
      "one.jpg",
      [
        [6, 6, 26, 30], // overlaps the person box
        [32, 12, 58, 38], // overlaps the xylophone box
        [0, 40, 4, 44], // overlaps nothing
      ],
      0,
    );
    expect(cosine(roiPerson, personPrompt)).toBeGreaterThan(0.8);
    expect(cosine(roiXylo, xyloPrompt)).toBeGreaterThan(0.8);
    expect(Math.abs(cosine(roiNowhere, personPrompt))).toBeLessThan(0.5);
  });

  test("exactly one mask per prompt box, grid-sized", () => {
    const provider = makeProvider();
    const boxes: Box[] = [
      [4, 4, 24, 28],
      [30, 10, 60, 40],
      [0, 0, 1, 1],
    ];
    const results = provider.segmentBoxes("one.jpg", boxes);
    expect(results.length).toBe(boxes.length);
    for (const seg of results) {
      expect(seg.height).toBe(48);
      expect(seg.width).toBe(64);
      expect(seg.counts.reduce((a, b) => a + b, 0)).toBe(48 * 64);
      expect(seg.score).toBeGreaterThan(0);
      expect(seg.score).toBeLessThanOrEqual(1);
    }
  });

  test("order preservation under permutation", () => {
    const provider = makeProvider();
    const texts = ["a photo of a car", "a photo of a person", "a photo of a xylophone"];
    const forward = provider.textEmbed(texts);
    const backward = provider.textEmbed([...texts].reverse());
    for (let i = 0; i < texts.length; i++) {
      expect(Array.from(forward[i])).toEqual(Array.from(backward[texts.length - 1 - i]));
    }
  });

  test("deterministic across provider instances", () => {
    const a = makeProvider(9);
    const b = makeProvider(9);
    expect(respond(a, { kind: "text_embed", texts: ["a photo of a car"] })).toBe(
      respond(b, { kind: "text_embed", texts: ["a photo of a car"] }),
    );
    const c = makeProvider(10);
    expect(respond(a, { kind: "text_embed", texts: ["a photo of a car"] })).not.toBe(
      respond(c, { kind: "text_embed", texts: ["a photo of a car"] }),
    );
  });

  test("wire responses decode to unit vectors", () => {
    const provider = makeProvider();
    const body = JSON.parse(respond(provider, { kind: "text_embed", texts: ["anything"] }));
    expect(body.kind).toBe("embeddings");
    const vec = decodeEmbedding(body.vectors[0]);
    let norm = 0;
    for (const v of vec) norm += v * v;
    expect(Math.sqrt(norm)).toBeCloseTo(1.0, 5);
  });
});

describe("iou helper", () => {
  test("matches hand geometry", () => {
    expect(iou([0, 0, 2, 2], [1, 0, 3, 2])).toBeCloseTo(1 / 3, 12);
    expect(iou([0, 0, 1, 1], [5, 5, 6, 6])).toBe(0);
  });
});
