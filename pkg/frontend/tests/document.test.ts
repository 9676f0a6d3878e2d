import { describe, expect, it } from "vitest";

import {
  AnnotationDoc,
  DocumentParseError,
  emptyDoc,
  exportDoc,
  importDoc,
  rasterizePolygon,
  regionPixels,
  sortedUniquePixels,
} from "../src/document.js";

const image = { file: "scene.png", width: 16, height: 12, sha256: "" };
const canny = { sigma: 1.4, low: 0.05, high: 0.15 };

function sampleDoc(): AnnotationDoc {
  const doc = emptyDoc(image, canny, "tester");
  doc.regions = [
    { id: 1, polygons: [[[1, 1], [6, 1], [6, 5], [1, 5]]], points: [] },
    { id: 2, polygons: [], points: [[9, 9], [8, 9], [8, 8]] },
  ];
  doc.edges_r = [[3, 7], [2, 7], [3, 6]];
  doc.notes = "two regions";
  return doc;
}

describe("export/import", () => {
  it("round-trips losslessly", () => {
    const doc = sampleDoc();
    const text = exportDoc(doc);
    const again = importDoc(text);
    expect(exportDoc(again)).toBe(text);
    expect(again.regions.length).toBe(2);
    expect(again.notes).toBe("two regions");
  });

  it("serializes with the fixed key order", () => {
    const keys = Object.keys(JSON.parse(exportDoc(sampleDoc())));
    expect(keys).toEqual([
      "schema_version", "image", "canny", "regions", "edges_r", "annotator", "notes",
    ]);
  });

  it("sorts and dedupes coordinates deterministically", () => {
    const doc = sampleDoc();
    const parsed = JSON.parse(exportDoc(doc));
    expect(parsed.edges_r).toEqual([[3, 6], [2, 7], [3, 7]]);
    expect(parsed.regions[1].points).toEqual([[8, 8], [8, 9], [9, 9]]);

    const shuffled = sampleDoc();
    shuffled.edges_r = [[3, 6], [3, 7], [2, 7], [3, 7]];
    expect(exportDoc(shuffled)).toBe(exportDoc(doc));
  });

  it("rejects malformed documents", () => {
    expect(() => importDoc("{nope")).toThrow(DocumentParseError);
    expect(() => importDoc('{"schema_version":"9"}')).toThrow(DocumentParseError);
    expect(() => importDoc('{"schema_version":"1"}')).toThrow(DocumentParseError);
  });
});

describe("rasterization preview", () => {
  it("fills a rectangle half-open", () => {
    const px = rasterizePolygon([[0, 0], [3, 0], [3, 2], [0, 2]], 8, 8);
    const expected = [];
    for (let y = 0; y < 2; y++) for (let x = 0; x < 3; x++) expected.push([x, y]);
    expect(sortedUniquePixels(px)).toEqual(sortedUniquePixels(expected as [number, number][]));
  });

  it("combines polygons and points per region", () => {
    const px = regionPixels(
      { id: 1, polygons: [[[0, 0], [2, 0], [2, 2], [0, 2]]], points: [[5, 5]] },
      8, 8
    );
    expect(px).toContainEqual([5, 5]);
    expect(px).toContainEqual([1, 1]);
    expect(px.length).toBe(5);
  });

  it("ignores degenerate loops", () => {
    expect(rasterizePolygon([[0, 0], [1, 1]], 8, 8)).toEqual([]);
  });
});
