import { describe, expect, it } from "vitest";

import { parseAreaInput, referenceBox } from "../src/calibration.js";

describe("referenceBox", () => {
  it("a 900x600 view gets a 300x200 box, centered", () => {
    expect(referenceBox(900, 600)).toEqual({ x: 300, y: 200, w: 300, h: 200 });
  });

  it("is exactly one third of each dimension for arbitrary views", () => {
    for (const [w, h] of [[512, 512], [1024, 768], [333, 777], [100, 50]]) {
      const box = referenceBox(w!, h!);
      expect(box.w).toBe(w! / 3);
      expect(box.h).toBe(h! / 3);
      // centered: equal margins on both sides
      expect(box.x * 2 + box.w).toBeCloseTo(w!, 12);
      expect(box.y * 2 + box.h).toBeCloseTo(h!, 12);
    }
  });

  it("covers one ninth of the view area", () => {
    const box = referenceBox(900, 600);
    expect(box.w * box.h * 9).toBe(900 * 600);
  });
});

describe("parseAreaInput", () => {
  it("accepts plain positive numbers", () => {
    expect(parseAreaInput("0.036")).toBe(0.036);
    expect(parseAreaInput("  2 ")).toBe(2);
    expect(parseAreaInput("1e-3")).toBe(0.001);
  });

  it("rejects non-numeric, empty, zero and negative input", () => {
    for (const bad of ["", "   ", "abc", "1.2.3", "-0.5", "0", "NaN", "Infinity"]) {
      expect(parseAreaInput(bad)).toBeNull();
    }
  });
});
