import { describe, expect, it } from "vitest";

import {
  barSegments,
  categoryColor,
  confidence,
  cycleLabel,
  heatColor,
  isLowInformation,
  labelFromDigit,
  pct,
  relationName,
} from "../src/format.js";

describe("cycleLabel", () => {
  it("starts at 0 for unmarked sentences", () => {
    expect(cycleLabel(null, 4)).toBe(0);
  });

  it("wraps around the category count", () => {
    expect(cycleLabel(0, 4)).toBe(1);
    expect(cycleLabel(3, 4)).toBe(0);
  });

  it("never leaves the valid range", () => {
    for (let c = 2; c <= 6; c++) {
      let label: number | null = null;
      for (let step = 0; step < 3 * c; step++) {
        label = cycleLabel(label, c);
        expect(label).toBeGreaterThanOrEqual(0);
        expect(label).toBeLessThan(c);
      }
    }
  });
});

describe("labelFromDigit", () => {
  it("accepts digits below the category count", () => {
    expect(labelFromDigit(2, 4)).toBe(2);
  });

  it("rejects digits at or above the category count", () => {
    expect(labelFromDigit(4, 4)).toBeNull();
    expect(labelFromDigit(9, 2)).toBeNull();
  });
});

describe("barSegments", () => {
  it("covers the full bar", () => {
    const segments = barSegments([0.1, 0.2, 0.3, 0.4]);
    const total = segments.reduce((acc, s) => acc + s.widthPct, 0);
    expect(total).toBeCloseTo(100, 6);
  });

  it("colors segments by category", () => {
    const segments = barSegments([0.5, 0.5]);
    expect(segments[0].color).toBe(categoryColor(0));
    expect(segments[1].color).toBe(categoryColor(1));
  });
});

describe("heatColor", () => {
  it("is white at zero weight and saturated at one", () => {
    expect(heatColor(0)).toBe("rgb(255, 255, 255)");
    expect(heatColor(1)).toBe("rgb(100, 195, 195)");
  });

  it("clamps out-of-range weights", () => {
    expect(heatColor(-1)).toBe(heatColor(0));
    expect(heatColor(2)).toBe(heatColor(1));
  });
});

describe("isLowInformation", () => {
  it("flags near-uniform rows", () => {
    expect(isLowInformation([0.25, 0.25, 0.25, 0.25])).toBe(true);
    expect(isLowInformation([0.26, 0.24, 0.25, 0.25])).toBe(true);
  });

  it("passes sharp rows", () => {
    expect(isLowInformation([0.9, 0.05, 0.03, 0.02])).toBe(false);
  });
});

describe("misc formatting", () => {
  it("formats percentages", () => {
    expect(pct(0.87097)).toBe("87.1%");
  });

  it("names the default relations", () => {
    expect(relationName(0)).toBe("unrelated");
    expect(relationName(2)).toBe("strong match");
  });

  it("confidence is the posterior max", () => {
    expect(confidence([0.1, 0.7, 0.2])).toBeCloseTo(0.7);
  });
});
