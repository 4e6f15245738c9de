/** Pure presentation helpers: category colors, probability formatting,
 * label cycling, and trust-strip shading. */

const CATEGORY_COLORS = [
  "#9aa0a6", // not key: neutral grey
  "#d93025", // red
  "#1a73e8", // blue
  "#188038", // green
  "#f29900", // amber
  "#a142f4", // violet
];

export function categoryColor(category: number): string {
  return CATEGORY_COLORS[category % CATEGORY_COLORS.length];
}

export function pct(value: number): string {
  return `${(100 * value).toFixed(1)}%`;
}

/** Cycle to the next category label; `null` (unmarked) cycles to 0. */
export function cycleLabel(current: number | null, categoryCount: number): number {
  if (current === null) {
    return 0;
  }
  return (current + 1) % categoryCount;
}

/** Clamp a keyboard digit to a valid label, or null if out of range. */
export function labelFromDigit(digit: number, categoryCount: number): number | null {
  return digit >= 0 && digit < categoryCount ? digit : null;
}

export interface BarSegment {
  category: number;
  widthPct: number;
  color: string;
}

/** Stacked-bar segments for a probability vector; widths sum to 100. */
export function barSegments(probs: number[]): BarSegment[] {
  return probs.map((p, category) => ({
    category,
    widthPct: 100 * p,
    color: categoryColor(category),
  }));
}

/** Shade for one trust-strip cell: interpolates white -> teal by weight. */
export function heatColor(weight: number): string {
  const w = Math.max(0, Math.min(1, weight));
  const channel = Math.round(255 - 155 * w);
  const blue = Math.round(255 - 60 * w);
  return `rgb(${channel}, ${blue}, ${blue})`;
}

/** A confusion row is "low information" when it is nearly flat. */
export function isLowInformation(row: number[], tolerance = 0.1): boolean {
  const max = Math.max(...row);
  const min = Math.min(...row);
  return max - min < tolerance;
}

export function relationName(relation: number, relationCount = 3): string {
  if (relationCount === 3) {
    return ["unrelated", "related", "strong match"][relation] ?? `relation ${relation}`;
  }
  return `relation ${relation}`;
}

export function confidence(posterior: number[]): number {
  return Math.max(...posterior);
}
