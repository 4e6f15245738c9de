/** DOM builders. Every displayed posterior comes from the service response
 * attached to the state; nothing is computed client-side. */

import {
  barSegments,
  categoryColor,
  confidence,
  cycleLabel,
  heatColor,
  isLowInformation,
  pct,
  relationName,
} from "./format.js";
import type { CategorySimilarity, FusedState, SentenceState } from "./types.js";

export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderProbBar(probs: number[]): HTMLElement {
  const bar = el("div", "prob-bar");
  for (const segment of barSegments(probs)) {
    const piece = el("span", "prob-segment");
    piece.style.width = `${segment.widthPct}%`;
    piece.style.backgroundColor = segment.color;
    piece.title = `category ${segment.category}: ${pct(segment.widthPct / 100)}`;
    bar.appendChild(piece);
  }
  return bar;
}

export function renderFusedBadge(fused: FusedState, categories: string[]): HTMLElement {
  const badge = el(
    "span",
    "fused-badge",
    `${categories[fused.argmax_label]} ${pct(confidence(fused.posterior))}`,
  );
  badge.style.borderColor = categoryColor(fused.argmax_label);
  if (fused.fallback_used) {
    badge.classList.add("fallback");
    badge.title = "human and machine were mutually exclusive; machine distribution kept";
  }
  return badge;
}

export interface SentenceHandlers {
  onCycle: (sentence: SentenceState, nextLabel: number) => void;
  onSelect: (sentence: SentenceState) => void;
}

export function renderSentenceRow(
  sentence: SentenceState,
  categories: string[],
  handlers: SentenceHandlers,
): HTMLElement {
  const row = el("div", "sentence-row");
  row.dataset.docId = sentence.doc_id;
  row.dataset.index = String(sentence.index);

  const chip = el(
    "button",
    "label-chip",
    sentence.human_label === null ? "mark" : categories[sentence.human_label],
  );
  if (sentence.human_label !== null) {
    chip.style.backgroundColor = categoryColor(sentence.human_label);
    chip.classList.add("marked");
  }
  chip.addEventListener("click", (event) => {
    event.stopPropagation();
    handlers.onCycle(sentence, cycleLabel(sentence.human_label, categories.length));
  });
  row.appendChild(chip);

  const body = el("div", "sentence-body");
  body.appendChild(el("div", "sentence-text", sentence.text));
  body.appendChild(renderProbBar(sentence.machine_probs));
  row.appendChild(body);

  const status = el("div", "sentence-status");
  if (sentence.fused) {
    status.appendChild(renderFusedBadge(sentence.fused, categories));
  } else {
    status.appendChild(el("span", "unmarked-hint", "machine only"));
  }
  row.appendChild(status);

  row.addEventListener("click", () => handlers.onSelect(sentence));
  return row;
}

/** Trust strip: the assigned prototype's response rates for the chosen
 * label across every true category. */
export function renderHeatStrip(row: number[], categories: string[]): HTMLElement {
  const strip = el("div", "heat-strip");
  row.forEach((weight, category) => {
    const cellWrap = el("div", "heat-cell-wrap");
    const cell = el("div", "heat-cell", pct(weight));
    cell.style.backgroundColor = heatColor(weight);
    cell.title = `p(this answer | truly ${categories[category]}) = ${pct(weight)}`;
    cellWrap.appendChild(cell);
    cellWrap.appendChild(el("div", "heat-label", categories[category]));
    strip.appendChild(cellWrap);
  });
  return strip;
}

export function renderUncertaintyPanel(
  sentence: SentenceState | null,
  categories: string[],
): HTMLElement {
  const panel = el("div", "uncertainty-panel");
  panel.appendChild(el("h3", undefined, "decision trust"));
  if (!sentence) {
    panel.appendChild(el("p", "hint", "select a sentence to see how much the system trusts your call there"));
    return panel;
  }
  panel.appendChild(
    el("p", "prototype-line", `context prototype #${sentence.prototype}`),
  );
  if (!sentence.fused) {
    panel.appendChild(el("p", "hint", "mark this sentence to see the trust profile for your label"));
    return panel;
  }
  panel.appendChild(renderHeatStrip(sentence.fused.confusion_row, categories));
  if (isLowInformation(sentence.fused.confusion_row)) {
    panel.appendChild(
      el("p", "hint low-information", "low information: this label barely discriminates here"),
    );
  }
  return panel;
}

export function renderBreakdown(rows: CategorySimilarity[], categories: string[]): HTMLElement {
  const list = el("div", "breakdown");
  for (const row of rows) {
    const line = el("div", "breakdown-row");
    const swatch = el("span", "swatch");
    swatch.style.backgroundColor = categoryColor(row.category);
    line.appendChild(swatch);
    line.appendChild(el("span", "breakdown-name", categories[row.category]));
    line.appendChild(
      el(
        "span",
        "breakdown-sim",
        row.similarity === null ? "no shared evidence" : pct(row.similarity),
      ),
    );
    list.appendChild(line);
  }
  return list;
}

export function renderVerdict(
  relation: number,
  score: number,
  breakdown: CategorySimilarity[],
  categories: string[],
  machineFilled: number,
): HTMLElement {
  const verdict = el("div", "verdict");
  verdict.appendChild(el("h3", undefined, "verdict"));
  verdict.appendChild(el("p", "verdict-line", `${relationName(relation)} (score ${pct(score)})`));
  if (machineFilled > 0) {
    verdict.appendChild(
      el("p", "hint", `${machineFilled} unmarked sentences used the machine's suggestion`),
    );
  }
  verdict.appendChild(renderBreakdown(breakdown, categories));
  return verdict;
}
