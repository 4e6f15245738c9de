/** Controller: session state, event wiring, hash routing. State is always
 * rebuilt from service responses, so a reload loses nothing. */

import { ApiClient, ApiError } from "./api.js";
import { labelFromDigit } from "./format.js";
import type { MatchResponse, ModelSummary, SentenceState, Session } from "./types.js";
import {
  el,
  renderSentenceRow,
  renderUncertaintyPanel,
  renderVerdict,
} from "./view.js";

export class App {
  readonly api: ApiClient;
  private root: HTMLElement;
  private model: ModelSummary | null = null;
  session: Session | null = null;
  private selected: { docId: string; index: number } | null = null;
  private lastMatch: MatchResponse | null = null;

  constructor(root: HTMLElement, baseUrl = "") {
    this.root = root;
    this.api = new ApiClient(baseUrl);
  }

  get categories(): string[] {
    return this.model?.categories ?? [];
  }

  async start(): Promise<void> {
    try {
      this.model = await this.api.model();
    } catch (error) {
      this.showBanner(`service unreachable or degraded: ${String(error)}`, () => this.start());
      return;
    }
    const fromHash = window.location.hash.match(/^#\/session\/(.+)$/);
    if (fromHash) {
      await this.openSession(fromHash[1]);
    } else {
      await this.renderHome();
    }
  }

  private showBanner(message: string, retry: () => void): void {
    this.root.textContent = "";
    const banner = el("div", "banner error", message);
    const button = el("button", "retry", "retry");
    button.addEventListener("click", retry);
    banner.appendChild(button);
    this.root.appendChild(banner);
  }

  async renderHome(): Promise<void> {
    const [pairs, sessions] = await Promise.all([this.api.pairs(), this.api.sessions()]);
    this.session = null;
    window.location.hash = "";
    this.root.textContent = "";

    const home = el("div", "home");
    home.appendChild(el("h2", undefined, "collaborative matching"));

    const sessionList = el("div", "session-list");
    sessionList.appendChild(el("h3", undefined, `open sessions (${sessions.length})`));
    for (const summary of sessions) {
      const entry = el(
        "button",
        "session-entry",
        `${summary.source_doc} vs ${summary.target_doc}: ${summary.marked}/${summary.total} marked`,
      );
      entry.addEventListener("click", () => this.openSession(summary.session_id));
      sessionList.appendChild(entry);
    }
    home.appendChild(sessionList);

    const pairList = el("div", "pair-list");
    pairList.appendChild(el("h3", undefined, "start from a corpus pair"));
    for (const pair of pairs.slice(0, 50)) {
      const entry = el(
        "button",
        "pair-entry",
        `#${pair.pair_index}: ${pair.source_doc} vs ${pair.target_doc} (${pair.sentences} sentences)`,
      );
      entry.addEventListener("click", () => this.openPair(pair.pair_index));
      pairList.appendChild(entry);
    }
    home.appendChild(pairList);
    this.root.appendChild(home);
  }

  async openPair(pairIndex: number): Promise<void> {
    const session = await this.api.createSession(pairIndex);
    this.setSession(session);
  }

  async openSession(sessionId: string): Promise<void> {
    try {
      this.setSession(await this.api.getSession(sessionId));
    } catch (error) {
      this.showBanner(String(error), () => this.renderHome());
    }
  }

  private setSession(session: Session): void {
    this.session = session;
    this.lastMatch =
      this.lastMatch && this.lastMatch.session_id === session.session_id ? this.lastMatch : null;
    window.location.hash = `#/session/${session.session_id}`;
    this.renderSession();
  }

  sentence(docId: string, index: number): SentenceState | undefined {
    return this.session?.sentences.find((s) => s.doc_id === docId && s.index === index);
  }

  async mark(sentence: SentenceState, label: number): Promise<void> {
    if (!this.session) return;
    const response = await this.api.submitDecision(
      this.session.session_id,
      sentence.doc_id,
      sentence.index,
      label,
    );
    const fused = response.fused[0];
    const target = this.sentence(sentence.doc_id, sentence.index);
    if (target) {
      target.human_label = label;
      target.fused = fused;
    }
    this.session.relation = null;
    this.session.score = null;
    this.lastMatch = null;
    this.selected = { docId: sentence.doc_id, index: sentence.index };
    this.renderSession();
  }

  async finalize(fillUnmarked: boolean): Promise<void> {
    if (!this.session) return;
    try {
      this.lastMatch = await this.api.match(this.session.session_id, fillUnmarked);
      this.session.relation = this.lastMatch.relation;
      this.session.score = this.lastMatch.score;
      this.renderSession();
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        this.renderSession(`${error.detail}; or enable "fill unmarked with machine"`);
        return;
      }
      throw error;
    }
  }

  handleKey(event: KeyboardEvent): void {
    if (!this.session || !this.selected) return;
    const digit = Number.parseInt(event.key, 10);
    if (Number.isNaN(digit)) return;
    const label = labelFromDigit(digit, this.categories.length);
    const sentence = this.sentence(this.selected.docId, this.selected.index);
    if (label !== null && sentence) {
      void this.mark(sentence, label);
    }
  }

  renderSession(conflict?: string): void {
    const session = this.session;
    if (!session) return;
    this.root.textContent = "";

    const layout = el("div", "session-layout");
    const header = el("div", "session-header");
    const back = el("button", "back", "all sessions");
    back.addEventListener("click", () => void this.renderHome());
    header.appendChild(back);
    header.appendChild(el("h2", undefined, `${session.source_doc} vs ${session.target_doc}`));
    layout.appendChild(header);

    const columns = el("div", "doc-columns");
    for (const docId of [session.source_doc, session.target_doc]) {
      const column = el("div", "doc-column");
      column.appendChild(el("h3", undefined, docId));
      for (const sentence of session.sentences.filter((s) => s.doc_id === docId)) {
        column.appendChild(
          renderSentenceRow(sentence, this.categories, {
            onCycle: (s, next) => void this.mark(s, next),
            onSelect: (s) => {
              this.selected = { docId: s.doc_id, index: s.index };
              this.renderSession();
            },
          }),
        );
      }
      columns.appendChild(column);
    }
    layout.appendChild(columns);

    const side = el("div", "side-panels");
    const selectedSentence = this.selected
      ? this.sentence(this.selected.docId, this.selected.index) ?? null
      : null;
    side.appendChild(renderUncertaintyPanel(selectedSentence, this.categories));
    side.appendChild(this.renderMatchPanel(conflict));
    layout.appendChild(side);

    this.root.appendChild(layout);
  }

  private renderMatchPanel(conflict?: string): HTMLElement {
    const session = this.session!;
    const panel = el("div", "match-panel");
    panel.appendChild(el("h3", undefined, "match"));
    const marked = session.sentences.filter((s) => s.fused !== null).length;
    panel.appendChild(
      el("p", "progress", `${marked}/${session.sentences.length} sentences marked`),
    );

    const fillLabel = el("label", "fill-toggle");
    const fillBox = el("input") as HTMLInputElement;
    fillBox.type = "checkbox";
    fillBox.className = "fill-unmarked";
    fillLabel.appendChild(fillBox);
    fillLabel.appendChild(el("span", undefined, "fill unmarked with machine"));
    panel.appendChild(fillLabel);

    const button = el("button", "finalize", "finalize");
    button.addEventListener("click", () => void this.finalize(fillBox.checked));
    panel.appendChild(button);

    if (conflict) {
      panel.appendChild(el("p", "conflict", conflict));
    }
    if (this.lastMatch) {
      panel.appendChild(
        renderVerdict(
          this.lastMatch.relation,
          this.lastMatch.score,
          this.lastMatch.per_category,
          this.categories,
          this.lastMatch.machine_filled.length,
        ),
      );
    } else if (session.relation !== null && session.score !== null) {
      panel.appendChild(
        el("p", "verdict-line", `stored verdict: relation ${session.relation} (score ${session.score.toFixed(3)})`),
      );
    }
    return panel;
  }
}

export function boot(): void {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app mount point");
  const app = new App(root);
  window.addEventListener("keydown", (event) => app.handleKey(event));
  void app.start();
}
