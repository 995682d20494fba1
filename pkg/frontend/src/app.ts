// DOM layer: renders the current item, the rubric cards, progress, and the
// live agreement footer. Keyboard: 1/2/3 score the active criterion, x flags
// it invalid, Tab/arrow keys move between criteria, Enter submits.

import { ReviewApi, RetryQueue, WebStorageStore } from "./api.js";
import { ReviewSession } from "./queue.js";
import { CRITERIA, INVALID_DESCRIPTION, INVALID_SCORE, RUBRIC, SCALE_LABELS } from "./rubric.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export class ReviewApp {
  private session: ReviewSession;
  private activeCriterion = 0;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ReviewApi,
    rater: string,
  ) {
    const store = new WebStorageStore(`vqanle-pending:${rater}`);
    this.session = new ReviewSession(api, rater, new RetryQueue(api, store));
  }

  async start(): Promise<void> {
    await this.session.reconnect(); // deliver anything parked before a reload
    this.render();
  }

  private async submit(): Promise<void> {
    if (!this.session.canSubmit()) return;
    await this.session.submit();
    this.activeCriterion = 0;
    this.render();
  }

  private select(criterionIndex: number, value: number): void {
    this.session.select(CRITERIA[criterionIndex], value);
    this.activeCriterion = Math.min(criterionIndex + 1, CRITERIA.length - 1);
    this.render();
  }

  handleKey(event: KeyboardEvent): void {
    if (this.session.state !== "scoring") return;
    if (event.key === "Enter") {
      void this.submit();
      return;
    }
    if (event.key === "ArrowDown" || event.key === "ArrowUp") {
      const delta = event.key === "ArrowDown" ? 1 : -1;
      this.activeCriterion = Math.max(
        0,
        Math.min(CRITERIA.length - 1, this.activeCriterion + delta),
      );
      this.render();
      return;
    }
    const value =
      event.key === "x" || event.key === "X"
        ? INVALID_SCORE
        : ["1", "2", "3"].includes(event.key)
          ? Number(event.key)
          : null;
    if (value !== null) this.select(this.activeCriterion, value);
  }

  private render(): void {
    this.root.replaceChildren();
    const { session } = this;

    const header = el("header", "bar");
    header.append(el("h1", undefined, "Triplet review"));
    header.append(
      el("span", "progress", `${session.progress.scored} / ${session.progress.total} scored`),
    );
    this.root.append(header);

    if (session.state === "offline") {
      const panel = el("section", "panel offline");
      panel.append(el("p", undefined, "Connection lost. Submitted scores are parked locally."));
      const retry = el("button", "primary", "Reconnect");
      retry.onclick = () => void this.session.reconnect().then(() => this.render());
      panel.append(retry);
      this.root.append(panel);
      return;
    }

    if (session.state === "done") {
      const panel = el("section", "panel done");
      panel.append(el("h2", undefined, "All items scored."));
      const link = el("a", "primary");
      link.textContent = "Download score export (CSV)";
      link.setAttribute("href", this.api.exportUrl());
      panel.append(link);
      this.root.append(panel);
      void this.renderAgreement();
      return;
    }

    const item = session.current;
    if (!item) return;

    const main = el("main", "columns");
    const left = el("section", "panel media");
    const image = el("img");
    image.src = this.api.imageUrl(item);
    image.alt = item.vip ? `image with ${item.object_name ?? "object"} box` : "image";
    left.append(image);
    if (item.vip) {
      left.append(el("p", "vip-note", `Focus object: ${item.object_name ?? "(marked region)"}`));
    }
    main.append(left);

    const right = el("section", "panel triplet");
    right.append(el("h2", undefined, "Question"), el("p", undefined, item.question));
    right.append(el("h2", undefined, "Short answer"), el("p", undefined, item.answer));
    right.append(el("h2", undefined, "Explanation"), el("p", undefined, item.explanation));
    main.append(right);
    this.root.append(main);

    const rubric = el("section", "rubric");
    RUBRIC.forEach((card, index) => {
      const box = el("article", index === this.activeCriterion ? "card active" : "card");
      box.append(el("h3", undefined, card.criterion));
      const buttons = el("div", "choices");
      for (const value of [1, 2, 3, INVALID_SCORE]) {
        const button = el(
          "button",
          session.selections[card.criterion] === value ? "choice selected" : "choice",
          SCALE_LABELS[value],
        );
        button.title =
          value === INVALID_SCORE
            ? INVALID_DESCRIPTION
            : card.descriptions[value as 1 | 2 | 3];
        button.onclick = () => this.select(index, value);
        buttons.append(button);
      }
      box.append(buttons);
      rubric.append(box);
    });
    this.root.append(rubric);

    const footer = el("footer", "bar");
    const submit = el("button", "primary", "Submit (Enter)");
    submit.disabled = !session.canSubmit();
    submit.onclick = () => void this.submit();
    footer.append(submit);
    footer.append(el("span", "agreement", ""));
    this.root.append(footer);
    void this.renderAgreement();
  }

  private async renderAgreement(): Promise<void> {
    const slot = this.root.querySelector(".agreement");
    if (!slot) return;
    try {
      const report = await this.api.agreement();
      slot.textContent =
        report.average === null
          ? "agreement: pending more raters"
          : `agreement (Gwet-AC2 avg): ${report.average.toFixed(3)}`;
    } catch {
      slot.textContent = "";
    }
  }
}

export function mountApp(root: HTMLElement, apiBase: string, rater: string): ReviewApp {
  const app = new ReviewApp(root, new ReviewApi(apiBase), rater);
  document.addEventListener("keydown", (event) => app.handleKey(event));
  void app.start();
  return app;
}
