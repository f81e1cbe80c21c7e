/** DOM rendering for the rating view. The image element is never scaled,
 * filtered, or transformed — oversized images scroll inside their container
 * so the pixels reach the screen untouched. */

import { ACR_ANCHORS, progressFraction, type UiSessionState } from "./state.js";

export interface ViewHandlers {
  onSlider(value: number): void;
  onSelectLabel(label: number): void;
  onSubmit(): void;
  onWithdraw(): void;
}

const SPARK_WIDTH = 220;
const SPARK_HEIGHT = 48;

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  className?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (className) node.className = className;
  return node;
}

/** Polyline points for the history sparkline, oldest left, newest right. */
export function sparklinePoints(
  history: readonly number[],
  width = SPARK_WIDTH,
  height = SPARK_HEIGHT,
): string {
  if (history.length === 0) return "";
  if (history.length === 1) {
    return `0,${(1 - history[0]) * height} ${width},${(1 - history[0]) * height}`;
  }
  const step = width / (history.length - 1);
  return history
    .map((score, i) => `${i * step},${(1 - score) * height}`)
    .join(" ");
}

function renderImage(doc: Document, state: UiSessionState): HTMLElement {
  const pane = el(doc, "div", "image-pane");
  // Scroll/pan for oversized images; never rescale the pixels.
  pane.style.overflow = "auto";
  if (state.imageUrl !== null) {
    const img = el(doc, "img", "stimulus");
    img.id = "stimulus";
    img.src = state.imageUrl;
    img.alt = `image ${state.imageId ?? ""}`;
    img.draggable = false;
    pane.appendChild(img);
  }
  return pane;
}

function renderSlider(
  doc: Document,
  state: UiSessionState,
  handlers: ViewHandlers,
): HTMLElement {
  const block = el(doc, "div", "slider-block");

  const slider = el(doc, "input", "score-slider");
  slider.id = "score-slider";
  slider.type = "range";
  slider.min = "0";
  slider.max = "1";
  slider.step = "0.01";
  slider.value = String(state.slider);
  slider.addEventListener("input", () => {
    handlers.onSlider(Number(slider.value));
  });
  block.appendChild(slider);

  const anchors = el(doc, "div", "anchor-row");
  for (const anchor of ACR_ANCHORS) {
    const button = el(doc, "button", "anchor-tick");
    button.type = "button";
    button.dataset.label = String(anchor.label);
    button.textContent = anchor.name;
    button.addEventListener("click", () => {
      handlers.onSelectLabel(anchor.label);
    });
    anchors.appendChild(button);
  }
  block.appendChild(anchors);

  const readout = el(doc, "output", "score-readout");
  readout.id = "score-readout";
  readout.textContent = state.selected ? state.slider.toFixed(2) : "–";
  block.appendChild(readout);

  return block;
}

function renderHistory(doc: Document, state: UiSessionState): HTMLElement {
  const panel = el(doc, "div", "history-panel");
  const svg = doc.createElementNS("http://www.w3.org/2000/svg", "svg");
  svg.setAttribute("class", "sparkline");
  svg.setAttribute("width", String(SPARK_WIDTH));
  svg.setAttribute("height", String(SPARK_HEIGHT));
  svg.setAttribute(
    "viewBox",
    `0 0 ${SPARK_WIDTH} ${SPARK_HEIGHT}`,
  );
  const line = doc.createElementNS("http://www.w3.org/2000/svg", "polyline");
  line.setAttribute("points", sparklinePoints(state.history));
  line.setAttribute("fill", "none");
  line.setAttribute("stroke", "currentColor");
  svg.appendChild(line);
  panel.appendChild(svg);

  const caption = el(doc, "span", "history-count");
  caption.textContent = `${state.history.length} rated`;
  panel.appendChild(caption);
  return panel;
}

function renderProgress(doc: Document, state: UiSessionState): HTMLElement {
  const wrap = el(doc, "div", "progress-wrap");
  const bar = el(doc, "progress", "progress-bar");
  bar.max = 1;
  bar.value = progressFraction(state);
  wrap.appendChild(bar);
  const text = el(doc, "span", "progress-text");
  text.textContent = `${state.index} / ${state.total}`;
  wrap.appendChild(text);
  return wrap;
}

function renderControls(
  doc: Document,
  state: UiSessionState,
  handlers: ViewHandlers,
): HTMLElement {
  const row = el(doc, "div", "control-row");

  const submit = el(doc, "button", "submit-button");
  submit.id = "submit-rating";
  submit.type = "button";
  submit.textContent = state.error ? "Retry" : "Submit";
  submit.disabled = !state.selected || state.inFlight;
  submit.addEventListener("click", () => {
    handlers.onSubmit();
  });
  row.appendChild(submit);

  const withdraw = el(doc, "button", "withdraw-button");
  withdraw.id = "withdraw-session";
  withdraw.type = "button";
  withdraw.textContent = "Withdraw";
  withdraw.disabled = state.inFlight;
  withdraw.addEventListener("click", () => {
    handlers.onWithdraw();
  });
  row.appendChild(withdraw);

  if (state.error) {
    const note = el(doc, "span", "error-note");
    note.textContent = state.error;
    row.appendChild(note);
  }
  return row;
}

function renderClosed(doc: Document, state: UiSessionState): HTMLElement {
  const screen = el(
    doc,
    "div",
    state.status === "completed" ? "completion-screen" : "reentry-screen",
  );
  const message = el(doc, "p");
  message.textContent =
    state.status === "completed"
      ? `Session complete — ${state.history.length} images rated. Thank you.`
      : "Session closed. Start a new session to continue.";
  screen.appendChild(message);
  screen.appendChild(renderHistory(doc, state));
  return screen;
}

/** Replace `root`'s content with the rating view for `state`. */
export function renderRatingView(
  root: HTMLElement,
  state: UiSessionState,
  handlers: ViewHandlers,
): void {
  const doc = root.ownerDocument;
  root.textContent = "";

  if (state.status !== "active") {
    root.appendChild(renderClosed(doc, state));
    return;
  }

  root.appendChild(renderProgress(doc, state));
  root.appendChild(renderImage(doc, state));
  root.appendChild(renderSlider(doc, state, handlers));
  root.appendChild(renderHistory(doc, state));
  root.appendChild(renderControls(doc, state, handlers));
}
