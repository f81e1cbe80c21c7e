import { beforeEach, describe, expect, it, vi } from "vitest";

import {
  applyNextItem,
  initialState,
  markInFlight,
  markWithdrawn,
  setSlider,
  type UiSessionState,
} from "../src/state.js";
import { renderRatingView, sparklinePoints, type ViewHandlers } from "../src/view.js";

function handlers(overrides: Partial<ViewHandlers> = {}): ViewHandlers {
  return {
    onSlider: vi.fn(),
    onSelectLabel: vi.fn(),
    onSubmit: vi.fn(),
    onWithdraw: vi.fn(),
    ...overrides,
  };
}

function activeState(partial: Partial<UiSessionState> = {}): UiSessionState {
  const base = applyNextItem(
    initialState("s-000001", 10),
    {
      schema_version: 1,
      session_id: "s-000001",
      image_id: "img_2",
      index: 2,
      total: 10,
      history: [0.25, 0.75],
    },
    (id) => `/images/${id}`,
  );
  return { ...base, ...partial };
}

let root: HTMLElement;

beforeEach(() => {
  document.body.innerHTML = "<div id='app'></div>";
  root = document.getElementById("app") as HTMLElement;
});

describe("image element", () => {
  it("loads the current stimulus", () => {
    renderRatingView(root, activeState(), handlers());
    const img = root.querySelector("img#stimulus") as HTMLImageElement;
    expect(img).not.toBeNull();
    expect(img.getAttribute("src")).toBe("/images/img_2");
  });

  it("applies no resampling transforms", () => {
    renderRatingView(root, activeState(), handlers());
    const img = root.querySelector("img#stimulus") as HTMLImageElement;
    // Native resolution: no sizing attributes and no pixel-altering CSS.
    expect(img.hasAttribute("width")).toBe(false);
    expect(img.hasAttribute("height")).toBe(false);
    for (const property of [
      "transform",
      "scale",
      "zoom",
      "filter",
      "width",
      "height",
      "max-width",
      "max-height",
      "object-fit",
      "image-rendering",
    ]) {
      expect(img.style.getPropertyValue(property)).toBe("");
    }
  });

  it("pans oversized images instead of rescaling", () => {
    renderRatingView(root, activeState(), handlers());
    const pane = root.querySelector(".image-pane") as HTMLElement;
    expect(pane.style.overflow).toBe("auto");
  });
});

describe("slider and anchors", () => {
  it("offers a continuous [0,1] slider", () => {
    renderRatingView(root, activeState({ slider: 0.62, selected: true }), handlers());
    const slider = root.querySelector("input#score-slider") as HTMLInputElement;
    expect(slider.type).toBe("range");
    expect(slider.min).toBe("0");
    expect(slider.max).toBe("1");
    expect(slider.value).toBe("0.62");
  });

  it("shows five labeled anchor ticks", () => {
    renderRatingView(root, activeState(), handlers());
    const names = [...root.querySelectorAll("button.anchor-tick")].map(
      (b) => b.textContent,
    );
    expect(names).toEqual(["Bad", "Poor", "Fair", "Good", "Excellent"]);
  });

  it("clicking Excellent selects label 5", () => {
    const h = handlers();
    renderRatingView(root, activeState(), h);
    const excellent = [...root.querySelectorAll("button.anchor-tick")].find(
      (b) => b.textContent === "Excellent",
    ) as HTMLButtonElement;
    excellent.click();
    expect(h.onSelectLabel).toHaveBeenCalledWith(5);
  });

  it("an Excellent click snaps the slider to 1.0 after re-render", () => {
    // Wire a minimal controller loop: handler updates state and re-renders.
    let state = activeState();
    const loop: ViewHandlers = handlers({
      onSelectLabel: (label: number) => {
        state = setSlider(state, label === 5 ? 1.0 : 0.0);
        renderRatingView(root, state, loop);
      },
    });
    renderRatingView(root, state, loop);
    const excellent = [...root.querySelectorAll("button.anchor-tick")].find(
      (b) => b.textContent === "Excellent",
    ) as HTMLButtonElement;
    excellent.click();
    const slider = root.querySelector("input#score-slider") as HTMLInputElement;
    expect(slider.value).toBe("1");
  });

  it("slider input reports its numeric value", () => {
    const h = handlers();
    renderRatingView(root, activeState(), h);
    const slider = root.querySelector("input#score-slider") as HTMLInputElement;
    slider.value = "0.3";
    slider.dispatchEvent(new Event("input"));
    expect(h.onSlider).toHaveBeenCalledWith(0.3);
  });
});

describe("history sparkline", () => {
  it("draws one point per rated image, newest last", () => {
    renderRatingView(
      root,
      activeState({ history: [0.2, 0.9, 0.4] }),
      handlers(),
    );
    const line = root.querySelector(".sparkline polyline") as SVGPolylineElement;
    const points = (line.getAttribute("points") ?? "").split(" ");
    expect(points).toHaveLength(3);
    // Newest entry occupies the rightmost x position.
    const [lastX, lastY] = points[2].split(",").map(Number);
    expect(lastX).toBe(220);
    expect(lastY).toBeCloseTo((1 - 0.4) * 48, 9);
    expect(root.querySelector(".history-count")?.textContent).toBe("3 rated");
  });

  it("computes sparkline geometry for edge cases", () => {
    expect(sparklinePoints([])).toBe("");
    expect(sparklinePoints([1], 100, 40)).toBe("0,0 100,0");
    const two = sparklinePoints([0, 1], 100, 40);
    expect(two).toBe("0,40 100,0");
  });
});

describe("progress and controls", () => {
  it("shows progress as index over total", () => {
    renderRatingView(root, activeState(), handlers());
    const bar = root.querySelector("progress") as HTMLProgressElement;
    expect(bar.value).toBeCloseTo(0.2, 12);
    expect(root.querySelector(".progress-text")?.textContent).toBe("2 / 10");
  });

  it("disables submit until a score is selected", () => {
    renderRatingView(root, activeState({ selected: false }), handlers());
    const submit = root.querySelector("#submit-rating") as HTMLButtonElement;
    expect(submit.disabled).toBe(true);
  });

  it("disables submit while a request is in flight", () => {
    renderRatingView(
      root,
      markInFlight(activeState({ selected: true })),
      handlers(),
    );
    const submit = root.querySelector("#submit-rating") as HTMLButtonElement;
    expect(submit.disabled).toBe(true);
  });

  it("submit and withdraw reach their handlers", () => {
    const h = handlers();
    renderRatingView(root, activeState({ selected: true }), h);
    (root.querySelector("#submit-rating") as HTMLButtonElement).click();
    (root.querySelector("#withdraw-session") as HTMLButtonElement).click();
    expect(h.onSubmit).toHaveBeenCalledOnce();
    expect(h.onWithdraw).toHaveBeenCalledOnce();
  });

  it("surfaces submission errors with a retry affordance", () => {
    renderRatingView(
      root,
      activeState({ selected: true, error: "duplicate rating" }),
      handlers(),
    );
    expect(root.querySelector(".error-note")?.textContent).toBe(
      "duplicate rating",
    );
    expect(root.querySelector("#submit-rating")?.textContent).toBe("Retry");
  });
});

describe("closed sessions", () => {
  it("shows the completion screen after the last image", () => {
    const done = activeState({
      status: "completed",
      imageUrl: null,
      history: [0.1, 0.2, 0.3],
    });
    renderRatingView(root, done, handlers());
    expect(root.querySelector(".completion-screen")).not.toBeNull();
    expect(root.querySelector("img#stimulus")).toBeNull();
    expect(root.textContent).toContain("3 images rated");
  });

  it("shows the re-entry screen for withdrawn sessions", () => {
    renderRatingView(root, markWithdrawn(activeState()), handlers());
    expect(root.querySelector(".reentry-screen")).not.toBeNull();
    expect(root.textContent).toContain("Start a new session");
  });
});
