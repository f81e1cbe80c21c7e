/** Session controller: wires the HTTP client, the pure state model, and the
 * DOM view. One request in flight at a time; the server wins conflicts. */

import { ApiError, RatingApi } from "./api.js";
import {
  applyAck,
  applyNextItem,
  initialState,
  markError,
  markInFlight,
  markWithdrawn,
  selectLabel,
  setSlider,
  type UiSessionState,
} from "./state.js";
import { renderRatingView, type ViewHandlers } from "./view.js";

export class SessionController {
  state: UiSessionState;

  constructor(
    private readonly api: RatingApi,
    private readonly root: HTMLElement,
  ) {
    this.state = initialState("", 0);
  }

  private render(): void {
    const handlers: ViewHandlers = {
      onSlider: (value) => this.setSlider(value),
      onSelectLabel: (label) => this.selectLabel(label),
      onSubmit: () => void this.submitAndAdvance(),
      onWithdraw: () => void this.withdraw(),
    };
    renderRatingView(this.root, this.state, handlers);
  }

  private update(next: UiSessionState): void {
    this.state = next;
    this.render();
  }

  async start(
    observerId: string,
    imageSet: string,
    shuffleSeed = 0,
  ): Promise<void> {
    const session = await this.api.createSession(
      observerId,
      imageSet,
      shuffleSeed,
    );
    this.update(initialState(session.session_id, session.total));
    await this.fetchNext();
  }

  private async fetchNext(): Promise<void> {
    try {
      const item = await this.api.nextItem(this.state.sessionId);
      this.update(
        applyNextItem(this.state, item, (id) => this.api.imageUrl(id)),
      );
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // Session no longer active server-side; show the re-entry screen.
        this.update(markWithdrawn(this.state));
        return;
      }
      throw err;
    }
  }

  setSlider(value: number): void {
    if (this.state.status !== "active" || this.state.inFlight) return;
    this.update(setSlider(this.state, value));
  }

  selectLabel(label: number): void {
    if (this.state.status !== "active" || this.state.inFlight) return;
    this.update(selectLabel(this.state, label));
  }

  /** Keyboard shortcuts: digits 1–5 pick the matching ACR level. */
  handleKey(key: string): void {
    if (key >= "1" && key <= "5") this.selectLabel(Number(key));
  }

  async submitAndAdvance(): Promise<void> {
    const { state } = this;
    if (
      state.status !== "active" ||
      state.inFlight ||
      !state.selected ||
      state.imageId === null
    ) {
      return;
    }
    this.update(markInFlight(state));
    try {
      const ack = await this.api.submitRating(state.sessionId, state.imageId, {
        score: state.slider,
      });
      this.update(applyAck(this.state, ack));
      if (this.state.status === "active") await this.fetchNext();
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // Duplicate or stale submission: the server is the source of truth.
        this.update(markError(this.state, err.message));
        await this.fetchNext();
        return;
      }
      // Network failure: keep the selected score and offer a retry.
      const message = err instanceof Error ? err.message : String(err);
      this.update(markError(this.state, message));
    }
  }

  async withdraw(): Promise<void> {
    if (this.state.status !== "active" || this.state.inFlight) return;
    await this.api.withdraw(this.state.sessionId);
    this.update(markWithdrawn(this.state));
  }
}
