/** Pure session-state model for the rating view; no DOM, no network. */

import type { NextItem, RatingAck } from "./api.js";

/** Five-level absolute category rating anchors and their stored scores. */
export const ACR_ANCHORS = [
  { label: 1, name: "Bad", score: 0.0 },
  { label: 2, name: "Poor", score: 0.25 },
  { label: 3, name: "Fair", score: 0.5 },
  { label: 4, name: "Good", score: 0.75 },
  { label: 5, name: "Excellent", score: 1.0 },
] as const;

export function scoreForLabel(label: number): number {
  const anchor = ACR_ANCHORS.find((a) => a.label === label);
  if (!anchor) throw new RangeError(`ACR label must be 1..5, got ${label}`);
  return anchor.score;
}

export function clampScore(value: number): number {
  if (Number.isNaN(value)) return 0;
  return Math.min(1, Math.max(0, value));
}

export type SessionStatus = "active" | "completed" | "withdrawn";

export interface UiSessionState {
  sessionId: string;
  /** URL of the image under judgment, null once the queue is exhausted. */
  imageUrl: string | null;
  imageId: string | null;
  /** Zero-based position of the current image in the session queue. */
  index: number;
  total: number;
  /** Last K committed scores, newest last — mirrors the server's history. */
  history: number[];
  /** Slider position, always within [0, 1]. */
  slider: number;
  /** True once the observer picked a value for the current image. */
  selected: boolean;
  status: SessionStatus;
  /** True while a submission is outstanding; blocks duplicate posts. */
  inFlight: boolean;
  error: string | null;
}

export function initialState(sessionId: string, total: number): UiSessionState {
  return {
    sessionId,
    imageUrl: null,
    imageId: null,
    index: 0,
    total,
    history: [],
    slider: 0.5,
    selected: false,
    status: "active",
    inFlight: false,
    error: null,
  };
}

export function progressFraction(state: UiSessionState): number {
  return state.total === 0 ? 0 : state.index / state.total;
}

/** Adopt the server's view of the queue head; history is mirrored verbatim. */
export function applyNextItem(
  state: UiSessionState,
  item: NextItem,
  imageUrlFor: (imageId: string) => string,
): UiSessionState {
  return {
    ...state,
    imageUrl: imageUrlFor(item.image_id),
    imageId: item.image_id,
    index: item.index,
    total: item.total,
    history: [...item.history],
    slider: 0.5,
    selected: false,
    inFlight: false,
    error: null,
  };
}

/** Fold in a rating acknowledgement (queue advanced server-side). */
export function applyAck(state: UiSessionState, ack: RatingAck): UiSessionState {
  const completed = ack.status !== "active";
  return {
    ...state,
    index: ack.rated,
    total: ack.total,
    history: [...state.history, ack.score],
    status: completed ? (ack.status as SessionStatus) : state.status,
    imageUrl: completed ? null : state.imageUrl,
    imageId: completed ? null : state.imageId,
    inFlight: false,
    error: null,
  };
}

export function setSlider(state: UiSessionState, value: number): UiSessionState {
  return { ...state, slider: clampScore(value), selected: true };
}

export function selectLabel(state: UiSessionState, label: number): UiSessionState {
  return setSlider(state, scoreForLabel(label));
}

export function markInFlight(state: UiSessionState): UiSessionState {
  return { ...state, inFlight: true };
}

/** Failed submission: keep the selected score so the observer can retry. */
export function markError(state: UiSessionState, message: string): UiSessionState {
  return { ...state, inFlight: false, error: message };
}

export function markWithdrawn(state: UiSessionState): UiSessionState {
  return {
    ...state,
    status: "withdrawn",
    imageUrl: null,
    imageId: null,
    inFlight: false,
  };
}
