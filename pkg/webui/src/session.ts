/**
 * Local state of one comparison session.
 *
 * Selection lives entirely in the client until submit; the service learns
 * nothing about toggles, and the client learns nothing about engines until
 * the submit response comes back. State updates are pure functions so the
 * payload the UI will POST can be asserted against the visible state.
 */

import type { CompareResponse } from "./api.js";

export interface SlotView {
  slotId: string;
  screenshotId: string;
  imageUrl: string;
  selected: boolean;
}

export interface SessionView {
  sessionId: string;
  query: string;
  slots: SlotView[];
  submitted: boolean;
}

export function sessionFromCompare(res: CompareResponse): SessionView {
  return {
    sessionId: res.session_id,
    query: res.query,
    slots: res.slots.map((s) => ({
      slotId: s.slot_id,
      screenshotId: s.screenshot_id,
      imageUrl: s.image_url,
      selected: false,
    })),
    submitted: false,
  };
}

/** Flip one tile; a submitted session is immutable. */
export function toggleSlot(view: SessionView, slotId: string): SessionView {
  if (view.submitted) return view;
  return {
    ...view,
    slots: view.slots.map((s) =>
      s.slotId === slotId ? { ...s, selected: !s.selected } : s,
    ),
  };
}

/** Exactly the ids the submit payload will carry, in tile order. */
export function selectedSlotIds(view: SessionView): string[] {
  return view.slots.filter((s) => s.selected).map((s) => s.slotId);
}

export function markSubmitted(view: SessionView): SessionView {
  return { ...view, submitted: true };
}

export function canSubmit(view: SessionView): boolean {
  return !view.submitted;
}
