// Calibration wizard geometry and input handling. The reference box is a
// centered rectangle of exactly one third of each view dimension, i.e. one
// ninth of the view area; the service multiplies the measured reference
// area by 9 to get the full field of view.

export type Box = { x: number; y: number; w: number; h: number };

export function referenceBox(viewW: number, viewH: number): Box {
  const w = viewW / 3;
  const h = viewH / 3;
  return { x: (viewW - w) / 2, y: (viewH - h) / 2, w, h };
}

// Measured area in mm² as typed by the operator; null when not a usable
// positive number (rejected inline, never sent to the server).
export function parseAreaInput(text: string): number | null {
  const trimmed = text.trim();
  if (trimmed === "") return null;
  const value = Number(trimmed);
  if (!Number.isFinite(value) || value <= 0) return null;
  return value;
}
