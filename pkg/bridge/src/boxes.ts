/**
 * Box format conversion. The detection model emits YOLO-style center-based
 * boxes (cx, cy, w, h); the exchange protocol wants the top-left corner.
 * Conversion is exact and unclamped: negative corners are the consumer's
 * problem, not ours.
 */

export interface CenterBox {
  cx: number;
  cy: number;
  w: number;
  h: number;
}

export interface CornerBox {
  x: number;
  y: number;
  w: number;
  h: number;
}

export function centerToCorner(box: CenterBox): CornerBox {
  return { x: box.cx - box.w / 2, y: box.cy - box.h / 2, w: box.w, h: box.h };
}

export function cornerToCenter(box: CornerBox): CenterBox {
  return { cx: box.x + box.w / 2, cy: box.y + box.h / 2, w: box.w, h: box.h };
}
