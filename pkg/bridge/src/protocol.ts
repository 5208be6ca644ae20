/**
 * Newline-delimited JSON exchange protocol.
 *
 *   hello:      {"type": "hello", "name": string, "classes": string[]}
 *   request:    {"type": "detect", "id": int, "image_png_b64": string}
 *   detections: {"type": "detections", "id": int, "detections": [...]}
 *   error:      {"type": "error", "id": int, "message": string}
 *
 * Coordinates are pixels, origin top-left, boxes anchored at their top-left
 * corner. Exactly one response per request, ids matching.
 */

export interface ProtocolDetection {
  x: number;
  y: number;
  w: number;
  h: number;
  objectness: number;
  class_scores: number[] | null;
}

export interface DetectRequest {
  type: "detect";
  id: number;
  image_png_b64: string;
}

export class RequestError extends Error {}

const MAX_IMAGE_B64_BYTES = 32 * 1024 * 1024;

export function parseDetectRequest(line: string): DetectRequest {
  let doc: unknown;
  try {
    doc = JSON.parse(line);
  } catch {
    throw new RequestError("request is not valid JSON");
  }
  if (typeof doc !== "object" || doc === null) {
    throw new RequestError("request is not a JSON object");
  }
  const rec = doc as Record<string, unknown>;
  if (rec.type !== "detect") {
    throw new RequestError(`unsupported request type: ${String(rec.type)}`);
  }
  if (typeof rec.id !== "number" || !Number.isInteger(rec.id)) {
    throw new RequestError("request id must be an integer");
  }
  if (typeof rec.image_png_b64 !== "string") {
    throw new RequestError("request is missing image_png_b64");
  }
  if (rec.image_png_b64.length > MAX_IMAGE_B64_BYTES) {
    throw new RequestError("image payload exceeds the size limit");
  }
  return { type: "detect", id: rec.id, image_png_b64: rec.image_png_b64 };
}

export function requestId(line: string): number {
  // best-effort id extraction so error responses can still correlate
  try {
    const doc = JSON.parse(line);
    if (doc && typeof doc.id === "number" && Number.isInteger(doc.id)) {
      return doc.id;
    }
  } catch {
    /* fall through */
  }
  return -1;
}

export function helloMessage(name: string, classes: string[]): string {
  return JSON.stringify({ type: "hello", name, classes });
}

export function detectionsMessage(id: number, detections: ProtocolDetection[]): string {
  return JSON.stringify({ type: "detections", id, detections });
}

export function errorMessage(id: number, message: string): string {
  return JSON.stringify({ type: "error", id, message });
}

export function validateDetection(det: ProtocolDetection): void {
  if (!(det.w > 0) || !(det.h > 0)) {
    throw new Error(`detection box needs positive size, got ${det.w}x${det.h}`);
  }
  if (!(det.objectness >= 0 && det.objectness <= 1)) {
    throw new Error(`objectness out of [0, 1]: ${det.objectness}`);
  }
  if (det.class_scores) {
    for (const s of det.class_scores) {
      if (!(s >= 0 && s <= 1)) {
        throw new Error(`class score out of [0, 1]: ${s}`);
      }
    }
  }
}
