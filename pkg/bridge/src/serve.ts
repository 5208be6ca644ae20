/**
 * Request loop: one detections (or error) line per request line, ids
 * matching. Malformed input produces an error response and the process
 * stays alive; only stdin closing ends the loop.
 */

import * as readline from "node:readline";
import { centerToCorner } from "./boxes.js";
import { CorrelationModel } from "./model.js";
import { decodePng } from "./png.js";
import {
  ProtocolDetection,
  RequestError,
  detectionsMessage,
  errorMessage,
  helloMessage,
  parseDetectRequest,
  requestId,
  validateDetection,
} from "./protocol.js";

export interface ServeConfig {
  model: CorrelationModel;
  name: string;
  personClassId: number;
  confidenceFloor: number;
}

export function handleRequestLine(cfg: ServeConfig, line: string): string {
  if (line.trim() === "") {
    return "";
  }
  let id = -1;
  try {
    const request = parseDetectRequest(line);
    id = request.id;
    const image = decodePng(Buffer.from(request.image_png_b64, "base64"));
    const detections: ProtocolDetection[] = [];
    for (const det of cfg.model.infer(image)) {
      if (det.classId !== cfg.personClassId) continue;
      if (det.score < cfg.confidenceFloor) continue;
      const corner = centerToCorner(det.box);
      const out: ProtocolDetection = {
        x: corner.x,
        y: corner.y,
        w: corner.w,
        h: corner.h,
        objectness: Math.min(1, Math.max(0, det.score)),
        class_scores: [1.0],
      };
      validateDetection(out);
      detections.push(out);
    }
    return detectionsMessage(id, detections);
  } catch (err) {
    if (id === -1) {
      id = requestId(line);
    }
    const message = err instanceof RequestError || err instanceof Error
      ? err.message
      : String(err);
    return errorMessage(id, message);
  }
}

export function serve(cfg: ServeConfig): Promise<void> {
  process.stdout.write(helloMessage(cfg.name, cfg.model.classes) + "\n");
  const rl = readline.createInterface({ input: process.stdin, terminal: false });
  return new Promise((resolve) => {
    rl.on("line", (line) => {
      const response = handleRequestLine(cfg, line);
      if (response !== "") {
        process.stdout.write(response + "\n");
      }
    });
    rl.on("close", resolve);
  });
}
