/**
 * Exported correlation-detection model ("corrdet-v1").
 *
 * The model file carries a pedestrian template (RGB planes + silhouette
 * mask), window geometry, and score calibration. Inference slides the window
 * over the image, scores each placement by normalized cross-correlation
 * against the padded template, squashes through a sigmoid, and applies
 * greedy NMS. Boxes come out center-based (cx, cy, w, h), YOLO-style.
 */

import { readFileSync } from "node:fs";
import { CenterBox } from "./boxes.js";

export interface FloatImage {
  width: number;
  height: number;
  /** RGB interleaved, values in [0, 1] */
  data: Float64Array;
}

export interface ModelDetection {
  box: CenterBox;
  score: number;
  classId: number;
}

interface ModelFile {
  format: string;
  classes: string[];
  window: [number, number];
  gain: number;
  threshold: number;
  nms_iou: number;
  var_floor: number;
  objectness_floor: number;
  template: {
    width: number;
    height: number;
    rgb_b64: string; // float32 LE, h*w*3
    mask_b64: string; // uint8, h*w, nonzero = silhouette
    pad: [number, number, number];
  };
}

export class CorrelationModel {
  readonly classes: string[];
  private readonly windowW: number;
  private readonly windowH: number;
  private readonly gain: number;
  private readonly threshold: number;
  private readonly nmsIou: number;
  private readonly varFloor: number;
  private readonly objectnessFloor: number;
  private readonly templateW: number;
  private readonly templateH: number;
  private readonly kernel: Float64Array; // window-size RGB, per-channel zero-mean
  private readonly kernelNorm: number; // sum of kernel squares

  constructor(doc: ModelFile) {
    if (doc.format !== "corrdet-v1") {
      throw new Error(`unsupported model format: ${doc.format}`);
    }
    this.classes = doc.classes;
    [this.windowW, this.windowH] = doc.window;
    this.gain = doc.gain;
    this.threshold = doc.threshold;
    this.nmsIou = doc.nms_iou;
    this.varFloor = doc.var_floor;
    this.objectnessFloor = doc.objectness_floor;
    this.templateW = doc.template.width;
    this.templateH = doc.template.height;
    if (this.templateW > this.windowW || this.templateH > this.windowH) {
      throw new Error("template larger than window");
    }

    const rgbBuf = Buffer.from(doc.template.rgb_b64, "base64");
    const mask = Buffer.from(doc.template.mask_b64, "base64");
    const tpl = new Float32Array(rgbBuf.buffer, rgbBuf.byteOffset, rgbBuf.byteLength / 4);
    if (tpl.length !== this.templateW * this.templateH * 3) {
      throw new Error("template rgb plane has the wrong length");
    }
    if (mask.length !== this.templateW * this.templateH) {
      throw new Error("template mask has the wrong length");
    }

    // padded template: pad color everywhere, template RGB on the silhouette
    const wW = this.windowW;
    const wH = this.windowH;
    const ox = Math.floor((wW - this.templateW) / 2);
    const oy = Math.floor((wH - this.templateH) / 2);
    const kernel = new Float64Array(wW * wH * 3);
    for (let i = 0; i < wW * wH; i++) {
      kernel[i * 3] = doc.template.pad[0];
      kernel[i * 3 + 1] = doc.template.pad[1];
      kernel[i * 3 + 2] = doc.template.pad[2];
    }
    for (let ty = 0; ty < this.templateH; ty++) {
      for (let tx = 0; tx < this.templateW; tx++) {
        if (mask[ty * this.templateW + tx] === 0) continue;
        const src = (ty * this.templateW + tx) * 3;
        const dst = ((oy + ty) * wW + (ox + tx)) * 3;
        kernel[dst] = tpl[src];
        kernel[dst + 1] = tpl[src + 1];
        kernel[dst + 2] = tpl[src + 2];
      }
    }
    // per-channel mean removal
    const n = wW * wH;
    for (let c = 0; c < 3; c++) {
      let mean = 0;
      for (let i = 0; i < n; i++) mean += kernel[i * 3 + c];
      mean /= n;
      for (let i = 0; i < n; i++) kernel[i * 3 + c] -= mean;
    }
    let norm = 0;
    for (let i = 0; i < kernel.length; i++) norm += kernel[i] * kernel[i];
    if (norm <= 0) {
      throw new Error("template has no contrast against its padding");
    }
    this.kernel = kernel;
    this.kernelNorm = norm;
  }

  static load(path: string): CorrelationModel {
    return new CorrelationModel(JSON.parse(readFileSync(path, "utf-8")) as ModelFile);
  }

  get templateOffset(): [number, number] {
    return [
      Math.floor((this.windowW - this.templateW) / 2),
      Math.floor((this.windowH - this.templateH) / 2),
    ];
  }

  infer(image: FloatImage): ModelDetection[] {
    const { width: w, height: h, data } = image;
    const wW = this.windowW;
    const wH = this.windowH;
    if (w < wW || h < wH) return [];
    const nx = w - wW + 1;
    const ny = h - wH + 1;
    const nPx = wW * wH;

    // integral images for per-channel window sums and total sum of squares
    const cols = w + 1;
    const s1 = [
      new Float64Array((h + 1) * cols),
      new Float64Array((h + 1) * cols),
      new Float64Array((h + 1) * cols),
    ];
    const s2 = new Float64Array((h + 1) * cols);
    for (let y = 0; y < h; y++) {
      let row0 = 0;
      let row1 = 0;
      let row2 = 0;
      let rowSq = 0;
      for (let x = 0; x < w; x++) {
        const p = (y * w + x) * 3;
        const r = data[p];
        const g = data[p + 1];
        const b = data[p + 2];
        row0 += r;
        row1 += g;
        row2 += b;
        rowSq += r * r + g * g + b * b;
        const idx = (y + 1) * cols + (x + 1);
        const up = y * cols + (x + 1);
        s1[0][idx] = s1[0][up] + row0;
        s1[1][idx] = s1[1][up] + row1;
        s1[2][idx] = s1[2][up] + row2;
        s2[idx] = s2[up] + rowSq;
      }
    }
    const windowSum = (ii: Float64Array, x0: number, y0: number): number =>
      ii[(y0 + wH) * cols + (x0 + wW)] -
      ii[y0 * cols + (x0 + wW)] -
      ii[(y0 + wH) * cols + x0] +
      ii[y0 * cols + x0];

    const candidates: { x0: number; y0: number; score: number }[] = [];
    const kernel = this.kernel;
    for (let y0 = 0; y0 < ny; y0++) {
      for (let x0 = 0; x0 < nx; x0++) {
        let cov = 0;
        let k = 0;
        for (let dy = 0; dy < wH; dy++) {
          let p = ((y0 + dy) * w + x0) * 3;
          for (let dx = 0; dx < wW; dx++) {
            cov += data[p] * kernel[k] + data[p + 1] * kernel[k + 1] + data[p + 2] * kernel[k + 2];
            p += 3;
            k += 3;
          }
        }
        let ss =
          windowSum(s2, x0, y0) -
          (windowSum(s1[0], x0, y0) ** 2 +
            windowSum(s1[1], x0, y0) ** 2 +
            windowSum(s1[2], x0, y0) ** 2) /
            nPx;
        if (ss < 0) ss = 0;
        const score = cov / Math.sqrt(this.kernelNorm * (ss + this.varFloor));
        const objectness = 1 / (1 + Math.exp(-this.gain * (score - this.threshold)));
        if (objectness > this.objectnessFloor) {
          candidates.push({ x0, y0, score: objectness });
        }
      }
    }

    candidates.sort((a, b) => b.score - a.score || a.y0 - b.y0 || a.x0 - b.x0);
    const [ox, oy] = this.templateOffset;
    const kept: ModelDetection[] = [];
    const keptBoxes: { x: number; y: number }[] = [];
    const tw = this.templateW;
    const th = this.templateH;
    for (const cand of candidates) {
      const bx = cand.x0 + ox;
      const by = cand.y0 + oy;
      let clash = false;
      for (const other of keptBoxes) {
        const ix = Math.max(0, Math.min(bx + tw, other.x + tw) - Math.max(bx, other.x));
        const iy = Math.max(0, Math.min(by + th, other.y + th) - Math.max(by, other.y));
        const inter = ix * iy;
        const iou = inter / (2 * tw * th - inter);
        if (iou > this.nmsIou) {
          clash = true;
          break;
        }
      }
      if (clash) continue;
      keptBoxes.push({ x: bx, y: by });
      kept.push({
        box: { cx: bx + tw / 2, cy: by + th / 2, w: tw, h: th },
        score: cand.score,
        classId: 0,
      });
    }
    return kept;
  }
}
