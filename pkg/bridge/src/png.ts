import { PNG } from "pngjs";
import { FloatImage } from "./model.js";

/** Decode a PNG buffer to interleaved RGB floats in [0, 1] (alpha dropped). */
export function decodePng(buffer: Buffer): FloatImage {
  const png = PNG.sync.read(buffer);
  const { width, height } = png;
  const out = new Float64Array(width * height * 3);
  for (let i = 0; i < width * height; i++) {
    out[i * 3] = png.data[i * 4] / 255;
    out[i * 3 + 1] = png.data[i * 4 + 1] / 255;
    out[i * 3 + 2] = png.data[i * 4 + 2] / 255;
  }
  return { width, height, data: out };
}

/** Encode interleaved RGB floats to a PNG buffer (used by tests). */
export function encodePng(image: FloatImage): Buffer {
  const png = new PNG({ width: image.width, height: image.height });
  for (let i = 0; i < image.width * image.height; i++) {
    png.data[i * 4] = Math.round(image.data[i * 3] * 255);
    png.data[i * 4 + 1] = Math.round(image.data[i * 3 + 1] * 255);
    png.data[i * 4 + 2] = Math.round(image.data[i * 3 + 2] * 255);
    png.data[i * 4 + 3] = 255;
  }
  return PNG.sync.write(png);
}
