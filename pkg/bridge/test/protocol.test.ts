import { describe, expect, it } from "vitest";
import {
  RequestError,
  detectionsMessage,
  errorMessage,
  helloMessage,
  parseDetectRequest,
  requestId,
  validateDetection,
} from "../src/protocol.js";

describe("protocol parsing", () => {
  it("accepts a well-formed request", () => {
    const req = parseDetectRequest('{"type":"detect","id":3,"image_png_b64":"aGk="}');
    expect(req.id).toBe(3);
    expect(req.image_png_b64).toBe("aGk=");
  });

  it("rejects junk, wrong type, and missing fields", () => {
    expect(() => parseDetectRequest("not json {")).toThrow(RequestError);
    expect(() => parseDetectRequest('{"type":"ping","id":1}')).toThrow(RequestError);
    expect(() => parseDetectRequest('{"type":"detect","id":1.5,"image_png_b64":""}')).toThrow(
      RequestError,
    );
    expect(() => parseDetectRequest('{"type":"detect","id":1}')).toThrow(RequestError);
    expect(() => parseDetectRequest("[1,2,3]")).toThrow(RequestError);
  });

  it("extracts ids from malformed requests when possible", () => {
    expect(requestId('{"type":"nope","id":9}')).toBe(9);
    expect(requestId("garbage")).toBe(-1);
  });

  it("serializes messages", () => {
    expect(JSON.parse(helloMessage("b", ["person"]))).toEqual({
      type: "hello",
      name: "b",
      classes: ["person"],
    });
    const msg = JSON.parse(
      detectionsMessage(4, [{ x: 1, y: 2, w: 3, h: 4, objectness: 0.5, class_scores: [1] }]),
    );
    expect(msg.id).toBe(4);
    expect(msg.detections).toHaveLength(1);
    expect(JSON.parse(errorMessage(7, "boom"))).toEqual({
      type: "error",
      id: 7,
      message: "boom",
    });
  });

  it("validates detection invariants", () => {
    expect(() =>
      validateDetection({ x: 0, y: 0, w: 0, h: 4, objectness: 0.5, class_scores: null }),
    ).toThrow();
    expect(() =>
      validateDetection({ x: 0, y: 0, w: 4, h: 4, objectness: 1.5, class_scores: null }),
    ).toThrow();
    expect(() =>
      validateDetection({ x: 0, y: 0, w: 4, h: 4, objectness: 0.5, class_scores: [2] }),
    ).toThrow();
  });
});
