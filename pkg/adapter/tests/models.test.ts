import { describe, expect, it } from "vitest";

import { EchoModel, HashEncoder, resolveEncoder, resolveQaModel } from "../src/models.js";

describe("echo model", () => {
  it("copies the planted field", async () => {
    const model = new EchoModel();
    const out = await model.predictBatch([
      { id: "a", question: "q", context: "c", planted: "42" },
    ]);
    expect(out).toEqual(["42"]);
  });

  it("fails loudly when requests lack the planted field", async () => {
    const model = new EchoModel();
    await expect(
      model.predictBatch([{ id: "a", question: "q", context: "c" }])
    ).rejects.toThrow(/planted/);
  });
});

describe("hash encoder", () => {
  it("is deterministic and unit length", async () => {
    const enc = new HashEncoder();
    const [a] = await enc.encode(["the quick brown fox"]);
    const [b] = await enc.encode(["the quick brown fox"]);
    expect(a).toEqual(b);
    const norm = Math.hypot(...a);
    expect(Math.abs(norm - 1)).toBeLessThan(1e-6);
  });

  it("identical rows get identical vectors", async () => {
    const enc = new HashEncoder();
    const [a, b] = await enc.encode(["row one text", "row one text"]);
    expect(a).toEqual(b);
  });

  it("empty text still yields a unit vector", async () => {
    const enc = new HashEncoder(16);
    const [v] = await enc.encode([""]);
    expect(v).toHaveLength(16);
    expect(Math.abs(Math.hypot(...v) - 1)).toBeLessThan(1e-6);
  });

  it("respects the requested dimension", async () => {
    const enc = resolveEncoder("hash-encoder", 32);
    const [v] = await enc.encode(["abc"]);
    expect(v).toHaveLength(32);
  });
});

describe("registry", () => {
  it("rejects unknown tags", () => {
    expect(() => resolveQaModel("gpt-unknown")).toThrow(/unknown QA model/);
    expect(() => resolveEncoder("nope")).toThrow(/unknown encoder/);
  });
});
