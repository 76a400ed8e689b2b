import { createHash } from "node:crypto";

import { InferenceRequest } from "./schemas.js";

/**
 * A QA model turns a batch of inference requests into answer strings.
 * Real checkpoint-backed models implement the same interface (greedy
 * decoding, fixed seeds) and plug into the registry below; the built-ins
 * are deterministic and network-free so CI can close the loop.
 */
export interface QaModel {
  tag: string;
  predictBatch(requests: InferenceRequest[]): Promise<string[]>;
}

/** Debug loopback: copies the planted answer field from each request. */
export class EchoModel implements QaModel {
  tag = "echo";

  async predictBatch(requests: InferenceRequest[]): Promise<string[]> {
    return requests.map((r) => {
      if (r.planted === undefined) {
        throw new Error(`request ${r.id} has no planted field; re-emit requests with --planted`);
      }
      return r.planted;
    });
  }
}

export interface Encoder {
  tag: string;
  dim: number;
  encode(texts: string[]): Promise<number[][]>;
}

/**
 * Deterministic pseudo-encoder: token hashes bucketed into a fixed-width
 * vector, L2-normalized. Identical text always yields the identical unit
 * vector, shared tokens yield correlated vectors, and no model weights are
 * needed, which is exactly enough to exercise the dense-retrieval path.
 */
export class HashEncoder implements Encoder {
  tag = "hash-encoder";
  dim: number;

  constructor(dim = 64) {
    this.dim = dim;
  }

  async encode(texts: string[]): Promise<number[][]> {
    return texts.map((t) => this.encodeOne(t));
  }

  private encodeOne(text: string): number[] {
    const vec = new Array<number>(this.dim).fill(0);
    const tokens = text.toLowerCase().match(/\w+/g) ?? [];
    for (const tok of tokens) {
      const digest = createHash("sha256").update(tok).digest();
      const bucket = digest.readUInt32BE(0) % this.dim;
      const sign = digest[4] & 1 ? 1 : -1;
      vec[bucket] += sign;
    }
    const norm = Math.hypot(...vec);
    if (norm === 0) {
      vec[0] = 1; // empty text still needs a valid unit vector
      return vec;
    }
    return vec.map((x) => x / norm);
  }
}

export function resolveQaModel(tag: string): QaModel {
  if (tag === "echo") return new EchoModel();
  throw new Error(`unknown QA model tag ${JSON.stringify(tag)} (built-in: echo)`);
}

export function resolveEncoder(tag: string, dim?: number): Encoder {
  if (tag === "hash-encoder") return new HashEncoder(dim);
  throw new Error(`unknown encoder tag ${JSON.stringify(tag)} (built-in: hash-encoder)`);
}
