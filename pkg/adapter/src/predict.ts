import { readJsonl, readJsonlIfExists, writeJsonlAtomic } from "./jsonl.js";
import { resolveQaModel } from "./models.js";
import { parseRequest, PredictionRecord, validatePrediction } from "./schemas.js";

export interface PredictJob {
  modelTag: string;
  requestsPath: string;
  outPath: string;
  batchSize?: number;
  device?: string;
}

export interface PredictResult {
  written: number;
  resumed: number;
  settings: Record<string, unknown>;
}

/**
 * One prediction per request id. Batches run sequentially with deterministic
 * decoding; a partial output file is picked up and completed rather than
 * recomputed, and the final file is written atomically.
 */
export async function runPredictJob(job: PredictJob): Promise<PredictResult> {
  const model = resolveQaModel(job.modelTag);
  const batchSize = job.batchSize ?? 32;
  const requests = readJsonl(job.requestsPath).map((obj, i) =>
    parseRequest(obj, `${job.requestsPath}:${i + 1}`)
  );
  const done = new Map<string, string>();
  for (const rec of readJsonlIfExists(job.outPath)) {
    if (typeof rec.id === "string" && typeof rec.prediction === "string") {
      done.set(rec.id, rec.prediction);
    }
  }
  const pending = requests.filter((r) => !done.has(r.id));
  for (let i = 0; i < pending.length; i += batchSize) {
    const batch = pending.slice(i, i + batchSize);
    const answers = await model.predictBatch(batch);
    batch.forEach((r, j) => done.set(r.id, answers[j]));
  }
  const records: PredictionRecord[] = requests.map((r) => ({
    id: r.id,
    prediction: done.get(r.id) as string,
  }));
  for (const rec of records) {
    const errors = validatePrediction(rec);
    if (errors.length) throw new Error(`invalid prediction for ${rec.id}: ${errors.join("; ")}`);
  }
  writeJsonlAtomic(job.outPath, records);
  return {
    written: records.length,
    resumed: requests.length - pending.length,
    settings: { model: model.tag, batch_size: batchSize, decoding: "deterministic", device: job.device ?? "cpu" },
  };
}
