/**
 * The evaluation core's JSONL wire formats. The adapter validates its own
 * output before writing so schema drift fails here, not downstream.
 */

export interface InferenceRequest {
  id: string;
  question: string;
  context: string;
  planted?: string;
}

export interface PredictionRecord {
  id: string;
  prediction: string;
}

export interface EmbeddingRecord {
  id: string;
  model_tag: string;
  question_vec: number[];
  row_vecs: number[][];
}

export function parseRequest(obj: Record<string, unknown>, where: string): InferenceRequest {
  if (typeof obj.id !== "string" || !obj.id) throw new Error(`${where}: missing id`);
  if (typeof obj.question !== "string") throw new Error(`${where}: missing question`);
  if (typeof obj.context !== "string") throw new Error(`${where}: missing context`);
  if (obj.planted !== undefined && typeof obj.planted !== "string") {
    throw new Error(`${where}: planted must be a string`);
  }
  return obj as unknown as InferenceRequest;
}

export function validatePrediction(rec: PredictionRecord): string[] {
  const errors: string[] = [];
  if (typeof rec.id !== "string" || !rec.id) errors.push("id must be a nonempty string");
  if (typeof rec.prediction !== "string") errors.push("prediction must be a string");
  return errors;
}

export function validateEmbedding(rec: EmbeddingRecord): string[] {
  const errors: string[] = [];
  if (typeof rec.id !== "string" || !rec.id) errors.push("id must be a nonempty string");
  if (typeof rec.model_tag !== "string" || !rec.model_tag) errors.push("model_tag missing");
  if (!isFiniteVector(rec.question_vec)) errors.push("question_vec must be finite numbers");
  if (!Array.isArray(rec.row_vecs) || !rec.row_vecs.every(isFiniteVector)) {
    errors.push("row_vecs must be arrays of finite numbers");
  } else {
    const dim = rec.question_vec.length;
    if (rec.row_vecs.some((v) => v.length !== dim)) {
      errors.push("row vector dimension differs from question vector");
    }
  }
  return errors;
}

function isFiniteVector(v: unknown): v is number[] {
  return Array.isArray(v) && v.length > 0 && v.every((x) => typeof x === "number" && Number.isFinite(x));
}
