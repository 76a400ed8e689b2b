import { readJsonl, writeJsonlAtomic } from "./jsonl.js";
import { resolveEncoder } from "./models.js";
import { EmbeddingRecord, validateEmbedding } from "./schemas.js";

export interface EmbedJob {
  modelTag: string;
  tablesPath: string;
  examplesPath: string;
  outPath: string;
  dim?: number;
}

export interface EmbedResult {
  written: number;
  dim: number;
  normalized: boolean;
}

interface TableRecord {
  table_id: string;
  headers: string[];
  rows: string[][];
}

function rowText(headers: string[], row: string[]): string {
  return headers.map((h, j) => `${h} ${row[j]}`).join(" ");
}

/**
 * One embedding record per example: the question vector plus one vector per
 * table row (header-contextualized cell text). Vectors are unit length and
 * share a fixed dimension, which the core checks again at ingest.
 */
export async function runEmbedJob(job: EmbedJob): Promise<EmbedResult> {
  const encoder = resolveEncoder(job.modelTag, job.dim);
  const tables = new Map<string, TableRecord>();
  for (const rec of readJsonl(job.tablesPath)) {
    tables.set(rec.table_id as string, rec as unknown as TableRecord);
  }
  const records: EmbeddingRecord[] = [];
  for (const rec of readJsonl(job.examplesPath)) {
    if (rec.task !== undefined && rec.task !== "qa") continue;
    const table = tables.get(rec.table_id as string);
    if (!table) throw new Error(`example ${rec.id} references unknown table ${rec.table_id}`);
    const texts = [rec.question as string, ...table.rows.map((r) => rowText(table.headers, r))];
    const vecs = await encoder.encode(texts);
    const record: EmbeddingRecord = {
      id: rec.id as string,
      model_tag: encoder.tag,
      question_vec: vecs[0],
      row_vecs: vecs.slice(1),
    };
    const errors = validateEmbedding(record);
    if (errors.length) throw new Error(`invalid embedding for ${record.id}: ${errors.join("; ")}`);
    records.push(record);
  }
  writeJsonlAtomic(job.outPath, records);
  return { written: records.length, dim: encoder.dim, normalized: true };
}
