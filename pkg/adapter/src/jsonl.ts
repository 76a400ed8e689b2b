import { readFileSync, renameSync, writeFileSync, existsSync, mkdirSync } from "node:fs";
import { dirname } from "node:path";

export function readJsonl(path: string): Record<string, unknown>[] {
  const out: Record<string, unknown>[] = [];
  const text = readFileSync(path, "utf-8");
  let lineNo = 0;
  for (const line of text.split("\n")) {
    lineNo += 1;
    if (!line.trim()) continue;
    let obj: unknown;
    try {
      obj = JSON.parse(line);
    } catch (e) {
      throw new Error(`${path}:${lineNo}: invalid JSON (${(e as Error).message})`);
    }
    if (typeof obj !== "object" || obj === null || Array.isArray(obj)) {
      throw new Error(`${path}:${lineNo}: record must be an object`);
    }
    out.push(obj as Record<string, unknown>);
  }
  return out;
}

/** Write-temp-then-rename so a crashed job never leaves a torn file. */
export function writeJsonlAtomic(path: string, records: Iterable<unknown>): void {
  mkdirSync(dirname(path), { recursive: true });
  const lines: string[] = [];
  for (const rec of records) {
    lines.push(JSON.stringify(rec));
  }
  const tmp = `${path}.tmp`;
  writeFileSync(tmp, lines.length ? lines.join("\n") + "\n" : "", "utf-8");
  renameSync(tmp, path);
}

export function readJsonlIfExists(path: string): Record<string, unknown>[] {
  return existsSync(path) ? readJsonl(path) : [];
}
