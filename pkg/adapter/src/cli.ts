#!/usr/bin/env node
import { runEmbedJob } from "./embed.js";
import { runPredictJob } from "./predict.js";

function parseFlags(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    const value = argv[i + 1];
    if (!key?.startsWith("--") || value === undefined) {
      throw new Error(`expected --flag value pairs, got ${JSON.stringify(argv)}`);
    }
    flags.set(key.slice(2), value);
  }
  return flags;
}

function required(flags: Map<string, string>, name: string): string {
  const v = flags.get(name);
  if (v === undefined) throw new Error(`missing required flag --${name}`);
  return v;
}

const USAGE = `usage:
  glean-adapter predict --model echo --requests requests.jsonl --out predictions.jsonl [--batch 32]
  glean-adapter embed --model hash-encoder --tables tables.jsonl --examples examples.jsonl --out embeddings.jsonl [--dim 64]
`;

export async function main(argv: string[]): Promise<number> {
  const [command, ...rest] = argv;
  try {
    if (command === "predict") {
      const flags = parseFlags(rest);
      const result = await runPredictJob({
        modelTag: required(flags, "model"),
        requestsPath: required(flags, "requests"),
        outPath: required(flags, "out"),
        batchSize: flags.has("batch") ? Number(flags.get("batch")) : undefined,
        device: flags.get("device"),
      });
      console.log(
        `wrote ${result.written} predictions (${result.resumed} resumed) with ` +
          JSON.stringify(result.settings)
      );
      return 0;
    }
    if (command === "embed") {
      const flags = parseFlags(rest);
      const result = await runEmbedJob({
        modelTag: required(flags, "model"),
        tablesPath: required(flags, "tables"),
        examplesPath: required(flags, "examples"),
        outPath: required(flags, "out"),
        dim: flags.has("dim") ? Number(flags.get("dim")) : undefined,
      });
      console.log(`wrote ${result.written} embedding records (dim ${result.dim}, unit norm)`);
      return 0;
    }
    console.error(USAGE);
    return command ? 1 : 0;
  } catch (e) {
    console.error(`error: ${(e as Error).message}`);
    return 1;
  }
}

const invokedDirectly = process.argv[1]?.endsWith("cli.js") || process.argv[1]?.endsWith("cli.ts");
if (invokedDirectly) {
  main(process.argv.slice(2)).then((code) => {
    process.exitCode = code;
  });
}
