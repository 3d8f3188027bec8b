#!/usr/bin/env node
import yargs from "yargs";
import { hideBin } from "yargs/helpers";
import { extractDir } from "./extract.js";
import { defaultConfig } from "./model.js";
import { selfcheck } from "./selfcheck.js";

const sizeOptions = {
  size: { type: "number", default: 518, describe: "input side length (= render size)" },
  batch: { type: "number", default: 8, describe: "inference batch size" },
  device: { choices: ["auto", "cpu"] as const, default: "auto" as const },
  model: { type: "string", describe: "model id override" },
  revision: { type: "string", describe: "model revision override" },
  cache: { type: "string", describe: "local model cache dir (enables offline mode)" },
} as const;

function buildConfig(argv: Record<string, unknown>) {
  return defaultConfig({
    inputSize: argv.size as number,
    batchSize: argv.batch as number,
    device: argv.device as "auto" | "cpu",
    ...(argv.model ? { modelId: argv.model as string } : {}),
    ...(argv.revision ? { revision: argv.revision as string } : {}),
    ...(argv.cache ? { cacheDir: argv.cache as string } : {}),
  });
}

await yargs(hideBin(process.argv))
  .scriptName("symplane-extract")
  .command(
    "extract",
    "write one FMAP per render PNG",
    (y) => y.options({ in: { type: "string", demandOption: true }, out: { type: "string", demandOption: true }, ...sizeOptions }),
    async (argv) => {
      const report = await extractDir(argv.in, argv.out, buildConfig(argv));
      console.log(`${report.written.length} FMAP file(s) written, ${report.errors.length} error(s)`);
      if (report.errors.length > 0) process.exitCode = 1;
    }
  )
  .command(
    "selfcheck",
    "verify model output shape and mirrored-patch stability",
    (y) => y.options(sizeOptions),
    async (argv) => {
      const report = await selfcheck(buildConfig(argv));
      console.log(JSON.stringify(report, null, 2));
      if (!report.pass) process.exitCode = 1;
    }
  )
  .demandCommand(1)
  .strict()
  .fail((msg, err) => {
    console.error(msg ?? String(err));
    process.exit(err && !msg ? 1 : 64);
  })
  .parseAsync();
