#!/usr/bin/env node
/**
 * CLI entry. Flags:
 *   --model PATH            exported model file (or ARTWALK_BRIDGE_MODEL env)
 *   --person-class-id N     class id reported as "person" (default 0)
 *   --conf-floor F          drop detections below this confidence (default 0.01)
 *   --name NAME             adapter name in the hello message
 *
 * Exit codes: 0 clean shutdown (stdin closed), 2 model load failure.
 */

import { CorrelationModel } from "./model.js";
import { errorMessage } from "./protocol.js";
import { serve } from "./serve.js";

function parseArgs(argv: string[]): Map<string, string> {
  const out = new Map<string, string>();
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (!arg.startsWith("--")) continue;
    out.set(arg.slice(2), argv[i + 1] ?? "");
    i++;
  }
  return out;
}

async function main(): Promise<number> {
  const args = parseArgs(process.argv.slice(2));
  const modelPath = args.get("model") ?? process.env.ARTWALK_BRIDGE_MODEL;
  if (!modelPath) {
    process.stdout.write(errorMessage(0, "no model: pass --model or set ARTWALK_BRIDGE_MODEL") + "\n");
    return 2;
  }
  let model: CorrelationModel;
  try {
    model = CorrelationModel.load(modelPath);
  } catch (err) {
    const message = err instanceof Error ? err.message : String(err);
    process.stdout.write(errorMessage(0, `model load failed: ${message}`) + "\n");
    return 2;
  }
  await serve({
    model,
    name: args.get("name") ?? "artwalk-bridge",
    personClassId: Number(args.get("person-class-id") ?? "0"),
    confidenceFloor: Number(args.get("conf-floor") ?? "0.01"),
  });
  return 0;
}

main().then((code) => process.exit(code));
