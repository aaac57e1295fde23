/**
 * Backend service CLI.
 *
 *   serve  --vocab V --templates T --gt G [--dim 64] [--seed 0] [--port 7878]
 *          [--record fixture.jsonl | --replay fixture.jsonl] [--models NAME]
 *   export --detector maskrcnn|gdino --gt G --vocab V --out PATH
 *          [--out-bg PATH] [--budget 300] [--score-threshold 0.5] [--seed 0]
 */

import { parseArgs } from "node:util";

import { writeExports } from "./exporter.js";
import { SyntheticProvider, loadGroundTruth, loadTemplates, loadVocab, respond } from "./provider.js";
import { Recorder, ReplayStore } from "./replay.js";
import { startServer } from "./server.js";

function fail(message: string): never {
  console.error(`error: ${message}`);
  process.exit(2);
}

async function cmdServe(argv: string[]): Promise<void> {
  const { values } = parseArgs({
    args: argv,
    options: {
      port: { type: "string", default: "7878" },
      host: { type: "string", default: "127.0.0.1" },
      vocab: { type: "string" },
      templates: { type: "string" },
      gt: { type: "string" },
      dim: { type: "string", default: "64" },
      seed: { type: "string", default: "0" },
      models: { type: "string", default: "synthetic" },
      record: { type: "string" },
      replay: { type: "string" },
    },
  });

  let responder: (request: { kind: string }) => string;
  let label: string;
  if (values.replay) {
    const store = ReplayStore.load(values.replay);
    responder = (request) => store.handle(request);
    label = `replay fixture ${values.replay} (${store.size} recorded responses)`;
  } else {
    if (!values.vocab || !values.templates || !values.gt) {
      fail("serve needs --vocab, --templates and --gt (or --replay)");
    }
    const provider = new SyntheticProvider({
      vocab: loadVocab(values.vocab),
      templates: loadTemplates(values.templates),
      gt: loadGroundTruth(values.gt),
      dim: Number(values.dim),
      seed: Number(values.seed),
    });
    if (values.record) {
      const recorder = new Recorder(values.record, provider);
      responder = (request) => recorder.handle(request);
      label = `${provider.backendId}, recording to ${values.record}`;
    } else {
      responder = (request) => respond(provider, request as Parameters<typeof respond>[1]);
      label = provider.backendId;
    }
  }

  const handle = await startServer(responder, Number(values.port), values.host);
  console.log(`listening on port ${handle.port} (${label})`);
  await new Promise(() => undefined); // run until killed
}

function cmdExport(argv: string[]): void {
  const { values } = parseArgs({
    args: argv,
    options: {
      detector: { type: "string" },
      gt: { type: "string" },
      vocab: { type: "string" },
      out: { type: "string" },
      "out-bg": { type: "string" },
      budget: { type: "string", default: "300" },
      "score-threshold": { type: "string", default: "0.5" },
      seed: { type: "string", default: "0" },
    },
  });
  if (values.detector !== "maskrcnn" && values.detector !== "gdino") {
    fail("--detector must be maskrcnn or gdino");
  }
  if (!values.gt || !values.vocab || !values.out) {
    fail("export needs --gt, --vocab and --out");
  }
  writeExports(
    values.detector,
    {
      gt: loadGroundTruth(values.gt),
      vocab: loadVocab(values.vocab),
      budget: Number(values.budget),
      scoreThreshold: Number(values["score-threshold"]),
      seed: Number(values.seed),
    },
    values.out,
    values["out-bg"],
  );
  console.log(`wrote ${values.out}${values["out-bg"] ? ` and ${values["out-bg"]}` : ""}`);
}

async function main(): Promise<void> {
  const [command, ...rest] = process.argv.slice(2);
  switch (command) {
    case "serve":
      await cmdServe(rest);
      break;
    case "export":
      cmdExport(rest);
      break;
    default:
      fail(`unknown command ${command ?? "(none)"}; expected serve or export`);
  }
}

main().catch((err) => {
  console.error(err);
  process.exit(1);
});
