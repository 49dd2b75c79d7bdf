/**
 * In-host bindings to the windowshift augmentation pipeline.
 *
 * A handle wraps a persistent `windowshift pipeline-worker` process; slices
 * travel as NPY buffers and line-delimited JSON. The bindings add no
 * numerics of their own, so outputs are bit-identical to the CLI pipeline
 * for the same (seed, slice id, epoch).
 */

import { spawn, type ChildProcessByStdio } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { createInterface, type Interface } from "node:readline";
import type { Readable, Writable } from "node:stream";
import { z } from "zod";

import { readNpy, writeNpy, type NpyData } from "./npy.js";

const windowSchema = z.object({ level: z.number(), width: z.number() });

const statsSchema = z.object({
  schema_version: z.literal(1),
  n_foreground: z.number().int().nonnegative(),
  base_window: windowSchema,
  normalization: z.object({ mean: z.number(), std: z.number().positive() }),
  shift_bounds: z
    .object({
      level_low: z.number(),
      level_high: z.number(),
      probability: z.number().min(0).max(1),
    })
    .optional(),
});

const policySchema = z.object({
  schema_version: z.literal(1),
  specs: z.array(
    z.object({
      kind: z.string(),
      probability: z.number().min(0).max(1),
      params: z.record(z.unknown()),
    }),
  ),
});

export interface ViewingWindow {
  level: number;
  width: number;
}

export interface SliceId {
  sourceId: string;
  index: number;
}

export interface AuditOp {
  kind: string;
  fired: boolean;
  [param: string]: unknown;
}

export interface AuditRecord {
  window: ViewingWindow;
  window_shifted: boolean;
  ops: AuditOp[];
}

export interface PipelineResult {
  pixels: Float32Array;
  shape: number[];
  mask: Uint8Array | null;
  audit: AuditRecord | null;
}

export interface OpenOptions {
  /** Override the worker command, e.g. ["python3", "-m", "windowshift.cli"]. */
  command?: string[];
  /** Override the window-shift gate probability recorded in the policy. */
  p?: number;
}

/** Validate a JSON document file, surfacing the offending field on failure. */
function loadValidated<T>(path: string, schema: z.ZodType<T>, label: string): T {
  let raw: string;
  try {
    raw = readFileSync(path, "utf-8");
  } catch (err) {
    throw new Error(`${label}: cannot read ${path}: ${(err as Error).message}`);
  }
  let doc: unknown;
  try {
    doc = JSON.parse(raw);
  } catch (err) {
    throw new Error(`${label}: not valid JSON: ${(err as Error).message}`);
  }
  const parsed = schema.safeParse(doc);
  if (!parsed.success) {
    const issue = parsed.error.issues[0];
    const field = issue.path.length ? issue.path.join(".") : "(document)";
    throw new Error(`${label}: invalid field '${field}': ${issue.message}`);
  }
  return parsed.data;
}

interface WorkerReply {
  ok: boolean;
  ready?: boolean;
  bye?: boolean;
  error?: string;
  audit?: AuditRecord | null;
}

export class PipelineHandle {
  readonly statsPath: string;
  readonly policyPath: string | null;
  readonly seed: number;
  readonly baseWindow: ViewingWindow;

  private proc: ChildProcessByStdio<Writable, Readable, null>;
  private lines: Interface;
  private waiters: Array<(reply: WorkerReply) => void> = [];
  private queue: Promise<unknown> = Promise.resolve();
  private workDir: string;
  private counter = 0;
  private closed = false;

  constructor(
    statsPath: string,
    policyPath: string | null,
    seed: number,
    baseWindow: ViewingWindow,
    proc: ChildProcessByStdio<Writable, Readable, null>,
    workDir: string,
  ) {
    this.statsPath = statsPath;
    this.policyPath = policyPath;
    this.seed = seed;
    this.baseWindow = baseWindow;
    this.proc = proc;
    this.workDir = workDir;
    this.lines = createInterface({ input: proc.stdout });
    this.lines.on("line", (line) => {
      const waiter = this.waiters.shift();
      if (waiter) waiter(JSON.parse(line) as WorkerReply);
    });
  }

  /** Mirrors Python repr: shows the base window level/width. */
  describe(): string {
    return `Pipeline(level=${this.baseWindow.level}, width=${this.baseWindow.width}, seed=${this.seed})`;
  }

  private nextReply(): Promise<WorkerReply> {
    return new Promise((resolve) => this.waiters.push(resolve));
  }

  /** Serialize requests: the worker handles one at a time, in order. */
  enqueue<T>(task: () => Promise<T>): Promise<T> {
    const next = this.queue.then(task);
    this.queue = next.catch(() => undefined);
    return next;
  }

  async request(payload: Record<string, unknown>): Promise<WorkerReply> {
    if (this.closed) throw new Error("pipeline handle is closed");
    const reply = this.nextReply();
    this.proc.stdin.write(JSON.stringify(payload) + "\n");
    return reply;
  }

  scratchPath(tag: string): string {
    this.counter += 1;
    return join(this.workDir, `${tag}-${this.counter}.npy`);
  }

  async awaitReady(): Promise<void> {
    const reply = await this.nextReply();
    if (!reply.ok || !reply.ready) {
      throw new Error(`worker failed to start: ${reply.error ?? "no ready signal"}`);
    }
  }

  async close(): Promise<void> {
    if (this.closed) return;
    this.closed = true;
    try {
      this.proc.stdin.write(JSON.stringify({ op: "shutdown" }) + "\n");
    } catch {
      // already gone
    }
    await new Promise<void>((resolve) => {
      this.proc.once("exit", () => resolve());
      setTimeout(() => {
        this.proc.kill();
        resolve();
      }, 2000).unref();
    });
    this.lines.close();
    rmSync(this.workDir, { recursive: true, force: true });
  }
}

/**
 * Open a pipeline over validated stats/policy documents.
 *
 * Schema problems raise before any process is spawned, naming the bad
 * field. The returned handle is safe to share: concurrent calls are
 * serialized onto the single worker in arrival order.
 */
export async function openPipeline(
  statsPath: string,
  policyPath: string | null,
  seed: number,
  options: OpenOptions = {},
): Promise<PipelineHandle> {
  const stats = loadValidated(statsPath, statsSchema, "stats.json");
  if (policyPath !== null) {
    loadValidated(policyPath, policySchema, "policy.json");
  } else if (!stats.shift_bounds) {
    throw new Error("stats.json: invalid field 'shift_bounds': required when no policy is given");
  }

  const command = options.command ?? ["windowshift"];
  const args = [...command.slice(1), "pipeline-worker", "--stats", statsPath, "--seed", String(seed)];
  if (policyPath !== null) args.push("--policy", policyPath);
  if (options.p !== undefined) args.push("--p", String(options.p));

  const workDir = mkdtempSync(join(tmpdir(), "windowshift-bindings-"));
  const proc = spawn(command[0], args, { stdio: ["pipe", "pipe", "inherit"] });
  const handle = new PipelineHandle(statsPath, policyPath, seed, stats.base_window, proc, workDir);
  await handle.awaitReady();
  return handle;
}

function checkSlice(slice: Float32Array, shape: number[], mask: Uint8Array | null): void {
  if (shape.length !== 2) {
    throw new Error(`slices are 2D, got shape [${shape}]`);
  }
  const count = shape[0] * shape[1];
  if (slice.length !== count) {
    throw new Error(`slice length ${slice.length} does not match shape [${shape}]`);
  }
  if (mask !== null && mask.length !== count) {
    throw new Error(`mask length ${mask.length} does not match shape [${shape}]`);
  }
}

async function run(
  handle: PipelineHandle,
  op: "augment" | "preprocess",
  slice: Float32Array,
  shape: number[],
  mask: Uint8Array | null,
  sliceId: SliceId | null,
  epoch: number,
): Promise<PipelineResult> {
  checkSlice(slice, shape, mask);
  return handle.enqueue(async () => {
    const inPath = handle.scratchPath("in");
    const maskPath = mask !== null ? handle.scratchPath("in-mask") : null;
    const outPath = handle.scratchPath("out");
    const outMaskPath = mask !== null ? handle.scratchPath("out-mask") : null;
    writeNpy(inPath, { data: slice, shape });
    if (mask !== null && maskPath !== null) {
      writeNpy(maskPath, { data: mask, shape });
    }
    const payload: Record<string, unknown> = {
      op,
      slice: inPath,
      mask: maskPath,
      out: outPath,
      out_mask: outMaskPath,
    };
    if (op === "augment" && sliceId !== null) {
      payload.source_id = sliceId.sourceId;
      payload.slice_index = sliceId.index;
      payload.epoch = epoch;
    }
    const reply = await handle.request(payload);
    if (!reply.ok) {
      throw new Error(`pipeline worker: ${reply.error}`);
    }
    const result = readNpy(outPath);
    let outMask: NpyData | null = null;
    if (outMaskPath !== null) {
      outMask = readNpy(outMaskPath).data;
    }
    return {
      pixels: result.data as Float32Array,
      shape: result.shape,
      mask: (outMask as Uint8Array) ?? null,
      audit: reply.audit ?? null,
    };
  });
}

/**
 * Augment one HU slice exactly as the CLI pipeline would for the same
 * (seed, source id, slice index, epoch). Returns z-scored pixels, the
 * co-transformed mask, and the audit record of the sampled window and
 * gated operations.
 */
export function augmentSlice(
  handle: PipelineHandle,
  slice: Float32Array,
  shape: number[],
  mask: Uint8Array | null,
  sliceId: SliceId,
  epoch: number,
): Promise<PipelineResult> {
  return run(handle, "augment", slice, shape, mask, sliceId, epoch);
}

/** Inference-path preprocessing: base window, rescale, z-score. No RNG. */
export function preprocessSlice(
  handle: PipelineHandle,
  slice: Float32Array,
  shape: number[],
  mask: Uint8Array | null = null,
): Promise<PipelineResult> {
  return run(handle, "preprocess", slice, shape, mask, null, 0);
}

export function closePipeline(handle: PipelineHandle): Promise<void> {
  return handle.close();
}
