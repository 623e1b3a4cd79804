// End-to-end console checks against the real control service: a spawned
// `scopeloop serve` with the replay source and the marker detector, consumed
// exactly the way the browser does — the HTTP client, the stream parser and
// the store, with no mocks in between.

import { ChildProcess, spawn } from "node:child_process";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { AggregatePanel } from "../src/aggregate.js";
import { ApiClient } from "../src/api.js";
import { referenceBox } from "../src/calibration.js";
import { debounce } from "../src/debounce.js";
import { Action, createStore, Store, UiState } from "../src/state.js";
import { StreamParser } from "../src/stream.js";

const FIXTURES = join(dirname(fileURLToPath(import.meta.url)), "fixtures");
const INTERVAL_MS = 200;

let proc: ChildProcess;
let base: string;
let api: ApiClient;
let probe: StreamProbe;

// Connects to /stream and folds every event into a store, recording each
// accepted (displayed) frame so tests can await stream conditions.
class StreamProbe {
  store: Store = createStore();
  shown: Array<{ seq: number; threshold: number; at: number }> = [];
  private ctrl = new AbortController();
  private waiters: Array<{
    pred: (st: UiState) => boolean;
    resolve: () => void;
  }> = [];
  private finished: Promise<void>;

  constructor(url: string) {
    this.store.subscribe((st, action: Action) => {
      if (action.type === "result" && st.frame?.seq === action.seq) {
        this.shown.push({
          seq: action.seq,
          threshold: action.threshold,
          at: performance.now(),
        });
      }
      this.waiters = this.waiters.filter((w) => {
        if (!w.pred(st)) return true;
        w.resolve();
        return false;
      });
    });
    this.finished = this.run(url);
  }

  private async run(url: string): Promise<void> {
    try {
      const resp = await fetch(url, { signal: this.ctrl.signal });
      if (!resp.ok || resp.body === null) throw new Error(`HTTP ${resp.status}`);
      const parser = new StreamParser((ev) => this.store.dispatch(ev));
      const reader = resp.body.getReader();
      for (;;) {
        const { done, value } = await reader.read();
        if (done) break;
        parser.feed(value);
      }
    } catch {
      // aborted at teardown, or the server went away mid-test
    }
  }

  waitFor(pred: (st: UiState) => boolean, timeoutMs = 20_000): Promise<void> {
    if (pred(this.store.getState())) return Promise.resolve();
    return new Promise((resolve, reject) => {
      const timer = setTimeout(
        () => reject(new Error("timed out waiting for stream condition")),
        timeoutMs,
      );
      this.waiters.push({
        pred,
        resolve: () => {
          clearTimeout(timer);
          resolve();
        },
      });
    });
  }

  async close(): Promise<void> {
    this.ctrl.abort();
    await this.finished;
  }
}

beforeAll(async () => {
  proc = spawn(
    "python3",
    [
      "-m", "scopeloop", "serve",
      "--port", "0",
      "--source", `replay:${FIXTURES}`,
      "--model", "marker-detect",
      "--interval-ms", String(INTERVAL_MS),
    ],
    { stdio: ["ignore", "pipe", "pipe"] },
  );
  let stderr = "";
  proc.stderr!.on("data", (d: Buffer) => (stderr += d.toString()));

  base = await new Promise<string>((resolve, reject) => {
    let out = "";
    const timer = setTimeout(
      () => reject(new Error(`service never announced its port\n${stderr}`)),
      20_000,
    );
    proc.stdout!.on("data", (d: Buffer) => {
      out += d.toString();
      const m = out.match(/control service on (http:\/\/[\d.]+:\d+)/);
      if (m) {
        clearTimeout(timer);
        resolve(m[1]!);
      }
    });
    proc.on("exit", (code) => {
      clearTimeout(timer);
      reject(new Error(`service exited early (${code})\n${stderr}`));
    });
  });

  api = new ApiClient(base);
  await api.start();
  probe = new StreamProbe(api.streamUrl());
  await probe.waitFor((st) => st.frame !== null);
});

afterAll(async () => {
  await probe?.close();
  if (proc && proc.exitCode === null) {
    await api?.stop().catch(() => undefined);
    proc.kill("SIGINT");
    const gone = new Promise<void>((resolve) => proc.on("exit", () => resolve()));
    const giveUp = new Promise<void>((resolve) =>
      setTimeout(() => {
        proc.kill("SIGKILL");
        resolve();
      }, 5000),
    );
    await Promise.race([gone, giveUp]);
  }
});

describe("live console against the real service", () => {
  it("the live view updates at 2.5 fps or better", async () => {
    const startCount = probe.shown.length;
    await probe.waitFor(() => probe.shown.length >= startCount + 8);
    const window = probe.shown.slice(startCount);
    const first = window[0]!;
    const last = window[window.length - 1]!;
    const fps = (window.length - 1) / ((last.at - first.at) / 1000);
    expect(fps).toBeGreaterThanOrEqual(2.5);
    // every accepted frame advanced the view — the ordering guard never
    // let a stale frame through
    for (let i = 1; i < window.length; i++)
      expect(window[i]!.seq).toBeGreaterThan(window[i - 1]!.seq);
    console.log(`[PASS] live view: ${fps.toFixed(1)} fps (>= 2.5)`);
  });

  it("a debounced slider drag makes one POST, visible in the next frame", async () => {
    // land mid-gap: act right after a frame arrives
    const seen = probe.shown.length;
    await probe.waitFor(() => probe.shown.length >= seen + 1);

    let posts = 0;
    let postDone: () => void;
    const completed = new Promise<void>((r) => (postDone = r));
    const postThreshold = debounce((value: number) => {
      posts += 1;
      void api
        .config({ threshold: value })
        .then(() => postDone());
    }, 100);

    // drag 0.3 -> 0.72 in quick steps; only the final value may be posted
    for (const v of [0.3, 0.45, 0.6, 0.72]) postThreshold(v);
    await completed;
    const lastShown = probe.shown[probe.shown.length - 1]!;

    await probe.waitFor(
      (st) => (st.frame?.seq ?? 0) > lastShown.seq,
    );
    const next = probe.shown.find((f) => f.seq > lastShown.seq)!;
    expect(posts).toBe(1);
    expect(next.threshold).toBe(0.72);
    console.log(
      `[PASS] slider: one POST, frame ${next.seq} shows threshold ${next.threshold}`,
    );
  });

  it("spacebar then accept adds exactly one entry to the totals", async () => {
    const before = (await api.metrics()).totals.entry_count;
    const panel = new AggregatePanel(api, probe.store);

    await panel.onSpacebar(); // the keydown handler calls exactly this
    const dialog = probe.store.getState().dialog;
    expect(dialog).not.toBeNull();
    expect(dialog!.payload.task).toBe("detection");
    expect(dialog!.payload.editable_count).toBe(true);
    expect(dialog!.payload.model_count).toBeGreaterThanOrEqual(1);

    await panel.decide("accept");
    expect(probe.store.getState().dialog).toBeNull();
    expect(probe.store.getState().totals?.entry_count).toBe(before + 1);

    const after = (await api.metrics()).totals.entry_count;
    expect(after).toBe(before + 1);
    console.log(`[PASS] spacebar accept: ${before} -> ${after} entries`);
  });

  it("the calibration wizard box is exactly one third of each view dimension", async () => {
    expect(referenceBox(900, 600)).toEqual({ x: 300, y: 200, w: 300, h: 200 });
    const frame = probe.store.getState().frame!;
    const box = referenceBox(frame.width, frame.height);
    expect(box.w).toBe(frame.width / 3);
    expect(box.h).toBe(frame.height / 3);

    // and the posted measurement scales by exactly nine on the server
    const resp = await api.calibrate(0.036);
    expect(resp.fov_area_mm2).toBe(9 * 0.036);
    console.log(
      `[PASS] calibration: ${frame.width}x${frame.height} view -> ` +
        `${box.w}x${box.h} box; 0.036 mm2 -> ${resp.fov_area_mm2} mm2`,
    );
  });
});
