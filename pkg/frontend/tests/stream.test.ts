import { describe, expect, it } from "vitest";

import {
  FRAME_HEADER_BYTES,
  StreamCorrupt,
  StreamEvent,
  StreamParser,
} from "../src/stream.js";

const enc = new TextEncoder();

function resultLine(seq: number, png: Uint8Array, over: object = {}) {
  return {
    type: "result",
    seq,
    timestamp_ns: 1000 + seq,
    task: "detection",
    model_id: "marker-detect",
    threshold: 0.5,
    cycle_ms: 12.5,
    adapter_ms: 3.1,
    overhead_ms: 9.4,
    produced: seq,
    processed: seq,
    dropped: 0,
    summary: { count: 1 },
    frame: { png_bytes: png.length, width: 512, height: 384, format_code: 1 },
    ...over,
  };
}

function frameHeader(width = 512, height = 384, format = 1): Uint8Array {
  const out = new Uint8Array(FRAME_HEADER_BYTES);
  out.set([0x53, 0x4c, 0x46, 0x31], 0);
  const view = new DataView(out.buffer, 4);
  view.setUint32(0, width, true);
  view.setUint32(4, height, true);
  view.setUint32(8, format, true);
  return out;
}

function concat(...parts: Uint8Array[]): Uint8Array {
  const total = parts.reduce((n, p) => n + p.length, 0);
  const out = new Uint8Array(total);
  let at = 0;
  for (const p of parts) {
    out.set(p, at);
    at += p.length;
  }
  return out;
}

function wireBytes(...messages: (object | Uint8Array)[]): Uint8Array {
  return concat(
    ...messages.map((m) =>
      m instanceof Uint8Array ? m : enc.encode(JSON.stringify(m) + "\n"),
    ),
  );
}

function collect(): { events: StreamEvent[]; parser: StreamParser } {
  const events: StreamEvent[] = [];
  const parser = new StreamParser((ev) => events.push(ev));
  return { events, parser };
}

describe("line events", () => {
  it("passes hello, ping, state and error lines through", () => {
    const { events, parser } = collect();
    parser.feed(
      wireBytes(
        { type: "hello", running: false },
        { type: "ping" },
        { type: "state", running: true, reason: "" },
        { type: "error", code: "decode_failure", message: "boom" },
      ),
    );
    expect(events.map((e) => e.type)).toEqual([
      "hello",
      "ping",
      "state",
      "error",
    ]);
  });

  it("handles a line split across many feeds", () => {
    const { events, parser } = collect();
    const bytes = wireBytes({ type: "ping" });
    for (const b of bytes) parser.feed(new Uint8Array([b]));
    expect(events).toEqual([{ type: "ping" }]);
  });
});

describe("result frames", () => {
  it("emits the result only once the full binary payload arrived", () => {
    const { events, parser } = collect();
    const png = new Uint8Array([9, 8, 7, 6, 5]);
    const bytes = wireBytes(resultLine(1, png), frameHeader(), png);
    parser.feed(bytes.subarray(0, bytes.length - 2));
    expect(events).toHaveLength(0);
    parser.feed(bytes.subarray(bytes.length - 2));
    expect(events).toHaveLength(1);
    const ev = events[0]!;
    expect(ev.type).toBe("result");
    if (ev.type === "result") {
      expect(ev.seq).toBe(1);
      expect(Array.from(ev.png)).toEqual([9, 8, 7, 6, 5]);
    }
  });

  it("survives arbitrary chunk boundaries (1-byte feeds)", () => {
    const { events, parser } = collect();
    const png1 = new Uint8Array(257).fill(0xab);
    const png2 = new Uint8Array([1, 2, 3]);
    const bytes = wireBytes(
      { type: "hello" },
      resultLine(1, png1),
      frameHeader(),
      png1,
      { type: "ping" },
      resultLine(2, png2),
      frameHeader(),
      png2,
    );
    for (const b of bytes) parser.feed(new Uint8Array([b]));
    expect(events.map((e) => e.type)).toEqual([
      "hello",
      "result",
      "ping",
      "result",
    ]);
    const second = events[3]!;
    if (second.type === "result") expect(second.png.length).toBe(3);
  });

  it("a png containing newline bytes is not treated as line framing", () => {
    const { events, parser } = collect();
    const png = new Uint8Array([0x0a, 0x0a, 0x41, 0x0a]);
    parser.feed(
      wireBytes(resultLine(5, png), frameHeader(), png, { type: "ping" }),
    );
    expect(events.map((e) => e.type)).toEqual(["result", "ping"]);
    const ev = events[0]!;
    if (ev.type === "result") expect(Array.from(ev.png)).toEqual([10, 10, 65, 10]);
  });

  it("rejects a corrupt magic and stays dead afterwards", () => {
    const { events, parser } = collect();
    const png = new Uint8Array([1]);
    const bad = frameHeader();
    bad[0] = 0x58;
    expect(() =>
      parser.feed(wireBytes(resultLine(1, png), bad, png)),
    ).toThrow(StreamCorrupt);
    parser.feed(wireBytes({ type: "ping" }));
    expect(events).toHaveLength(0);
  });

  it("rejects a header that disagrees with the result line", () => {
    const { parser } = collect();
    const png = new Uint8Array([1, 2]);
    expect(() =>
      parser.feed(
        wireBytes(resultLine(1, png), frameHeader(100, 384, 1), png),
      ),
    ).toThrow(StreamCorrupt);
  });
});
