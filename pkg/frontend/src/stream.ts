// Incremental parser for the live event stream: newline-delimited JSON where
// every "result" line is immediately followed by a 16-byte binary header
// ("SLF1" magic, then u32-LE width / height / format code) and the PNG bytes
// of the annotated frame. feed() accepts chunks split at arbitrary byte
// boundaries — network framing never aligns with message framing.

export type ResultMeta = {
  type: "result";
  seq: number;
  timestamp_ns: number;
  task: string;
  model_id: string;
  threshold: number;
  cycle_ms: number;
  adapter_ms: number;
  overhead_ms: number;
  produced: number;
  processed: number;
  dropped: number;
  summary: Record<string, unknown>;
  frame: { png_bytes: number; width: number; height: number; format_code: number };
};

export type StreamEvent =
  | { type: "hello"; [key: string]: unknown }
  | { type: "ping" }
  | { type: "state"; running: boolean; reason: string }
  | { type: "error"; code: string; message: string; [key: string]: unknown }
  | (ResultMeta & { png: Uint8Array });

const MAGIC = new Uint8Array([0x53, 0x4c, 0x46, 0x31]); // "SLF1"
export const FRAME_HEADER_BYTES = 16;

export class StreamCorrupt extends Error {}

export class StreamParser {
  private buf = new Uint8Array(0);
  private pending: ResultMeta | null = null;
  private decoder = new TextDecoder();
  private dead = false;

  constructor(private onEvent: (ev: StreamEvent) => void) {}

  feed(chunk: Uint8Array): void {
    if (this.dead) return;
    if (this.buf.length === 0) {
      this.buf = chunk.slice();
    } else {
      const merged = new Uint8Array(this.buf.length + chunk.length);
      merged.set(this.buf, 0);
      merged.set(chunk, this.buf.length);
      this.buf = merged;
    }
    this.drain();
  }

  private drain(): void {
    for (;;) {
      if (this.pending !== null) {
        const need = FRAME_HEADER_BYTES + this.pending.frame.png_bytes;
        if (this.buf.length < need) return;
        const header = this.buf.subarray(0, FRAME_HEADER_BYTES);
        for (let i = 0; i < 4; i++) {
          if (header[i] !== MAGIC[i]) {
            this.dead = true;
            throw new StreamCorrupt(
              `bad frame magic at seq ${this.pending.seq}`,
            );
          }
        }
        const view = new DataView(
          header.buffer,
          header.byteOffset + 4,
          12,
        );
        const width = view.getUint32(0, true);
        const height = view.getUint32(4, true);
        const formatCode = view.getUint32(8, true);
        if (
          width !== this.pending.frame.width ||
          height !== this.pending.frame.height ||
          formatCode !== this.pending.frame.format_code
        ) {
          this.dead = true;
          throw new StreamCorrupt(
            `frame header disagrees with result line at seq ${this.pending.seq}`,
          );
        }
        const png = this.buf.slice(FRAME_HEADER_BYTES, need);
        this.buf = this.buf.slice(need);
        const meta = this.pending;
        this.pending = null;
        this.onEvent({ ...meta, png });
        continue;
      }

      const nl = this.buf.indexOf(0x0a);
      if (nl < 0) return;
      const line = this.decoder.decode(this.buf.subarray(0, nl));
      this.buf = this.buf.slice(nl + 1);
      if (!line.trim()) continue;
      const msg = JSON.parse(line);
      if (msg.type === "result") {
        // binary payload follows; hold the line until it fully arrives
        this.pending = msg as ResultMeta;
      } else {
        this.onEvent(msg as StreamEvent);
      }
    }
  }
}
