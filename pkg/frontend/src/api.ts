// Typed client for the scopeloop control service. Every request the UI can
// make goes through here, so this module is the complete list of calls the
// console is allowed to issue.

export type ModelInfo = {
  id: string;
  task: "classification" | "detection" | "segmentation";
  tile_size: number;
  input_format: string;
  source: string;
  sha256: string | null;
};

export type Totals = {
  entry_count: number;
  tile_count: number;
  area_mm2: number;
  mitosis_model: number;
  mitosis_final: number;
  ki67_positive: number;
  ki67_negative: number;
  aggregate_ki67_index: number | null;
  density_per_mm2: number | null;
};

export type ConfigMirror = {
  model: string;
  task: string;
  threshold: number;
  overlap: number;
  mask_alpha: number;
  source: string;
  interval_ms: number;
};

export type Metrics = {
  running: boolean;
  latency: {
    window: number[];
    window_size: number;
    mean_ms: number;
    stddev_ms: number;
    total_cycles: number;
  };
  frames: { produced: number; processed: number; dropped: number };
  config: ConfigMirror;
  calibration_valid: boolean;
  totals: Totals;
};

// validation-dialog payload; shape depends on the task
export type ProposePayload = {
  task: string;
  editable_count: boolean;
  seq: number;
  model_count?: number; // detection
  predicted?: string; // classification
  confidence?: number;
  probs?: Record<string, number>;
  positive?: number; // segmentation
  negative?: number;
  index?: number | null;
};

export type CommitBody = {
  decision: "accept" | "reject";
  override_count?: number;
};

export type CommitResponse = {
  decision: string;
  totals: Totals;
  entry_id?: string;
};

export type ConfigPatch = Partial<{
  model: string;
  task: string;
  threshold: number;
  overlap: number;
  mask_alpha: number;
  source: string;
  interval_ms: number;
}>;

export class ApiError extends Error {
  constructor(
    public code: string,
    message: string,
    public status: number,
  ) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private base: string = "",
    private fetchImpl: FetchLike = (...a) => fetch(...a),
  ) {}

  streamUrl(): string {
    return this.base + "/stream";
  }

  private async request(method: "GET" | "POST", path: string, body?: unknown) {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "Content-Type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const resp = await this.fetchImpl(this.base + path, init);
    const payload = await resp.json().catch(() => ({}));
    if (!resp.ok) {
      const err = (payload as { error?: { code?: string; message?: string } })
        .error;
      throw new ApiError(
        err?.code ?? "http_error",
        err?.message ?? `HTTP ${resp.status}`,
        resp.status,
      );
    }
    return payload;
  }

  async models(): Promise<ModelInfo[]> {
    const out = await this.request("GET", "/models");
    return (out as { models: ModelInfo[] }).models;
  }

  metrics(): Promise<Metrics> {
    return this.request("GET", "/metrics") as Promise<Metrics>;
  }

  config(patch: ConfigPatch): Promise<ConfigMirror> {
    return this.request("POST", "/config", patch) as Promise<ConfigMirror>;
  }

  region(r: { left: number; top: number; right: number; bottom: number }) {
    return this.request("POST", "/region", r) as Promise<{
      region: number[];
      calibration_invalidated: boolean;
    }>;
  }

  start() {
    return this.request("POST", "/start");
  }

  stop() {
    return this.request("POST", "/stop");
  }

  propose(): Promise<ProposePayload> {
    return this.request("POST", "/aggregate/propose") as Promise<ProposePayload>;
  }

  commit(body: CommitBody): Promise<CommitResponse> {
    return this.request("POST", "/aggregate/commit", body) as Promise<CommitResponse>;
  }

  calibrate(areaMm2: number) {
    return this.request("POST", "/calibrate", { area_mm2: areaMm2 }) as Promise<{
      reference_area_mm2: number;
      fov_area_mm2: number;
      roi_dims: number[];
    }>;
  }

  exportSession(dir?: string) {
    const body = dir === undefined ? {} : { dir };
    return this.request("POST", "/export", body) as Promise<{
      directory: string;
      csv: string;
      images: string[];
      entries: number;
    }>;
  }

  chatOpen(model = "mock") {
    return this.request("POST", "/chat/open", { model });
  }

  chatClose() {
    return this.request("POST", "/chat/close");
  }

  // Streams the model's reply token by token. The response is NDJSON lines:
  // {"type":"token","text":...} ... {"type":"done"} (or {"type":"error",...}).
  async *chatSend(
    text: string,
    imageB64?: string,
  ): AsyncGenerator<string, void, void> {
    const body: Record<string, string> = { text };
    if (imageB64 !== undefined) body.image_b64 = imageB64;
    const resp = await this.fetchImpl(this.base + "/chat/send", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!resp.ok || resp.body === null) {
      const payload = await resp.json().catch(() => ({}));
      const err = (payload as { error?: { code?: string; message?: string } })
        .error;
      throw new ApiError(
        err?.code ?? "http_error",
        err?.message ?? `HTTP ${resp.status}`,
        resp.status,
      );
    }
    const reader = resp.body.getReader();
    const decoder = new TextDecoder();
    let pending = "";
    for (;;) {
      const { done, value } = await reader.read();
      if (done) break;
      pending += decoder.decode(value, { stream: true });
      let nl;
      while ((nl = pending.indexOf("\n")) >= 0) {
        const line = pending.slice(0, nl);
        pending = pending.slice(nl + 1);
        if (!line.trim()) continue;
        const msg = JSON.parse(line);
        if (msg.type === "token") yield msg.text as string;
        else if (msg.type === "done") return;
        else if (msg.type === "error")
          throw new ApiError(msg.code ?? "channel_broken", msg.message ?? "", 200);
      }
    }
  }
}
