// Entry point: wires the stream, the store and the DOM together. Everything
// here is thin glue — behavior lives in the imported modules, which is what
// the test suite exercises.

import { ApiClient, ApiError } from "./api.js";
import { AggregatePanel } from "./aggregate.js";
import { parseAreaInput, referenceBox } from "./calibration.js";
import { debounce } from "./debounce.js";
import { createStore } from "./state.js";
import { StreamParser } from "./stream.js";

const api = new ApiClient("");
const store = createStore();
const panel = new AggregatePanel(api, store);

const $ = <T extends HTMLElement>(id: string) =>
  document.getElementById(id) as T;

// ---------------------------------------------------------------- stream --

async function streamLoop(): Promise<void> {
  for (;;) {
    try {
      const resp = await fetch(api.streamUrl());
      if (!resp.ok || resp.body === null) throw new Error(`HTTP ${resp.status}`);
      const parser = new StreamParser((ev) => store.dispatch(ev));
      const reader = resp.body.getReader();
      for (;;) {
        const { done, value } = await reader.read();
        if (done) break;
        parser.feed(value);
      }
    } catch {
      // fall through to the reconnect path
    }
    store.dispatch({ type: "ui/disconnected" });
    await new Promise((r) => setTimeout(r, 1000));
  }
}

// ---------------------------------------------------------------- render --

let frameUrl: string | null = null;
let shownSeq = -1;

function renderFrame(): void {
  const frame = store.getState().frame;
  if (frame === null || frame.seq === shownSeq) return;
  shownSeq = frame.seq;
  const img = $<HTMLImageElement>("live");
  const url = URL.createObjectURL(
    new Blob([frame.png as unknown as BlobPart], { type: "image/png" }),
  );
  const old = frameUrl;
  frameUrl = url;
  img.onload = () => {
    if (old !== null) URL.revokeObjectURL(old);
  };
  img.src = url;
  $("frame-meta").textContent =
    `#${frame.seq}  ${frame.width}×${frame.height}  ` +
    `${frame.modelId} (${frame.task})  ${frame.cycleMs.toFixed(0)} ms`;
}

function fmt(value: number | null | undefined, digits = 3): string {
  return value === null || value === undefined ? "—" : value.toFixed(digits);
}

function render(): void {
  const st = store.getState();

  const banner = $("banner");
  banner.className = `banner ${st.connection}`;
  banner.textContent =
    st.connection === "live"
      ? st.running
        ? "live"
        : "connected · stopped"
      : st.connection === "reconnecting"
        ? "connection lost — reconnecting…"
        : "connecting…";

  $<HTMLButtonElement>("btn-start").disabled = st.running;
  $<HTMLButtonElement>("btn-stop").disabled = !st.running;

  renderFrame();

  $("stat-latency").textContent =
    st.frame === null
      ? fmt(st.latencyMeanMs, 0) + " ms"
      : `${st.frame.cycleMs.toFixed(0)} ms`;
  $("stat-frames").textContent =
    `${st.frames.processed} processed / ${st.frames.dropped} dropped`;

  const t = st.totals;
  $("tot-entries").textContent = t === null ? "0" : String(t.entry_count);
  $("tot-mitosis").textContent =
    t === null ? "—" : `${t.mitosis_final} (model ${t.mitosis_model})`;
  $("tot-ki67").textContent =
    t === null || t.aggregate_ki67_index === null
      ? "—"
      : (t.aggregate_ki67_index * 100).toFixed(1) + "%";
  $("tot-density").textContent =
    t === null || t.density_per_mm2 === null
      ? "—"
      : fmt(t.density_per_mm2, 2) + " /mm²";
  $("tot-area").textContent = t === null ? "—" : fmt(t.area_mm2, 4) + " mm²";

  $("recal-warning").hidden = !(st.everCalibrated && !st.calibrationValid);

  // validation dialog
  const dlg = $("dialog");
  dlg.hidden = st.dialog === null;
  if (st.dialog !== null) {
    const p = st.dialog.payload;
    let body = `task: ${p.task}`;
    if (p.model_count !== undefined) body += `\nmodel count: ${p.model_count}`;
    if (p.predicted !== undefined)
      body += `\npredicted: ${p.predicted} (${((p.confidence ?? 0) * 100).toFixed(1)}%)`;
    if (p.positive !== undefined)
      body += `\npositive: ${p.positive}  negative: ${p.negative}` +
        (p.index !== null && p.index !== undefined
          ? `  index: ${(p.index * 100).toFixed(1)}%`
          : "");
    $("dialog-body").textContent = body;
    $("override-row").hidden = !p.editable_count;
    $("dialog-error").textContent = st.dialog.inputError ?? "";
  }

  const toast = $("toast");
  toast.hidden = st.toast === null;
  toast.textContent = st.toast ?? "";

  // chat
  $("chat-transcript").hidden = !st.chatOpen;
  $<HTMLButtonElement>("btn-chat-open").hidden = st.chatOpen;
  $<HTMLButtonElement>("btn-chat-close").hidden = !st.chatOpen;
  $<HTMLInputElement>("chat-input").disabled = !st.chatOpen;
  if (st.chatOpen) {
    const box = $("chat-transcript");
    box.textContent = st.chat
      .map((l) => (l.role === "user" ? "▸ " : "") + l.text)
      .join("\n");
    box.scrollTop = box.scrollHeight;
  }
}

let toastTimer: ReturnType<typeof setTimeout> | null = null;

function reportError(e: unknown): void {
  const text =
    e instanceof ApiError ? `${e.code}: ${e.message}` : String(e);
  store.dispatch({ type: "ui/toast", text });
}

// --------------------------------------------------------------- controls --

function wireControls(): void {
  $("btn-start").onclick = () =>
    api.start().catch(reportError);
  $("btn-stop").onclick = () =>
    api.stop().catch(reportError);

  // threshold slider: optimistic knob position, debounced single POST
  const slider = $<HTMLInputElement>("threshold");
  const sliderOut = $("threshold-value");
  const postThreshold = debounce((value: number) => {
    api
      .config({ threshold: value })
      .then((config) => store.dispatch({ type: "ui/config", config }))
      .catch(reportError);
  }, 100);
  slider.oninput = () => {
    const v = Math.min(1, Math.max(0, Number(slider.value)));
    sliderOut.textContent = v.toFixed(2);
    postThreshold(v);
  };

  const alpha = $<HTMLInputElement>("mask-alpha");
  const alphaOut = $("mask-alpha-value");
  const postAlpha = debounce((value: number) => {
    api
      .config({ mask_alpha: value })
      .then((config) => store.dispatch({ type: "ui/config", config }))
      .catch(reportError);
  }, 100);
  alpha.oninput = () => {
    const v = Math.min(1, Math.max(0, Number(alpha.value)));
    alphaOut.textContent = v.toFixed(2);
    postAlpha(v);
  };

  const modelSel = $<HTMLSelectElement>("model");
  modelSel.onchange = () => {
    api
      .config({ model: modelSel.value })
      .then((config) => store.dispatch({ type: "ui/config", config }))
      .catch(reportError);
  };

  $("btn-region").onclick = () => {
    const read = (id: string) => Number($<HTMLInputElement>(id).value);
    const r = {
      left: read("region-left"),
      top: read("region-top"),
      right: read("region-right"),
      bottom: read("region-bottom"),
    };
    if (Object.values(r).some((v) => !Number.isFinite(v))) {
      store.dispatch({ type: "ui/toast", text: "region needs four numbers" });
      return;
    }
    api
      .region(r)
      .then((resp) => {
        if (resp.calibration_invalidated)
          store.dispatch({ type: "ui/calibration-invalid" });
      })
      .catch(reportError);
  };

  $("btn-export").onclick = () => {
    api
      .exportSession()
      .then((m) =>
        store.dispatch({
          type: "ui/toast",
          text: `exported ${m.entries} entries to ${m.directory}`,
        }),
      )
      .catch(reportError);
  };

  // dialog buttons
  $("btn-accept").onclick = () => void panel.decide("accept");
  $("btn-reject").onclick = () => void panel.decide("reject");
  const override = $<HTMLInputElement>("override");
  override.oninput = () => panel.setOverride(override.value);

  // calibration wizard
  const wizard = $("calibrate-panel");
  const refBox = $("reference-box");
  $("btn-calibrate").onclick = () => {
    wizard.hidden = false;
    const img = $<HTMLImageElement>("live");
    const box = referenceBox(img.clientWidth, img.clientHeight);
    refBox.hidden = false;
    refBox.style.left = `${box.x}px`;
    refBox.style.top = `${box.y}px`;
    refBox.style.width = `${box.w}px`;
    refBox.style.height = `${box.h}px`;
  };
  $("btn-calibrate-cancel").onclick = () => {
    wizard.hidden = true;
    refBox.hidden = true;
  };
  $("btn-calibrate-apply").onclick = () => {
    const input = $<HTMLInputElement>("calibrate-area");
    const area = parseAreaInput(input.value);
    const err = $("calibrate-error");
    if (area === null) {
      err.textContent = "enter the measured area as a positive number (mm²)";
      return;
    }
    err.textContent = "";
    api
      .calibrate(area)
      .then((resp) => {
        store.dispatch({ type: "ui/calibrated" });
        store.dispatch({
          type: "ui/toast",
          text: `field of view: ${resp.fov_area_mm2.toFixed(4)} mm²`,
        });
        wizard.hidden = true;
        refBox.hidden = true;
      })
      .catch(reportError);
  };

  // chat
  $("btn-chat-open").onclick = () => {
    api
      .chatOpen()
      .then(() => store.dispatch({ type: "ui/chat-open" }))
      .catch(reportError);
  };
  $("btn-chat-close").onclick = () => {
    api
      .chatClose()
      .then(() => store.dispatch({ type: "ui/chat-closed" }))
      .catch(reportError);
  };
  const chatInput = $<HTMLInputElement>("chat-input");
  chatInput.onkeydown = (ev) => {
    if (ev.key !== "Enter") return;
    const text = chatInput.value.trim();
    if (text === "") return;
    chatInput.value = "";
    store.dispatch({ type: "ui/chat-line", line: { role: "user", text } });
    void (async () => {
      try {
        store.dispatch({ type: "ui/chat-line", line: { role: "model", text: "" } });
        for await (const token of api.chatSend(text))
          store.dispatch({ type: "ui/chat-append", text: token });
      } catch (e) {
        reportError(e);
      }
    })();
  };

  $<HTMLInputElement>("compact").onchange = (ev) => {
    document.body.classList.toggle(
      "compact",
      (ev.target as HTMLInputElement).checked,
    );
  };

  // spacebar proposes the current result, unless the user is typing
  document.addEventListener("keydown", (ev) => {
    const target = ev.target as HTMLElement;
    if (["INPUT", "TEXTAREA", "SELECT"].includes(target.tagName)) return;
    if (ev.key === " ") {
      ev.preventDefault();
      void panel.onSpacebar();
    } else if (ev.key === "Escape" && store.getState().dialog !== null) {
      store.dispatch({ type: "ui/dialog-close" });
    }
  });
}

// ------------------------------------------------------------------ boot --

async function boot(): Promise<void> {
  wireControls();
  store.subscribe((st, action) => {
    render();
    if (action.type === "ui/toast") {
      if (toastTimer !== null) clearTimeout(toastTimer);
      toastTimer = setTimeout(
        () => store.dispatch({ type: "ui/toast-clear" }),
        4000,
      );
    }
  });
  render();

  try {
    const models = await api.models();
    const sel = $<HTMLSelectElement>("model");
    sel.innerHTML = "";
    for (const m of models) {
      const opt = document.createElement("option");
      opt.value = m.id;
      opt.textContent = `${m.id} (${m.task})`;
      sel.appendChild(opt);
    }
    const metrics = await api.metrics();
    sel.value = metrics.config.model;
    $<HTMLInputElement>("threshold").value = String(metrics.config.threshold);
    $("threshold-value").textContent = metrics.config.threshold.toFixed(2);
    $<HTMLInputElement>("mask-alpha").value = String(metrics.config.mask_alpha);
    $("mask-alpha-value").textContent = metrics.config.mask_alpha.toFixed(2);
  } catch (e) {
    reportError(e);
  }

  void streamLoop();
}

void boot();
