// Console view model. The whole UI state is folded from one stream of
// actions — server events from /stream plus explicit user-input actions —
// so any session is replayable from its action log. reduce() never mutates.

import type { ConfigMirror, ProposePayload, Totals } from "./api.js";
import type { StreamEvent } from "./stream.js";

export type FrameView = {
  seq: number;
  png: Uint8Array;
  width: number;
  height: number;
  task: string;
  modelId: string;
  threshold: number;
  cycleMs: number;
  summary: Record<string, unknown>;
};

export type DialogState = {
  payload: ProposePayload;
  overrideText: string;
  inputError: string | null;
};

export type ChatLine = { role: "user" | "model"; text: string };

export type UiState = {
  connection: "connecting" | "live" | "reconnecting";
  running: boolean;
  config: ConfigMirror | null;
  lastSeq: number;
  frame: FrameView | null;
  latencyMeanMs: number;
  latencyStddevMs: number;
  frames: { produced: number; processed: number; dropped: number };
  totals: Totals | null;
  calibrationValid: boolean;
  everCalibrated: boolean; // drives the "recalibrate" warning after a resize
  dialog: DialogState | null;
  toast: string | null;
  chatOpen: boolean;
  chat: ChatLine[];
  lastError: string | null;
};

export const initialState: UiState = {
  connection: "connecting",
  running: false,
  config: null,
  lastSeq: 0,
  frame: null,
  latencyMeanMs: 0,
  latencyStddevMs: 0,
  frames: { produced: 0, processed: 0, dropped: 0 },
  totals: null,
  calibrationValid: false,
  everCalibrated: false,
  dialog: null,
  toast: null,
  chatOpen: false,
  chat: [],
  lastError: null,
};

export type UiAction =
  | { type: "ui/disconnected" }
  | { type: "ui/toast"; text: string }
  | { type: "ui/toast-clear" }
  | { type: "ui/dialog-open"; payload: ProposePayload }
  | { type: "ui/dialog-override"; text: string }
  | { type: "ui/dialog-error"; text: string }
  | { type: "ui/dialog-close" }
  | { type: "ui/totals"; totals: Totals }
  | { type: "ui/config"; config: ConfigMirror }
  | { type: "ui/calibrated" }
  | { type: "ui/calibration-invalid" }
  | { type: "ui/chat-open" }
  | { type: "ui/chat-closed" }
  | { type: "ui/chat-line"; line: ChatLine }
  | { type: "ui/chat-append"; text: string };

export type Action = StreamEvent | UiAction;

export function reduce(state: UiState, action: Action): UiState {
  switch (action.type) {
    case "hello": {
      const m = action as unknown as {
        running: boolean;
        latency: { mean_ms: number; stddev_ms: number };
        frames: UiState["frames"];
        config: ConfigMirror;
        calibration_valid: boolean;
        totals: Totals;
      };
      return {
        ...state,
        connection: "live",
        running: m.running,
        config: m.config,
        latencyMeanMs: m.latency.mean_ms,
        latencyStddevMs: m.latency.stddev_ms,
        frames: m.frames,
        totals: m.totals,
        calibrationValid: m.calibration_valid,
        everCalibrated: state.everCalibrated || m.calibration_valid,
        lastSeq: 0, // a fresh stream restarts the ordering guard
      };
    }
    case "result": {
      if (action.seq <= state.lastSeq) return state; // stale: never regress
      return {
        ...state,
        lastSeq: action.seq,
        frame: {
          seq: action.seq,
          png: action.png,
          width: action.frame.width,
          height: action.frame.height,
          task: action.task,
          modelId: action.model_id,
          threshold: action.threshold,
          cycleMs: action.cycle_ms,
          summary: action.summary,
        },
        frames: {
          produced: action.produced,
          processed: action.processed,
          dropped: action.dropped,
        },
      };
    }
    case "state":
      return {
        ...state,
        running: action.running,
        // a restarted worker numbers its results from 1 again
        lastSeq: action.running ? 0 : state.lastSeq,
      };
    case "error":
      return {
        ...state,
        lastError: `${action.code}: ${action.message}`,
        toast: `worker error: ${action.code}`,
      };
    case "ping":
      return state;
    case "ui/disconnected":
      return { ...state, connection: "reconnecting" };
    case "ui/toast":
      return { ...state, toast: action.text };
    case "ui/toast-clear":
      return { ...state, toast: null };
    case "ui/dialog-open":
      return {
        ...state,
        dialog: { payload: action.payload, overrideText: "", inputError: null },
      };
    case "ui/dialog-override":
      return state.dialog === null
        ? state
        : {
            ...state,
            dialog: { ...state.dialog, overrideText: action.text, inputError: null },
          };
    case "ui/dialog-error":
      return state.dialog === null
        ? state
        : { ...state, dialog: { ...state.dialog, inputError: action.text } };
    case "ui/dialog-close":
      return { ...state, dialog: null };
    case "ui/totals":
      return { ...state, totals: action.totals };
    case "ui/config":
      return { ...state, config: action.config };
    case "ui/calibrated":
      return { ...state, calibrationValid: true, everCalibrated: true };
    case "ui/calibration-invalid":
      return { ...state, calibrationValid: false };
    case "ui/chat-open":
      return { ...state, chatOpen: true, chat: [] };
    case "ui/chat-closed":
      return { ...state, chatOpen: false };
    case "ui/chat-line":
      return { ...state, chat: [...state.chat, action.line] };
    case "ui/chat-append": {
      const last = state.chat[state.chat.length - 1];
      if (last === undefined || last.role !== "model") {
        return {
          ...state,
          chat: [...state.chat, { role: "model", text: action.text }],
        };
      }
      return {
        ...state,
        chat: [
          ...state.chat.slice(0, -1),
          { role: "model", text: last.text + action.text },
        ],
      };
    }
    default:
      return state;
  }
}

export type Store = {
  getState(): UiState;
  dispatch(action: Action): void;
  subscribe(fn: (state: UiState, action: Action) => void): () => void;
};

export function createStore(start: UiState = initialState): Store {
  let state = start;
  const subs: Array<(s: UiState, a: Action) => void> = [];
  return {
    getState: () => state,
    dispatch(action) {
      state = reduce(state, action);
      for (const fn of [...subs]) fn(state, action);
    },
    subscribe(fn) {
      subs.push(fn);
      return () => {
        const i = subs.indexOf(fn);
        if (i >= 0) subs.splice(i, 1);
      };
    },
  };
}
