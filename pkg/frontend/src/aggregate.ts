// Aggregation panel controller: spacebar proposes the latest result, the
// validation dialog commits it. Totals shown in the UI come only from the
// server's commit/metrics responses — never computed optimistically.

import { ApiClient, ApiError, CommitBody } from "./api.js";
import type { Store } from "./state.js";

export type AggregateApi = Pick<ApiClient, "propose" | "commit">;

export class AggregatePanel {
  constructor(
    private api: AggregateApi,
    private store: Store,
  ) {}

  async onSpacebar(): Promise<void> {
    if (this.store.getState().dialog !== null) return; // already deciding
    try {
      const payload = await this.api.propose();
      this.store.dispatch({ type: "ui/dialog-open", payload });
    } catch (e) {
      if (e instanceof ApiError && e.code === "no_current_result") {
        this.store.dispatch({ type: "ui/toast", text: "no result" });
        return;
      }
      const message = e instanceof Error ? e.message : String(e);
      this.store.dispatch({ type: "ui/toast", text: message });
    }
  }

  setOverride(text: string): void {
    this.store.dispatch({ type: "ui/dialog-override", text });
  }

  async decide(decision: "accept" | "reject"): Promise<void> {
    const dialog = this.store.getState().dialog;
    if (dialog === null) return;
    const body: CommitBody = { decision };
    if (decision === "accept" && dialog.payload.editable_count) {
      const text = dialog.overrideText.trim();
      if (text !== "") {
        const n = Number(text);
        if (!Number.isInteger(n) || n < 0) {
          this.store.dispatch({
            type: "ui/dialog-error",
            text: "count must be a whole number ≥ 0",
          });
          return;
        }
        body.override_count = n;
      }
    }
    try {
      const resp = await this.api.commit(body);
      this.store.dispatch({ type: "ui/totals", totals: resp.totals });
      this.store.dispatch({ type: "ui/dialog-close" });
    } catch (e) {
      const message = e instanceof Error ? e.message : String(e);
      this.store.dispatch({ type: "ui/dialog-error", text: message });
    }
  }
}
