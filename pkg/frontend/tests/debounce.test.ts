import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { debounce } from "../src/debounce.js";

beforeEach(() => vi.useFakeTimers());
afterEach(() => vi.useRealTimers());

describe("debounce", () => {
  it("a slider drag collapses to one trailing call with the final value", () => {
    const calls: number[] = [];
    const post = debounce((v: number) => calls.push(v), 100);
    // drag 0.3 -> 0.8 in quick steps
    for (const v of [0.3, 0.4, 0.5, 0.6, 0.7, 0.8]) {
      post(v);
      vi.advanceTimersByTime(20);
    }
    expect(calls).toEqual([]); // still inside the quiet window
    vi.advanceTimersByTime(100);
    expect(calls).toEqual([0.8]);
  });

  it("calls separated by more than the window each fire", () => {
    const calls: number[] = [];
    const post = debounce((v: number) => calls.push(v), 100);
    post(1);
    vi.advanceTimersByTime(150);
    post(2);
    vi.advanceTimersByTime(150);
    expect(calls).toEqual([1, 2]);
  });

  it("cancel drops the pending call", () => {
    const calls: number[] = [];
    const post = debounce((v: number) => calls.push(v), 100);
    post(5);
    post.cancel();
    vi.advanceTimersByTime(500);
    expect(calls).toEqual([]);
    expect(post.pending()).toBe(false);
  });

  it("flush fires immediately with the latest arguments", () => {
    const calls: number[] = [];
    const post = debounce((v: number) => calls.push(v), 100);
    post(1);
    post(2);
    post.flush();
    expect(calls).toEqual([2]);
    vi.advanceTimersByTime(500);
    expect(calls).toEqual([2]);
  });
});
