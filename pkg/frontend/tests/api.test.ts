import { describe, expect, it, vi } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

describe("ApiClient", () => {
  it("posts generate requests with the condition", async () => {
    const calls: Array<{ url: string; init?: RequestInit }> = [];
    const fetchImpl = vi.fn(async (url: string, init?: RequestInit) => {
      calls.push({ url, init });
      return jsonResponse({ grids: [[[0.5]]], measured_volfrac: [0.5], gen_ms: 12 });
    });
    const api = new ApiClient("http://svc", fetchImpl);
    const res = await api.generate(0.4, { count: 2, seed: 7 });
    expect(res.gen_ms).toBe(12);
    expect(calls[0]?.url).toBe("http://svc/api/generate");
    expect(JSON.parse(String(calls[0]?.init?.body))).toEqual({
      volfrac: 0.4,
      count: 2,
      seed: 7,
    });
  });

  it("starts and polls simp jobs", async () => {
    const fetchImpl = vi.fn(async (url: string) => {
      if (url.endsWith("/api/simp")) return jsonResponse({ job_id: "abc" });
      return jsonResponse({ job_id: "abc", kind: "simp", state: "running", progress: { iteration: 3 } });
    });
    const api = new ApiClient("", fetchImpl);
    const { job_id } = await api.startSimp(0.5, 3.0, 1.5);
    const status = await api.getJob(job_id);
    expect(status.state).toBe("running");
    expect(fetchImpl).toHaveBeenLastCalledWith("/api/jobs/abc", undefined);
  });

  it("surfaces http errors as ApiError", async () => {
    const api = new ApiClient("", async () => jsonResponse({ error: "unknown job nope" }, 404));
    await expect(api.getJob("nope")).rejects.toThrowError(ApiError);
    await expect(api.getJob("nope")).rejects.toMatchObject({ status: 404 });
  });

  it("wraps network failures", async () => {
    const api = new ApiClient("", async () => {
      throw new Error("connection refused");
    });
    await expect(api.modelInfo()).rejects.toMatchObject({ status: 0 });
  });
});
