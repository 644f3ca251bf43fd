import { describe, expect, it } from "vitest";
import { ApiClient } from "../src/api.js";
import { pageFixture, statsFixture, stubFetch } from "./fixtures.js";

describe("ApiClient", () => {
  it("submits a judgment as exactly one POST with the documented body", async () => {
    const calls = stubFetch(() => ({ status: 200, body: { ok: true } }));
    const api = new ApiClient();
    const ack = await api.submitReview({
      instance_id: "d1",
      label: "brass base",
      sensible: true,
      informative: false,
      reviewer: "pat",
    });
    expect(ack).toEqual({ ok: true });
    expect(calls).toHaveLength(1);
    expect(calls[0].url).toBe("/api/reviews");
    expect(calls[0].init?.method).toBe("POST");
    expect(JSON.parse(String(calls[0].init?.body))).toEqual({
      instance_id: "d1",
      label: "brass base",
      sensible: true,
      informative: false,
      reviewer: "pat",
    });
  });

  it("builds cursor queries", async () => {
    const calls = stubFetch(() => ({ status: 200, body: pageFixture() }));
    const api = new ApiClient();
    await api.fetchInstances(null, 10);
    await api.fetchInstances("d1", 5);
    expect(calls[0].url).toBe("/api/instances?size=10");
    expect(calls[1].url).toBe("/api/instances?size=5&cursor=d1");
  });

  it("fetches stats from the stats endpoint only", async () => {
    const calls = stubFetch(() => ({ status: 200, body: statsFixture() }));
    const api = new ApiClient();
    const stats = await api.fetchStats();
    expect(stats.rows[0].n_labels).toBe(26);
    expect(calls.map((c) => c.url)).toEqual(["/api/stats"]);
  });

  it("surfaces server errors with their message", async () => {
    stubFetch(() => ({ status: 404, body: { error: "no such candidate" } }));
    const api = new ApiClient();
    await expect(
      api.submitReview({
        instance_id: "d1",
        label: "ghost",
        sensible: true,
        informative: true,
        reviewer: "pat",
      }),
    ).rejects.toThrow("no such candidate");
  });

  it("escapes instance ids in paths", async () => {
    const calls = stubFetch(() => ({ status: 200, body: pageFixture().instances[0] }));
    const api = new ApiClient();
    await api.fetchInstance("weird id/with?chars");
    expect(calls[0].url).toBe("/api/instances/weird%20id%2Fwith%3Fchars");
  });
});
