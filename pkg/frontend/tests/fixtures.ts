import type { InstancePage, InstancePayload, Stats } from "../src/types.js";

export function instanceFixture(): InstancePayload {
  return {
    id: "d1",
    text: "soft amber lamp with brass base",
    gold: [
      { label: "amber lamp", unseen: true },
      { label: "lighting", unseen: false },
    ],
    predicted: [
      { label: "lighting", score: 0.9, rank: 1, category: "correct" },
      { label: "brass base", score: 0.5, rank: 2, category: "novel" },
      { label: "garden tools", score: 0.2, rank: 3, category: "known" },
      { label: "amber lamps", score: 0.1, rank: 4, category: "novel" },
    ],
    candidates: [
      { label: "brass base", rank: 2, score: 0.5, semantic_match: false, judgments: [] },
      { label: "amber lamps", rank: 4, score: 0.1, semantic_match: true, judgments: [] },
    ],
  };
}

export function pageFixture(): InstancePage {
  return { instances: [instanceFixture()], next_cursor: null, total_instances: 1 };
}

export function statsFixture(): Stats {
  return {
    rows: [
      {
        key: "yes",
        n_labels: 26,
        sensible_pct: 96,
        informative_pct: 38,
        sensible_fraction: 25 / 26,
        informative_fraction: 10 / 26,
      },
      {
        key: "no",
        n_labels: 116,
        sensible_pct: 59,
        informative_pct: 23,
        sensible_fraction: 0.59,
        informative_fraction: 0.23,
      },
      {
        key: "total",
        n_labels: 142,
        sensible_pct: 65,
        informative_pct: 26,
        sensible_fraction: 0.65,
        informative_fraction: 0.26,
      },
    ],
    coverage: { reviewed: 142, total: 142 },
  };
}

type FetchCall = { url: string; init?: RequestInit };

export function stubFetch(
  responder: (url: string, init?: RequestInit) => { status: number; body: unknown },
): FetchCall[] {
  const calls: FetchCall[] = [];
  globalThis.fetch = (async (input: RequestInfo | URL, init?: RequestInit) => {
    const url = String(input);
    calls.push({ url, init });
    const { status, body } = responder(url, init);
    return new Response(JSON.stringify(body), {
      status,
      headers: { "Content-Type": "application/json" },
    });
  }) as typeof fetch;
  return calls;
}
