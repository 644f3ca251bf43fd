import type { InstancePage, InstancePayload, ReviewSubmission, Stats } from "./types.js";

async function asJson<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let detail = `${response.status}`;
    try {
      const body = (await response.json()) as { error?: string };
      if (body.error) detail = body.error;
    } catch {
      // non-JSON error body: keep the status code
    }
    throw new Error(detail);
  }
  return (await response.json()) as T;
}

export class ApiClient {
  constructor(private readonly baseUrl: string = "") {}

  async fetchInstances(cursor: string | null = null, size = 10): Promise<InstancePage> {
    const params = new URLSearchParams({ size: String(size) });
    if (cursor) params.set("cursor", cursor);
    const response = await fetch(`${this.baseUrl}/api/instances?${params.toString()}`);
    return asJson<InstancePage>(response);
  }

  async fetchInstance(id: string): Promise<InstancePayload> {
    const response = await fetch(`${this.baseUrl}/api/instances/${encodeURIComponent(id)}`);
    return asJson<InstancePayload>(response);
  }

  async submitReview(review: ReviewSubmission): Promise<{ ok: boolean }> {
    const response = await fetch(`${this.baseUrl}/api/reviews`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(review),
    });
    return asJson<{ ok: boolean }>(response);
  }

  async fetchStats(): Promise<Stats> {
    const response = await fetch(`${this.baseUrl}/api/stats`);
    return asJson<Stats>(response);
  }

  exportUrl(): string {
    return `${this.baseUrl}/api/export`;
  }
}
