// Typed client for the review server's HTTP surface.

export interface ReviewDecisionBody {
  verdict: "approve" | "reject" | "soft_reject";
  bonus?: string | null;
  feedback_to_worker?: string | null;
  qualifications_to_grant?: Array<[string, number]>;
}

export interface ReviewCount {
  count: number;
  decided: number;
}

export interface RenderedDescriptor {
  template: string;
  pretty?: string;
  tokens?: Array<[string, number]>;
}

export interface ReviewItemPayload {
  index: number;
  data: unknown;
  rendered: RenderedDescriptor;
  decision?: Record<string, unknown>;
}

export type DecideResult =
  | { ok: true; decided: number }
  | { ok: false; conflict: true; error: string };

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ReviewApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = fetch,
  ) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  async count(): Promise<ReviewCount> {
    const response = await this.fetchFn(this.url("/api/items/count"));
    if (!response.ok) {
      throw new Error(`count failed: ${response.status}`);
    }
    return (await response.json()) as ReviewCount;
  }

  async item(index: number): Promise<ReviewItemPayload> {
    const response = await this.fetchFn(this.url(`/api/items/${index}`));
    if (!response.ok) {
      throw new Error(`item ${index} failed: ${response.status}`);
    }
    return (await response.json()) as ReviewItemPayload;
  }

  async decide(index: number, decision: ReviewDecisionBody): Promise<DecideResult> {
    const response = await this.fetchFn(this.url(`/api/items/${index}/decision`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(decision),
    });
    if (response.status === 409) {
      const body = (await response.json()) as { error?: string };
      return { ok: false, conflict: true, error: body.error ?? "already decided" };
    }
    if (!response.ok) {
      throw new Error(`decision on ${index} failed: ${response.status}`);
    }
    const body = (await response.json()) as { decided: number };
    return { ok: true, decided: body.decided };
  }

  async finish(): Promise<void> {
    await this.fetchFn(this.url("/api/finish"), { method: "POST" });
  }
}
