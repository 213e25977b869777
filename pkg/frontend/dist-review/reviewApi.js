// Typed client for the review server's HTTP surface.
export class ReviewApiClient {
    constructor(baseUrl, fetchFn = fetch) {
        this.baseUrl = baseUrl;
        this.fetchFn = fetchFn;
    }
    url(path) {
        return this.baseUrl.replace(/\/$/, "") + path;
    }
    async count() {
        const response = await this.fetchFn(this.url("/api/items/count"));
        if (!response.ok) {
            throw new Error(`count failed: ${response.status}`);
        }
        return (await response.json());
    }
    async item(index) {
        const response = await this.fetchFn(this.url(`/api/items/${index}`));
        if (!response.ok) {
            throw new Error(`item ${index} failed: ${response.status}`);
        }
        return (await response.json());
    }
    async decide(index, decision) {
        const response = await this.fetchFn(this.url(`/api/items/${index}/decision`), {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify(decision),
        });
        if (response.status === 409) {
            const body = (await response.json());
            return { ok: false, conflict: true, error: body.error ?? "already decided" };
        }
        if (!response.ok) {
            throw new Error(`decision on ${index} failed: ${response.status}`);
        }
        const body = (await response.json());
        return { ok: true, decided: body.decided };
    }
    async finish() {
        await this.fetchFn(this.url("/api/finish"), { method: "POST" });
    }
}
