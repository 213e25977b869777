// Turn a server-side render descriptor into HTML. Descriptors come from the
// review API's `rendered` field; templates are registered server-side.
export function escapeHtml(text) {
    return text
        .replace(/&/g, "&amp;")
        .replace(/</g, "&lt;")
        .replace(/>/g, "&gt;")
        .replace(/"/g, "&quot;");
}
export function renderDescriptor(descriptor) {
    if (descriptor.template === "json-pretty") {
        return `<pre class="json-pretty">${escapeHtml(descriptor.pretty ?? "")}</pre>`;
    }
    if (descriptor.template === "word-cloud") {
        const tokens = descriptor.tokens ?? [];
        const top = tokens.length ? tokens[0][1] : 1;
        const spans = tokens.map(([token, count]) => {
            const size = 0.8 + (count / top) * 1.4;
            return `<span class="cloud-token" style="font-size:${size.toFixed(2)}em" title="${count}">${escapeHtml(token)}</span>`;
        });
        return `<div class="word-cloud">${spans.join(" ")}</div>`;
    }
    return `<pre>${escapeHtml(JSON.stringify(descriptor))}</pre>`;
}
