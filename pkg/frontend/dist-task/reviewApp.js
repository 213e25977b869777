// Browser entry for the reviewer: walk items, render the selected template,
// post decisions, show progress, surface conflicts.
import { renderDescriptor } from "./renderers.js";
import { ReviewApiClient } from "./reviewApi.js";
import { ReviewerModel } from "./reviewerState.js";
function el(id) {
    const node = document.getElementById(id);
    if (!node) {
        throw new Error(`missing element #${id}`);
    }
    return node;
}
function decisionFromForm(verdict) {
    const decision = { verdict };
    const bonus = el("bonus").value.trim();
    if (bonus) {
        decision.bonus = bonus;
    }
    const feedback = el("worker-feedback").value.trim();
    if (feedback) {
        decision.feedback_to_worker = feedback;
    }
    const quals = el("qualifications").value.trim();
    if (quals) {
        // comma-separated name=value pairs, value defaults to 1
        decision.qualifications_to_grant = quals.split(",").map((chunk) => {
            const [name, value] = chunk.trim().split("=");
            return [name, value === undefined ? 1 : Number(value)];
        });
    }
    return decision;
}
function boot() {
    const api = new ReviewApiClient(location.origin);
    const render = (state) => {
        el("progress").textContent = `${state.decided}/${state.count}`;
        el("conflict").style.display = state.conflict ? "" : "none";
        el("conflict").textContent = state.conflict
            ? `conflict: ${state.conflict} (refresh shows the recorded decision)`
            : "";
        el("finished").style.display = state.finished ? "" : "none";
        el("workbench").style.display = state.finished ? "none" : "";
        if (state.current) {
            el("item-index").textContent = String(state.current.index);
            el("item-view").innerHTML = renderDescriptor(state.current.rendered);
        }
    };
    const model = new ReviewerModel(api, render);
    const decide = (verdict) => async () => {
        await model.decide(decisionFromForm(verdict));
        el("bonus").value = "";
        el("worker-feedback").value = "";
        el("qualifications").value = "";
    };
    el("approve").onclick = decide("approve");
    el("reject").onclick = decide("reject");
    el("soft-reject").onclick = decide("soft_reject");
    el("skip").onclick = () => void model.advance();
    model.load().catch((err) => {
        el("conflict").style.display = "";
        el("conflict").textContent = `failed to load review items: ${err}`;
    });
}
boot();
