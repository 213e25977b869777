// Browser entry for the reviewer: walk items, render the selected template,
// post decisions, show progress, surface conflicts.

import { renderDescriptor } from "./renderers.js";
import { ReviewApiClient, ReviewDecisionBody } from "./reviewApi.js";
import { ReviewerModel, ReviewerState } from "./reviewerState.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

function decisionFromForm(verdict: ReviewDecisionBody["verdict"]): ReviewDecisionBody {
  const decision: ReviewDecisionBody = { verdict };
  const bonus = el<HTMLInputElement>("bonus").value.trim();
  if (bonus) {
    decision.bonus = bonus;
  }
  const feedback = el<HTMLTextAreaElement>("worker-feedback").value.trim();
  if (feedback) {
    decision.feedback_to_worker = feedback;
  }
  const quals = el<HTMLInputElement>("qualifications").value.trim();
  if (quals) {
    // comma-separated name=value pairs, value defaults to 1
    decision.qualifications_to_grant = quals.split(",").map((chunk) => {
      const [name, value] = chunk.trim().split("=");
      return [name, value === undefined ? 1 : Number(value)] as [string, number];
    });
  }
  return decision;
}

function boot(): void {
  const api = new ReviewApiClient(location.origin);

  const render = (state: ReviewerState): void => {
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

  const decide = (verdict: ReviewDecisionBody["verdict"]) => async () => {
    await model.decide(decisionFromForm(verdict));
    el<HTMLInputElement>("bonus").value = "";
    el<HTMLTextAreaElement>("worker-feedback").value = "";
    el<HTMLInputElement>("qualifications").value = "";
  };

  el<HTMLButtonElement>("approve").onclick = decide("approve");
  el<HTMLButtonElement>("reject").onclick = decide("reject");
  el<HTMLButtonElement>("soft-reject").onclick = decide("soft_reject");
  el<HTMLButtonElement>("skip").onclick = () => void model.advance();

  model.load().catch((err) => {
    el("conflict").style.display = "";
    el("conflict").textContent = `failed to load review items: ${err}`;
  });
}

boot();
