// Browser entry for the worker task client. Reads task_config.json, then
// drives the whole session from TaskClient state changes.
import { buildForm, readForm } from "./form.js";
import { TaskClient } from "./taskClient.js";
import { webSocketTransport } from "./transport.js";
function el(id) {
    const node = document.getElementById(id);
    if (!node) {
        throw new Error(`missing element #${id}`);
    }
    return node;
}
function show(id, visible) {
    el(id).style.display = visible ? "" : "none";
}
async function boot() {
    const config = (await (await fetch("/task_config.json")).json());
    el("title").textContent = config.task_title;
    el("description").textContent = config.task_description;
    show("feedback-widget", config.features.feedback);
    show("tips-widget", config.features.tips);
    let client = null;
    const render = (state) => {
        for (const view of ["connecting", "preview", "onboarding", "task", "submitted", "blocked", "error"]) {
            show(`view-${view}`, state.view === view);
        }
        el("connection").textContent = state.connectionHealthy ? "connected" : "disconnected";
        el("reason").textContent = state.reason ?? "";
        if (state.view === "onboarding") {
            el("onboarding-data").textContent = JSON.stringify(state.initData, null, 2);
        }
        if (state.view === "task") {
            el("task-data").textContent = JSON.stringify(state.initData, null, 2);
            const formRoot = el("task-form");
            if (formRoot.childElementCount === 0 && client) {
                const draft = client.loadDraft();
                buildForm(config.payload_schema, formRoot, draft ?? {});
            }
        }
        else {
            el("task-form").innerHTML = "";
        }
        const tipsList = el("tips-list");
        tipsList.innerHTML = "";
        for (const tip of state.tips) {
            const item = document.createElement("li");
            const header = document.createElement("strong");
            header.textContent = tip.header;
            item.appendChild(header);
            item.appendChild(document.createTextNode(` — ${tip.body}`));
            tipsList.appendChild(item);
        }
    };
    el("connect").onclick = () => {
        const workerName = el("worker-name").value.trim();
        if (!workerName) {
            return;
        }
        client?.stop();
        const url = `${location.protocol === "https:" ? "wss" : "ws"}://${location.host}/channel`;
        client = new TaskClient({
            workerName,
            connect: webSocketTransport(url, WebSocket),
            storage: localStorage,
            onChange: render,
        });
        client.start();
        show("connect-bar", false);
    };
    el("submit-task").onclick = () => {
        if (!client) {
            return;
        }
        const outputs = readForm(config.payload_schema, el("task-form"));
        client.saveDraft(outputs);
        client.submitTask(outputs);
    };
    el("task-form").addEventListener("input", () => {
        if (!client) {
            return;
        }
        const outputs = readForm(config.payload_schema, el("task-form"));
        client.saveDraft(outputs);
        client.savePartial(outputs);
    });
    el("submit-onboarding").onclick = () => {
        const answer = el("onboarding-answer").value;
        client?.submitOnboarding({ answer });
    };
    el("send-feedback").onclick = () => {
        const text = el("feedback-text").value.trim();
        if (text) {
            client?.sendFeedback(text);
            el("feedback-text").value = "";
        }
    };
    el("send-tip").onclick = () => {
        const header = el("tip-header").value.trim();
        const body = el("tip-body").value.trim();
        if (header && body) {
            // empty header/body never leave the client
            client?.sendTip(header, body);
            el("tip-header").value = "";
            el("tip-body").value = "";
        }
    };
    el("return-unit").onclick = () => client?.returnUnit();
}
boot().catch((err) => {
    document.body.textContent = `failed to load task: ${err}`;
});
