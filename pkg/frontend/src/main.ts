/** App bootstrap: one base-URL setting, panels wired to the service. */

import { ApiClient, ServiceError } from "./api.js";
import {
  renderBanner,
  renderEvalResult,
  renderHistoryTrail,
  renderShapleyPanel,
  renderStepwisePanel,
  renderSubsetPanel,
  setControlsEnabled,
} from "./panels.js";
import { SubsetState } from "./state.js";
import { acceptSuggestion, stepwiseSweep } from "./stepwise.js";

interface App {
  api: ApiClient;
  state: SubsetState;
  inflight: AbortController | null;
  sweep: AbortController | null;
  lastAuc: number;
}

function q(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
}

async function refreshEval(app: App): Promise<void> {
  app.inflight?.abort();
  app.inflight = new AbortController();
  const mask = app.state.serializeMask();
  try {
    const result = mask === "none"
      ? { mean_auc: 0.5, n_species: 0, mask }  // service rejects the empty-split metric
      : await app.api.evalMask(mask, false, app.inflight.signal);
    app.lastAuc = result.mean_auc;
    app.state.recordEval(mask, result.mean_auc, result.n_species);
    renderEvalResult(q("eval-result"), result);
    renderHistoryTrail(q("history"), app.state);
  } catch (err) {
    if ((err as Error).name === "AbortError") return;
    showError(app, err);
  }
}

function showError(app: App, err: unknown): void {
  const message = err instanceof ServiceError
    ? (err.status === 413
        ? `request too expensive (${err.message}); switch to the stratified estimator`
        : `service error ${err.status}: ${err.message}`)
    : `service unreachable: ${(err as Error).message}`;
  renderBanner(q("banner"), message, () => void bootstrap());
  if (!(err instanceof ServiceError)) setControlsEnabled(q("subset-panel"), false);
}

function rerenderSubset(app: App): void {
  renderSubsetPanel(q("subset-panel"), app.state.schema, app.state, {
    onPredictorToggle: (name) => {
      app.state.togglePredictor(name);
      rerenderSubset(app);
      void refreshEval(app);
    },
    onGroupToggle: (group, on) => {
      app.state.setGroup(group, on);
      rerenderSubset(app);
      void refreshEval(app);
    },
  });
}

async function runShapley(app: App): Promise<void> {
  try {
    const estimator = (q("estimator") as HTMLSelectElement).value as
      "exact" | "stratified" | "uniform";
    const result = await app.api.shapley({
      target: "performance", groups: true, estimator, n_squares: 10, seed: 0,
    });
    renderShapleyPanel(q("shapley-panel"), result);
  } catch (err) {
    showError(app, err);
  }
}

async function runStepwise(app: App): Promise<void> {
  app.sweep?.abort();
  app.sweep = new AbortController();
  try {
    const suggestions = await stepwiseSweep(app.api, app.state, app.lastAuc,
                                            app.sweep.signal);
    renderStepwisePanel(q("stepwise-panel"), suggestions, (s) => {
      acceptSuggestion(app.state, s);
      rerenderSubset(app);
      renderHistoryTrail(q("history"), app.state);
      void runStepwise(app);
    });
  } catch (err) {
    if ((err as Error).name === "AbortError") return;
    showError(app, err);
  }
}

function exportHistory(app: App): void {
  const blob = new Blob([app.state.historyCsv()], { type: "text/csv" });
  const a = document.createElement("a");
  a.href = URL.createObjectURL(blob);
  a.download = "stepwise-trail.csv";
  a.click();
  URL.revokeObjectURL(a.href);
}

export async function bootstrap(): Promise<void> {
  const baseInput = q("base-url") as HTMLInputElement;
  const api = new ApiClient(baseInput.value.replace(/\/$/, ""));
  try {
    const schema = await api.schema();
    const app: App = {
      api, state: new SubsetState(schema), inflight: null, sweep: null, lastAuc: 0.5,
    };
    q("banner").replaceChildren();
    rerenderSubset(app);
    q("shapley-run").onclick = () => void runShapley(app);
    q("stepwise-run").onclick = () => void runStepwise(app);
    q("history-export").onclick = () => exportHistory(app);
    window.addEventListener("beforeunload", () => app.sweep?.abort());
    await refreshEval(app);
  } catch (err) {
    renderBanner(q("banner"),
                 `service unreachable at ${api.baseUrl}: ${(err as Error).message}`,
                 () => void bootstrap());
    setControlsEnabled(q("subset-panel"), false);
  }
}

if (typeof document !== "undefined" && document.getElementById("base-url")) {
  q("base-connect").onclick = () => void bootstrap();
  void bootstrap();
}
