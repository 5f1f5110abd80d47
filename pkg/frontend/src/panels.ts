/** DOM panels: subset toggles, Shapley bars, stepwise assistant, history.
 *
 * Every number shown is lifted verbatim from a service response; elements
 * carry the exact value in data-value and show a formatted label next to it.
 */

import type { EvalResult, SchemaInfo, ShapleyResult } from "./api.js";
import { barChart, formatNumber, scatterMap } from "./charts.js";
import type { SubsetState } from "./state.js";
import type { Suggestion } from "./stepwise.js";

function el(tag: string, attrs: Record<string, string> = {}, text = ""): HTMLElement {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text) node.textContent = text;
  return node;
}

export interface SubsetPanelHooks {
  onPredictorToggle: (name: string) => void;
  onGroupToggle: (group: string, on: boolean) => void;
}

export function renderSubsetPanel(
  root: HTMLElement, schema: SchemaInfo, state: SubsetState, hooks: SubsetPanelHooks,
): void {
  root.replaceChildren();
  for (const [group, members] of Object.entries(schema.groups)) {
    const box = el("fieldset", { class: "group-box", "data-group": group });
    const legend = el("legend");
    const gcb = el("input", {
      type: "checkbox", "data-group-toggle": group,
    }) as HTMLInputElement;
    const gstate = state.groupState(group);
    gcb.checked = gstate === "on";
    gcb.indeterminate = gstate === "mixed";
    gcb.addEventListener("change", () => hooks.onGroupToggle(group, gcb.checked));
    legend.appendChild(gcb);
    legend.appendChild(el("span", {}, ` ${group}`));
    box.appendChild(legend);
    for (const name of members) {
      const row = el("label", { class: "predictor-row" });
      const cb = el("input", {
        type: "checkbox", "data-predictor": name,
      }) as HTMLInputElement;
      cb.checked = state.isVisible(name);
      cb.addEventListener("change", () => hooks.onPredictorToggle(name));
      row.appendChild(cb);
      row.appendChild(el("span", {}, ` ${name}`));
      box.appendChild(row);
    }
    root.appendChild(box);
  }
}

export function renderEvalResult(root: HTMLElement, result: EvalResult): void {
  root.replaceChildren();
  const auc = el("div", { class: "metric", "data-metric": "mean-auc" });
  auc.dataset.value = String(result.mean_auc);
  auc.textContent = `mean AUC ${formatNumber(result.mean_auc)}`;
  const n = el("div", { class: "metric", "data-metric": "n-species" });
  n.dataset.value = String(result.n_species);
  n.textContent = `${result.n_species} species`;
  root.append(auc, n);
}

export function renderShapleyPanel(root: HTMLElement, result: ShapleyResult): void {
  root.replaceChildren();
  root.appendChild(barChart(result.players, result.values));
  // displayed total comes from the response values, never renormalized
  const total = result.values.reduce((a, b) => a + b, 0);
  const sum = el("div", { class: "metric", "data-metric": "shapley-sum" });
  sum.dataset.value = String(total);
  const target = result.full_value !== undefined
    ? result.full_value - result.baseline_value
    : undefined;
  sum.textContent = target === undefined
    ? `sum ${formatNumber(total)}`
    : `sum ${formatNumber(total)} = full ${formatNumber(result.full_value!)}` +
      ` - baseline ${formatNumber(result.baseline_value)}`;
  root.appendChild(sum);
  const meta = el("div", { class: "muted", "data-metric": "evaluations" });
  meta.dataset.value = String(result.n_value_evaluations);
  meta.textContent = `${result.estimator}, ${result.n_value_evaluations} evaluations`;
  root.appendChild(meta);
}

export function renderShapleyMapPanel(
  root: HTMLElement, lon: number[], lat: number[], values: number[], title: string,
): void {
  root.replaceChildren();
  root.appendChild(el("h3", {}, title));
  root.appendChild(scatterMap(lon, lat, values));
}

export function renderStepwisePanel(
  root: HTMLElement, suggestions: Suggestion[], onAccept: (s: Suggestion) => void,
): void {
  root.replaceChildren();
  const list = el("ol", { class: "suggestions" });
  for (const s of suggestions) {
    const item = el("li", { "data-predictor": s.predictor });
    const label = el("span", { class: "delta", "data-metric": "delta" });
    label.dataset.value = String(s.delta);
    label.textContent = `${s.predictor}: ${s.delta >= 0 ? "+" : ""}${formatNumber(s.delta)}`;
    const btn = el("button", { type: "button" }, "add");
    btn.addEventListener("click", () => onAccept(s));
    item.append(label, btn);
    list.appendChild(item);
  }
  root.appendChild(list);
}

export function renderHistoryTrail(root: HTMLElement, state: SubsetState): void {
  root.replaceChildren();
  const table = el("table", { class: "history" });
  const head = el("tr");
  for (const h of ["step", "mask", "mean AUC"]) head.appendChild(el("th", {}, h));
  table.appendChild(head);
  state.history.forEach((entry, i) => {
    const tr = el("tr", { "data-step": String(i) });
    tr.appendChild(el("td", {}, String(i)));
    tr.appendChild(el("td", { class: "mask" }, entry.mask));
    const auc = el("td", { class: "auc" });
    auc.dataset.value = String(entry.meanAuc);
    auc.textContent = formatNumber(entry.meanAuc);
    tr.appendChild(auc);
    table.appendChild(tr);
  });
  root.appendChild(table);
}

export function renderBanner(root: HTMLElement, message: string, retry?: () => void): void {
  root.replaceChildren();
  const banner = el("div", { class: "banner", role: "alert" }, message);
  if (retry) {
    const btn = el("button", { type: "button" }, "retry");
    btn.addEventListener("click", retry);
    banner.appendChild(btn);
  }
  root.appendChild(banner);
}

export function setControlsEnabled(root: HTMLElement, enabled: boolean): void {
  for (const node of root.querySelectorAll("input,button")) {
    (node as HTMLInputElement | HTMLButtonElement).disabled = !enabled;
  }
}
