/** Greedy stepwise suggestion: score every single-predictor addition to the
 * current mask and rank the AUC deltas. */

import type { ApiClient } from "./api.js";
import type { SubsetState } from "./state.js";

export interface Suggestion {
  predictor: string;
  auc: number;
  delta: number;
}

export const STEPWISE_LIMIT = 64;

/** One /eval per remaining predictor; aborts cleanly via the signal. */
export async function stepwiseSweep(
  api: ApiClient,
  state: SubsetState,
  baseAuc: number,
  signal?: AbortSignal,
): Promise<Suggestion[]> {
  const remaining = state.hiddenPredictors();
  if (remaining.length > STEPWISE_LIMIT) {
    throw new Error(`${remaining.length} remaining predictors exceeds ${STEPWISE_LIMIT}`);
  }
  const suggestions: Suggestion[] = [];
  for (const predictor of remaining) {
    const visible = state.order.filter((n) => state.isVisible(n) || n === predictor);
    const mask = visible.length === state.order.length ? "all" : visible.join(",");
    const result = await api.evalMask(mask, false, signal);
    suggestions.push({ predictor, auc: result.mean_auc, delta: result.mean_auc - baseAuc });
  }
  suggestions.sort((a, b) => b.delta - a.delta);
  return suggestions;
}

/** Accepting a suggestion updates the mask and the history trail atomically:
 * the recorded AUC is the one the sweep already measured for that mask. */
export function acceptSuggestion(state: SubsetState, s: Suggestion): void {
  state.setPredictor(s.predictor, true);
  state.recordEval(state.serializeMask(), s.auc);
}
