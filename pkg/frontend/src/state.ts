/** Subset toggle state and the stepwise history trail.
 *
 * The mask always serializes to a string the /eval endpoint accepts, and
 * parse(serialize(state)) reproduces the state exactly.
 */

import type { SchemaInfo } from "./api.js";

export interface HistoryEntry {
  mask: string;
  meanAuc: number;
  nSpecies: number | null;
}

export type GroupToggleState = "on" | "off" | "mixed";

export class SubsetState {
  readonly order: string[];
  private visible: Set<string>;
  readonly history: HistoryEntry[] = [];

  constructor(readonly schema: SchemaInfo, initiallyVisible = true) {
    this.order = schema.predictors.map((p) => p.name);
    this.visible = new Set(initiallyVisible ? this.order : []);
  }

  isVisible(name: string): boolean {
    return this.visible.has(name);
  }

  visibleCount(): number {
    return this.visible.size;
  }

  hiddenPredictors(): string[] {
    return this.order.filter((n) => !this.visible.has(n));
  }

  setPredictor(name: string, on: boolean): void {
    if (!this.order.includes(name)) throw new Error(`unknown predictor ${name}`);
    if (on) this.visible.add(name);
    else this.visible.delete(name);
  }

  togglePredictor(name: string): void {
    this.setPredictor(name, !this.isVisible(name));
  }

  /** Group toggles cascade to every member predictor. */
  setGroup(group: string, on: boolean): void {
    const members = this.schema.groups[group];
    if (!members) throw new Error(`unknown group ${group}`);
    for (const name of members) this.setPredictor(name, on);
  }

  groupState(group: string): GroupToggleState {
    const members = this.schema.groups[group];
    if (!members) throw new Error(`unknown group ${group}`);
    const on = members.filter((n) => this.visible.has(n)).length;
    if (on === 0) return "off";
    if (on === members.length) return "on";
    return "mixed";
  }

  /** Canonical mask string: `all`, `none`, or schema-ordered predictor names. */
  serializeMask(): string {
    if (this.visible.size === this.order.length) return "all";
    if (this.visible.size === 0) return "none";
    return this.order.filter((n) => this.visible.has(n)).join(",");
  }

  static parseMask(schema: SchemaInfo, mask: string): Set<string> {
    const names = new Set(schema.predictors.map((p) => p.name));
    if (mask === "all") return new Set(names);
    if (mask === "none" || mask.trim() === "") return new Set();
    const out = new Set<string>();
    for (const raw of mask.split(",")) {
      const token = raw.trim();
      if (!token) continue;
      if (token in schema.groups) {
        for (const member of schema.groups[token]) out.add(member);
      } else if (names.has(token)) {
        out.add(token);
      } else {
        throw new Error(`unknown predictor or group ${token}`);
      }
    }
    return out;
  }

  /** Replace the toggle state with a parsed mask string. */
  applyMask(mask: string): void {
    this.visible = SubsetState.parseMask(this.schema, mask);
  }

  recordEval(mask: string, meanAuc: number, nSpecies: number | null = null): void {
    this.history.push({ mask, meanAuc, nSpecies });
  }

  /** Session-local trail, exportable for reconstructing the stepwise path. */
  historyCsv(): string {
    const lines = ["step,mask,mean_auc,n_species"];
    this.history.forEach((h, i) => {
      lines.push(`${i},"${h.mask}",${h.meanAuc},${h.nSpecies ?? ""}`);
    });
    return lines.join("\n") + "\n";
  }
}
