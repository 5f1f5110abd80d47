/** Dependency-free SVG charts: horizontal bars and a lon/lat scatter. */

const SVG_NS = "http://www.w3.org/2000/svg";

function svgEl<K extends keyof SVGElementTagNameMap>(
  tag: K,
  attrs: Record<string, string | number>,
): SVGElementTagNameMap[K] {
  const el = document.createElementNS(SVG_NS, tag);
  for (const [k, v] of Object.entries(attrs)) el.setAttribute(k, String(v));
  return el;
}

/** Horizontal bar chart; each bar carries its exact value in data-value. */
export function barChart(labels: string[], values: number[], width = 420): SVGSVGElement {
  const rowH = 24;
  const height = labels.length * rowH + 8;
  const svg = svgEl("svg", { width, height, viewBox: `0 0 ${width} ${height}` });
  const maxAbs = Math.max(1e-12, ...values.map((v) => Math.abs(v)));
  const mid = width * 0.45;
  const scale = (width * 0.4) / maxAbs;
  values.forEach((v, i) => {
    const y = i * rowH + 4;
    const barW = Math.abs(v) * scale;
    const x = v >= 0 ? mid : mid - barW;
    const rect = svgEl("rect", {
      x, y, width: Math.max(barW, 0.5), height: rowH - 8,
      fill: v >= 0 ? "#2a7ab0" : "#c25450",
    });
    rect.dataset.player = labels[i];
    rect.dataset.value = String(values[i]);
    rect.setAttribute("class", "shapley-bar");
    svg.appendChild(rect);
    const label = svgEl("text", { x: 4, y: y + rowH - 12, "font-size": 11 });
    label.textContent = labels[i];
    svg.appendChild(label);
    const num = svgEl("text", {
      x: width - 4, y: y + rowH - 12, "font-size": 11, "text-anchor": "end",
    });
    num.textContent = formatNumber(v);
    svg.appendChild(num);
  });
  const axis = svgEl("line", { x1: mid, y1: 0, x2: mid, y2: height, stroke: "#888" });
  svg.appendChild(axis);
  return svg;
}

/** Raw lon/lat scatter (no basemap); fill encodes the signed value. */
export function scatterMap(
  lon: number[], lat: number[], values: number[], width = 420, height = 320,
): SVGSVGElement {
  const svg = svgEl("svg", { width, height, viewBox: `0 0 ${width} ${height}` });
  const pad = 12;
  const [x0, x1] = [Math.min(...lon), Math.max(...lon)];
  const [y0, y1] = [Math.min(...lat), Math.max(...lat)];
  const maxAbs = Math.max(1e-12, ...values.map((v) => Math.abs(v)));
  const sx = (v: number) => pad + ((v - x0) / Math.max(1e-12, x1 - x0)) * (width - 2 * pad);
  const sy = (v: number) => height - pad - ((v - y0) / Math.max(1e-12, y1 - y0)) * (height - 2 * pad);
  values.forEach((v, i) => {
    const t = v / maxAbs; // -1..1
    const red = t < 0 ? 200 : Math.round(200 - 160 * t);
    const blue = t > 0 ? 200 : Math.round(200 + 160 * t);
    const c = svgEl("circle", {
      cx: sx(lon[i]), cy: sy(lat[i]), r: 3,
      fill: `rgb(${red},${Math.round(200 - 120 * Math.abs(t))},${blue})`,
    });
    c.dataset.value = String(v);
    svg.appendChild(c);
  });
  return svg;
}

export function formatNumber(v: number): string {
  if (!Number.isFinite(v)) return String(v);
  const a = Math.abs(v);
  if (a !== 0 && (a < 1e-3 || a >= 1e4)) return v.toExponential(3);
  return v.toFixed(4);
}
