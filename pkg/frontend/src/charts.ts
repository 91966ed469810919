// SVG chart rendering straight from a server DataSeries document — the
// chart layer never recomputes analytics, it only draws what the
// platform produced.

import type { DataSeriesDoc } from "./types.js";

export interface ChartOptions {
  width?: number;
  height?: number;
  caption?: string; // e.g. an R² readout
}

const PALETTE = ["#2563eb", "#dc2626", "#059669", "#d97706", "#7c3aed"];
const MARGIN = { top: 28, right: 16, bottom: 42, left: 56 };

interface Scale {
  (value: number): number;
  min: number;
  max: number;
}

function makeScale(min: number, max: number, rangeLo: number, rangeHi: number): Scale {
  const span = max - min || 1;
  const scale = ((value: number) =>
    rangeLo + ((value - min) / span) * (rangeHi - rangeLo)) as Scale;
  scale.min = min;
  scale.max = max;
  return scale;
}

function escapeXml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function numericX(doc: DataSeriesDoc): number[] {
  return doc.x.map((v, i) => (typeof v === "number" ? v : i));
}

/** Renders a DataSeries document to standalone SVG markup. */
export function renderChartSvg(doc: DataSeriesDoc, options: ChartOptions = {}): string {
  const width = options.width ?? 560;
  const height = options.height ?? 320;
  const plotW = width - MARGIN.left - MARGIN.right;
  const plotH = height - MARGIN.top - MARGIN.bottom;

  const xs = numericX(doc);
  const ys = doc.series.flatMap((s) => s.y.filter((v): v is number => v !== null));
  if (xs.length === 0 || ys.length === 0) {
    return `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}"><text x="12" y="24">no data</text></svg>`;
  }
  const sx = makeScale(Math.min(...xs), Math.max(...xs), MARGIN.left, MARGIN.left + plotW);
  const yLo = Math.min(0, ...ys);
  const yHi = Math.max(...ys);
  const sy = makeScale(yLo, yHi, MARGIN.top + plotH, MARGIN.top); // inverted

  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" viewBox="0 0 ${width} ${height}" class="vb-chart vb-${doc.chart_type}">`,
  );
  parts.push(
    `<rect x="${MARGIN.left}" y="${MARGIN.top}" width="${plotW}" height="${plotH}" fill="none" stroke="#d4d4d8"/>`,
  );
  // axis labels
  parts.push(
    `<text x="${MARGIN.left + plotW / 2}" y="${height - 8}" text-anchor="middle" class="axis-label">${escapeXml(doc.x_label)}</text>`,
  );
  parts.push(
    `<text x="14" y="${MARGIN.top + plotH / 2}" text-anchor="middle" class="axis-label" transform="rotate(-90 14 ${MARGIN.top + plotH / 2})">${escapeXml(doc.y_label)}</text>`,
  );
  if (options.caption) {
    parts.push(
      `<text x="${width - MARGIN.right}" y="18" text-anchor="end" class="caption">${escapeXml(options.caption)}</text>`,
    );
  }
  // axis extent ticks
  parts.push(`<text x="${MARGIN.left}" y="${height - 24}" class="tick">${fmt(sx.min)}</text>`);
  parts.push(
    `<text x="${MARGIN.left + plotW}" y="${height - 24}" text-anchor="end" class="tick">${fmt(sx.max)}</text>`,
  );
  parts.push(
    `<text x="${MARGIN.left - 6}" y="${MARGIN.top + plotH}" text-anchor="end" class="tick">${fmt(sy.min)}</text>`,
  );
  parts.push(
    `<text x="${MARGIN.left - 6}" y="${MARGIN.top + 10}" text-anchor="end" class="tick">${fmt(sy.max)}</text>`,
  );

  doc.series.forEach((series, index) => {
    const color = PALETTE[index % PALETTE.length];
    if (doc.chart_type === "scatter") {
      // the fitted overlay of a regression draws as a polyline on top
      if (series.name === "fitted") {
        const pts = xs
          .map((x, i) => ({ x, y: series.y[i] }))
          .filter((p): p is { x: number; y: number } => p.y !== null)
          .sort((a, b) => a.x - b.x)
          .map((p) => `${sx(p.x).toFixed(1)},${sy(p.y).toFixed(1)}`)
          .join(" ");
        parts.push(
          `<polyline points="${pts}" fill="none" stroke="${color}" stroke-width="2" data-series="fitted"/>`,
        );
        return;
      }
      series.y.forEach((y, i) => {
        if (y === null) return;
        parts.push(
          `<circle cx="${sx(xs[i]).toFixed(1)}" cy="${sy(y).toFixed(1)}" r="3" fill="${color}" fill-opacity="0.75" data-series="${escapeXml(series.name)}"/>`,
        );
      });
    } else if (doc.chart_type === "line") {
      const pts = xs
        .map((x, i) => ({ x, y: series.y[i] }))
        .filter((p): p is { x: number; y: number } => p.y !== null)
        .map((p) => `${sx(p.x).toFixed(1)},${sy(p.y).toFixed(1)}`)
        .join(" ");
      parts.push(
        `<polyline points="${pts}" fill="none" stroke="${color}" stroke-width="2" data-series="${escapeXml(series.name)}"/>`,
      );
    } else {
      // bar and histogram: one column per x position
      const slot = plotW / xs.length;
      const barW = Math.max(2, slot * 0.7);
      series.y.forEach((y, i) => {
        if (y === null) return;
        const x0 = MARGIN.left + i * slot + (slot - barW) / 2;
        const y0 = sy(Math.max(0, y));
        const h = Math.abs(sy(0) - sy(y));
        parts.push(
          `<rect x="${x0.toFixed(1)}" y="${y0.toFixed(1)}" width="${barW.toFixed(1)}" height="${h.toFixed(1)}" fill="${color}" fill-opacity="0.8" data-series="${escapeXml(series.name)}"/>`,
        );
      });
    }
  });
  parts.push("</svg>");
  return parts.join("");
}

function fmt(value: number): string {
  if (Number.isInteger(value)) return String(value);
  return value.toPrecision(4);
}
