import init, { trisection_view_json, plan_view_json, flip_view_json } from "./pkg/structbin_web.js";

const REGION_COLORS = ["#d1495b", "#edae49", "#00798c"];

function formRequest(form) {
  const req = {};
  for (const el of form.elements) {
    if (!el.name) continue;
    if (el.type === "checkbox") req[el.name] = el.checked;
    else if (el.type === "number") req[el.name] = Number(el.value);
    else if (el.name === "fractions") req[el.name] = el.value.split(",").map(Number);
    else req[el.name] = el.value;
  }
  return req;
}

function call(fn, req, statsEl) {
  try {
    statsEl.classList.remove("error");
    return JSON.parse(fn(JSON.stringify(req)));
  } catch (err) {
    statsEl.classList.add("error");
    statsEl.textContent = String(err.message ?? err);
    return null;
  }
}

function setupCanvas(canvas) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.font = "11px system-ui";
  return { ctx, w: canvas.width, h: canvas.height, pad: 36 };
}

function axes({ ctx, w, h, pad }, xLabel, yMax) {
  ctx.strokeStyle = "#999";
  ctx.beginPath();
  ctx.moveTo(pad, 8);
  ctx.lineTo(pad, h - pad);
  ctx.lineTo(w - 8, h - pad);
  ctx.stroke();
  ctx.fillStyle = "#555";
  ctx.fillText(xLabel, w / 2 - 30, h - 8);
  ctx.fillText(yMax.toPrecision(3), 2, 16);
}

function drawHistogram(canvas, view) {
  const c = setupCanvas(canvas);
  const { ctx, w, h, pad } = c;
  const peak = Math.max(1, ...view.bins.map((b) => b[0] + b[1] + b[2]));
  const bw = (w - pad - 8) / view.bins.length;
  view.bins.forEach((bin, i) => {
    let y = h - pad;
    bin.forEach((count, region) => {
      const bh = (count / peak) * (h - pad - 12);
      ctx.fillStyle = REGION_COLORS[region];
      ctx.fillRect(pad + i * bw + 1, y - bh, bw - 2, bh);
      y -= bh;
    });
  });
  ctx.strokeStyle = "#222";
  ctx.setLineDash([4, 3]);
  for (const p of [view.p1, view.p2]) {
    const x = pad + (p / view.max_abs) * (w - pad - 8);
    ctx.beginPath();
    ctx.moveTo(x, 8);
    ctx.lineTo(x, h - pad);
    ctx.stroke();
  }
  ctx.setLineDash([]);
  axes(c, "|w| (dashed: p1, p2)", peak);
}

function drawLine(canvas, xs, ys, xLabel, { errs = null, marker = null } = {}) {
  const c = setupCanvas(canvas);
  const { ctx, w, h, pad } = c;
  const hi = ys.map((y, i) => y + (errs ? errs[i] : 0));
  const yMax = Math.max(...hi) * 1.05 || 1;
  const yMin = errs ? 0 : Math.min(...ys) * 0.95;
  const xMin = Math.min(...xs);
  const xMax = Math.max(...xs);
  const px = (x) => pad + ((x - xMin) / (xMax - xMin || 1)) * (w - pad - 16);
  const py = (y) => h - pad - ((y - yMin) / (yMax - yMin || 1)) * (h - pad - 12);
  ctx.strokeStyle = "#00798c";
  ctx.beginPath();
  xs.forEach((x, i) => (i ? ctx.lineTo(px(x), py(ys[i])) : ctx.moveTo(px(x), py(ys[i]))));
  ctx.stroke();
  ctx.fillStyle = "#00798c";
  xs.forEach((x, i) => {
    ctx.fillRect(px(x) - 2, py(ys[i]) - 2, 4, 4);
    if (errs) {
      ctx.beginPath();
      ctx.moveTo(px(x), py(ys[i] - errs[i]));
      ctx.lineTo(px(x), py(ys[i] + errs[i]));
      ctx.stroke();
    }
  });
  if (marker !== null) {
    ctx.fillStyle = "#d1495b";
    ctx.beginPath();
    ctx.arc(px(xs[marker]), py(ys[marker]), 5, 0, 2 * Math.PI);
    ctx.fill();
  }
  axes(c, xLabel, yMax);
}

function drawPlan(canvas, plan) {
  const c = setupCanvas(canvas);
  const { ctx, w, h, pad } = c;
  const bw = (w - pad - 8) / plan.layers.length;
  const py = (r) => h - pad - r * (h - pad - 12);
  plan.layers.forEach((layer, i) => {
    const ratio = layer.n / plan.m;
    ctx.fillStyle = "#00798c";
    ctx.fillRect(pad + i * bw + 2, py(ratio), bw - 4, h - pad - py(ratio));
    ctx.fillStyle = "#d1495b";
    ctx.fillRect(pad + i * bw + 2, py(Math.min(layer.raw_ratio, 1)) - 1, bw - 4, 2);
    ctx.fillStyle = "#222";
    ctx.fillText(`${layer.n}`, pad + i * bw + bw / 2 - 3, py(ratio) - 3);
  });
  ctx.strokeStyle = "#edae49";
  ctx.beginPath();
  ctx.moveTo(pad, py(plan.target_ratio));
  ctx.lineTo(w - 8, py(plan.target_ratio));
  ctx.stroke();
  axes(c, "layer (bars: n/m, red: raw ratio, line: target)", 1);
}

function runTrisection() {
  const stats = document.getElementById("tri-stats");
  const view = call(trisection_view_json, formRequest(document.getElementById("tri-form")), stats);
  if (!view) return;
  drawHistogram(document.getElementById("tri-hist"), view);
  const best = view.curve.findIndex((p) => p.p1 === view.p1);
  drawLine(document.getElementById("tri-curve"), view.curve.map((p) => p.p1), view.curve.map((p) => p.error),
    "p1 candidate vs squared error", { marker: best >= 0 ? best : null });
  stats.textContent =
    `p1 = ${view.p1.toFixed(4)}  p2 = ${view.p2.toFixed(4)}  max|w| = ${view.max_abs.toFixed(4)}\n` +
    `sparse ${view.sparse}  intermediate ${view.intermediate}  dense ${view.dense}  pruned ${view.pruned}\n` +
    `squared error: one scale ${view.single_scale_error.toFixed(3)}, three regions ${view.trisection_error.toFixed(3)}`;
}

function runPlan() {
  const stats = document.getElementById("plan-stats");
  const plan = call(plan_view_json, formRequest(document.getElementById("plan-form")), stats);
  if (!plan) return;
  drawPlan(document.getElementById("plan-chart"), plan);
  stats.textContent =
    `target ${plan.target_ratio.toFixed(4)}  realized ${plan.realized_ratio.toFixed(4)}  m = ${plan.m}\n` +
    plan.layers.map((l) => `${l.name}: ${l.n}:${plan.m}` + (l.alpha === null ? "" : ` (share ${l.alpha.toFixed(3)})`)).join("\n");
}

function runFlip() {
  const stats = document.getElementById("flip-stats");
  const view = call(flip_view_json, formRequest(document.getElementById("flip-form")), stats);
  if (!view) return;
  const pts = view.points;
  drawLine(document.getElementById("flip-chart"), pts.map((p) => p.fraction), pts.map((p) => p.mean_err),
    "fraction of non-salient signs flipped", { errs: pts.map((p) => p.std_err) });
  stats.textContent =
    `output error of an all-zero layer: ${view.reference_norm.toFixed(2)}\n` +
    pts.map((p) => `${p.fraction.toFixed(3)}: ${p.mean_err.toFixed(3)} ± ${p.std_err.toFixed(3)}`).join("\n");
}

for (const [id, fn] of [["tri-form", runTrisection], ["plan-form", runPlan], ["flip-form", runFlip]]) {
  document.getElementById(id).addEventListener("submit", (e) => {
    e.preventDefault();
    fn();
  });
}

init().then(() => {
  document.getElementById("status").textContent =
    "All computation runs locally in WebAssembly on seeded synthetic weights.";
  runTrisection();
  runPlan();
  runFlip();
});
