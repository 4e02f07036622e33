import init, { Demo, carlemanProfile } from "./pkg/chb_web.js";

const FRAMES = 6;
const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
const stats = $("stats");

function plot(canvas, xs, rows, title) {
  const ctx = canvas.getContext("2d");
  const { width: W, height: H } = canvas;
  ctx.clearRect(0, 0, W, H);
  let lo = Infinity, hi = -Infinity;
  for (const r of rows) for (const v of r) { lo = Math.min(lo, v); hi = Math.max(hi, v); }
  if (hi - lo < 1e-300) { hi += 1; lo -= 1; }
  const px = (x) => 40 + (W - 50) * (x - xs[0]) / (xs[xs.length - 1] - xs[0]);
  const py = (v) => H - 20 - (H - 40) * (v - lo) / (hi - lo);
  ctx.fillStyle = "#000";
  ctx.fillText(`${title}   [${lo.toExponential(2)}, ${hi.toExponential(2)}]`, 45, 12);
  rows.forEach((r, i) => {
    const shade = Math.round(200 * (1 - i / Math.max(1, rows.length - 1)));
    ctx.strokeStyle = `rgb(${shade},${shade},255)`;
    ctx.beginPath();
    r.forEach((v, j) => (j ? ctx.lineTo(px(xs[j]), py(v)) : ctx.moveTo(px(xs[j]), py(v))));
    ctx.stroke();
  });
}

function split(flat, width, count) {
  return Array.from({ length: count }, (_, i) => Array.from(flat.slice(i * width, (i + 1) * width)));
}

function show(demo, controlled) {
  const xs = demo.nodes();
  const m = xs.length;
  const frames = split(demo.frames(controlled, FRAMES), 2 * m, FRAMES);
  plot($("w"), xs, frames.map((f) => f.slice(0, m)), `w (${controlled ? "controlled" : "free"})`);
  plot($("psi"), xs, frames.map((f) => f.slice(m)), `ψ (${controlled ? "controlled" : "free"})`);
}

function build() {
  return new Demo(num("n"), num("dt"), num("horizon"), num("phibar"));
}

function guard(f) {
  return () => {
    try { f(); } catch (e) { stats.textContent = `error: ${e.message ?? e}`; }
  };
}

function carleman() {
  const n = 200;
  const p = carlemanProfile(num("o0a"), num("o0b"), num("oa"), num("ob"), num("lambda"), 0, num("tfrac"), num("horizon"), n);
  const rows = split(p, 4, n + 1);
  const xs = rows.map((r) => r[0]);
  const logw = rows.map((r) => r[3]);
  const top = Math.max(...logw);
  plot($("carleman"), xs, [rows.map((r) => r[1]), logw.map((v) => v - top)], "ν (light) and log weight minus max (dark)");
}

await init();

$("free").onclick = guard(() => {
  show(build(), false);
  stats.textContent = "free evolution";
});

$("control").onclick = guard(() => {
  const demo = build();
  const t0 = performance.now();
  const [terminal, free, cost, its, defect] = demo.solve(num("eps"));
  show(demo, true);
  stats.textContent =
    `‖y(T)‖ = ${terminal.toExponential(3)}   free ‖y(T)‖ = ${free.toExponential(3)}\n` +
    `‖h‖ = ${cost.toExponential(3)}   CG iterations = ${its}   optimality defect = ${defect.toExponential(2)}\n` +
    `${(performance.now() - t0).toFixed(0)} ms`;
});

for (const id of ["o0a", "o0b", "oa", "ob", "lambda", "tfrac"]) $(id).oninput = guard(carleman);
guard(carleman)();
stats.textContent = "ready";
