import init, { baseline_sweep, simulate_pulse, train_demo } from "./pkg/eo_pinn_wasm_demo.js";

const $ = (id) => document.getElementById(id);
const COLOURS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e"];

// series: [{label, xs, ys}], guides: [{y, label}]
function draw(canvas, series, guides = []) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 40;
  ctx.clearRect(0, 0, w, h);
  let xs = series.flatMap((s) => s.xs), ys = series.flatMap((s) => s.ys).concat(guides.map((g) => g.y));
  let x0 = Math.min(...xs), x1 = Math.max(...xs), y0 = Math.min(...ys), y1 = Math.max(...ys);
  if (x1 === x0) x1 = x0 + 1;
  if (y1 === y0) { y0 -= 0.5; y1 += 0.5; }
  const sx = (x) => pad + ((x - x0) / (x1 - x0)) * (w - 2 * pad);
  const sy = (y) => h - pad - ((y - y0) / (y1 - y0)) * (h - 2 * pad);
  ctx.strokeStyle = "#000";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  ctx.font = "11px sans-serif";
  ctx.fillStyle = "#000";
  ctx.fillText(y1.toPrecision(4), 2, pad + 4);
  ctx.fillText(y0.toPrecision(4), 2, h - pad);
  ctx.fillText(x0.toPrecision(3), pad, h - pad + 14);
  ctx.fillText(x1.toPrecision(3), w - pad - 20, h - pad + 14);
  for (const g of guides) {
    ctx.setLineDash([6, 4]);
    ctx.strokeStyle = "#888";
    ctx.beginPath();
    ctx.moveTo(pad, sy(g.y));
    ctx.lineTo(w - pad, sy(g.y));
    ctx.stroke();
    ctx.setLineDash([]);
    ctx.fillStyle = "#888";
    ctx.fillText(g.label, w - pad - 60, sy(g.y) - 4);
  }
  series.forEach((s, i) => {
    ctx.strokeStyle = COLOURS[i % COLOURS.length];
    ctx.beginPath();
    s.xs.forEach((x, k) => (k ? ctx.lineTo(sx(x), sy(s.ys[k])) : ctx.moveTo(sx(x), sy(s.ys[k]))));
    ctx.stroke();
    ctx.fillStyle = ctx.strokeStyle;
    ctx.fillText(s.label, pad + 8, pad + 14 * (i + 1));
  });
}

function guarded(out, f) {
  try {
    f();
  } catch (e) {
    $(out).textContent = "error: " + (e.message ?? e);
  }
}

function runBaseline() {
  guarded("b-out", () => {
    const sigmas = [0, 0.01, 0.02, 0.05, 0.075, 0.1];
    const pts = JSON.parse(baseline_sweep($("b-gate").value, sigmas.join(","), Number($("b-n").value), 1n));
    draw($("b-plot"), [{ label: "baseline", xs: pts.map((p) => p.sigma), ys: pts.map((p) => p.fidelity) }]);
    $("b-out").textContent = pts.map((p) => `σ=${p.sigma.toFixed(3)}  F=${p.fidelity.toFixed(5)} ± ${p.std_error.toExponential(1)}`).join("\n");
  });
}

function runSimulate() {
  guarded("s-out", () => {
    const r = JSON.parse(simulate_pulse($("s-gate").value, Number($("s-j12").value), Number($("s-j23").value), Number($("s-t").value), Number($("s-sigma").value), 500, 1n));
    const p = r.pulse;
    draw($("s-plot"), [{ label: "J12", xs: p.time_ns, ys: p.j12_mhz }, { label: "J23", xs: p.time_ns, ys: p.j23_mhz }]);
    $("s-out").textContent = `F = ${r.fidelity.toFixed(6)} ± ${r.std_error.toExponential(1)}`;
  });
}

function runTrain() {
  $("t-out").textContent = "training...";
  // let the label paint before the blocking call
  setTimeout(() => guarded("t-out", () => {
    const r = JSON.parse(train_demo($("t-gate").value, Number($("t-sigma").value), Number($("t-iter").value), 0n));
    const it = r.trace.map((t) => t.iteration);
    draw($("t-fid"), [{ label: "fidelity", xs: it, ys: r.trace.map((t) => t.fidelity) }], [{ y: 0.99, label: "F_th" }]);
    draw($("t-pulse"), [{ label: "J12", xs: r.pulse.time_ns, ys: r.pulse.j12_mhz }, { label: "J23", xs: r.pulse.time_ns, ys: r.pulse.j23_mhz }]);
    $("t-out").textContent = `final F = ${r.final_fidelity.toFixed(5)}, T_g = ${r.final_t_g_ns.toFixed(3)} ns, crossed 0.99 at ${r.crossing_iteration ?? "never"}`;
  }), 10);
}

await init();
$("b-run").onclick = runBaseline;
$("s-run").onclick = runSimulate;
$("t-run").onclick = runTrain;
runBaseline();
