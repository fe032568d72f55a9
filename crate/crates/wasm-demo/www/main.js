import init, { thresholds, solve_profile, evolve } from "./pkg/coagdrift_wasm.js";

const COLORS = ["#1f5fa8", "#c0392b", "#27865b", "#8e44ad"];

const $ = (id) => document.getElementById(id);
const num = (id) => parseFloat($(id).value);

function fmt(x) {
  if (x === null || x === undefined) return "n/a";
  if (typeof x === "boolean") return String(x);
  if (typeof x !== "number") return String(x);
  return Math.abs(x) >= 1e-3 && Math.abs(x) < 1e4 ? x.toPrecision(8) : x.toExponential(6);
}

function table(id, rows) {
  $(id).innerHTML = rows
    .map(([k, v, cls]) => `<tr><td>${k}</td><td class="${cls || ""}">${fmt(v)}</td></tr>`)
    .join("");
}

function legend(id, names) {
  $(id).innerHTML = names
    .map((n, i) => `<span style="color:${COLORS[i % COLORS.length]}">&#9644; ${n}</span>`)
    .join("");
}

// Draws several series on one canvas; log axes drop nonpositive points.
function plot(canvas, series, { logx = false, logy = false, xlabel = "", ylabel = "" } = {}) {
  const ctx = canvas.getContext("2d");
  const W = canvas.width, H = canvas.height, L = 70, R = 15, T = 10, B = 35;
  ctx.clearRect(0, 0, W, H);
  const tx = logx ? Math.log10 : (v) => v;
  const ty = logy ? Math.log10 : (v) => v;
  const pts = series.map((s) =>
    s.x.map((x, i) => [x, s.y[i]]).filter(([x, y]) => (!logx || x > 0) && (!logy || y > 0) && isFinite(x) && isFinite(y))
      .map(([x, y]) => [tx(x), ty(y)]),
  );
  const all = pts.flat();
  if (all.length === 0) return;
  let [x0, x1] = [Math.min(...all.map((p) => p[0])), Math.max(...all.map((p) => p[0]))];
  let [y0, y1] = [Math.min(...all.map((p) => p[1])), Math.max(...all.map((p) => p[1]))];
  if (x1 === x0) x1 = x0 + 1;
  if (y1 === y0) y1 = y0 + 1;
  const sx = (x) => L + ((x - x0) / (x1 - x0)) * (W - L - R);
  const sy = (y) => H - B - ((y - y0) / (y1 - y0)) * (H - T - B);

  ctx.strokeStyle = "#999";
  ctx.fillStyle = "#444";
  ctx.font = "11px sans-serif";
  ctx.strokeRect(L, T, W - L - R, H - T - B);
  for (let k = 0; k <= 5; k++) {
    const xv = x0 + ((x1 - x0) * k) / 5, yv = y0 + ((y1 - y0) * k) / 5;
    const xl = logx ? `1e${xv.toFixed(1)}` : xv.toPrecision(3);
    const yl = logy ? `1e${yv.toFixed(1)}` : yv.toPrecision(3);
    ctx.fillText(xl, sx(xv) - 14, H - B + 14);
    ctx.fillText(yl, 4, sy(yv) + 4);
  }
  ctx.fillText(xlabel, W / 2, H - 4);
  ctx.save();
  ctx.translate(12, H / 2);
  ctx.rotate(-Math.PI / 2);
  ctx.fillText(ylabel, 0, 0);
  ctx.restore();

  pts.forEach((p, i) => {
    ctx.strokeStyle = COLORS[i % COLORS.length];
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    p.forEach(([x, y], j) => (j === 0 ? ctx.moveTo(sx(x), sy(y)) : ctx.lineTo(sx(x), sy(y))));
    ctx.stroke();
  });
}

// Runs `work` after the status text has had a chance to paint.
function busy(statusId, work) {
  $(statusId).textContent = "computing...";
  setTimeout(() => {
    const start = performance.now();
    try {
      work();
      $(statusId).textContent = `done in ${((performance.now() - start) / 1000).toFixed(2)} s`;
    } catch (e) {
      $(statusId).textContent = `error: ${e}`;
    }
  }, 20);
}

function runThreshold() {
  busy("th-status", () => {
    const r = JSON.parse(thresholds(num("th-v"), num("th-m0")));
    table("th-out", [
      ["tail exponent (2-v)/(1-v)", r.tau_inf],
      ["m0_bar", r.m0_bar],
      ["m0 admissible", r.admissible, r.admissible ? "" : "fail"],
      ["alpha", r.alpha],
      ["sigma_star", r.sigma_star],
      ["tau_star", r.tau_star],
    ]);
  });
}

function runSolve() {
  busy("pr-status", () => {
    const r = JSON.parse(solve_profile(num("pr-v"), num("pr-m0"), Math.round(num("pr-n")), $("pr-force").checked));
    const series = [{ x: r.z, y: r.f }, { x: r.z, y: r.seed }];
    const names = ["F (computed)", "exponential seed m0 v e^{-vz}"];
    if (r.supersolution.length) {
      series.push({ x: r.z, y: r.supersolution });
      names.push("supersolution");
    }
    plot($("pr-plot"), series, { logx: true, logy: true, xlabel: "z", ylabel: "F(z)" });
    legend("pr-legend", names);
    const rep = r.report;
    table("pr-out", [
      ["converged", rep.converged, rep.converged ? "" : "fail"],
      ["certified", rep.certified, rep.certified ? "" : "fail"],
      ["outer / inner iterations", `${rep.outer_iterations} / ${rep.inner_iterations_total}`],
      ["F(0)  (target m0(1-m0))", rep.F0],
      ["M1  (target m0/v)", rep.M1],
      ["v_effective = M0/M1", rep.v_effective],
      ["fitted tail exponent", rep.tail_exponent_fit],
      ["tail prefactor c", rep.tail_prefactor],
      ["weighted residual", rep.model_residual_norm],
      ...r.checks.map((c) => [`check ${c.name}`, c.pass ? "pass" : `FAIL (${c.note})`, c.pass ? "" : "fail"]),
    ]);
  });
}

function runEvolve() {
  busy("ev-status", () => {
    const r = JSON.parse(evolve(num("ev-v"), num("ev-m0"), Math.round(num("ev-cells")), num("ev-t1")));
    plot($("ev-plot"), [{ x: r.x, y: r.f }, { x: r.x, y: r.similarity }], { logy: true, xlabel: "x", ylabel: "f(t1, x)" });
    legend("ev-legend", ["simulated", "t^-2 F(x/t)"]);
    const peak = Math.max(...r.similarity) * Math.pow(num("ev-t1"), 2);
    plot(
      $("ev-diag"),
      [
        { x: r.t, y: r.u_t.map((u) => u / num("ev-v")) },
        { x: r.t, y: r.m1.map((m) => m / r.m1[0]) },
        { x: r.t, y: r.error.map((e) => 1 + e / peak) },
      ],
      { xlabel: "t", ylabel: "ratio" },
    );
    legend("ev-diag-legend", ["u t / v", "M1 / M1(1)", "1 + self-similar error / max F"]);
  });
}

await init();
$("th-go").onclick = runThreshold;
$("pr-go").onclick = runSolve;
$("ev-go").onclick = runEvolve;
runThreshold();
