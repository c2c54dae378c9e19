import init, { solve_demo, backward_demo, ice_demo } from "./pkg/kinsolve_web.js";

const $ = (id) => document.getElementById(id);

function guard(f) {
  try {
    $("error").textContent = "";
    f();
  } catch (e) {
    $("error").textContent = String(e);
  }
}

function drawSkeleton(ctx, joints, parents, color, width) {
  ctx.strokeStyle = color;
  ctx.lineWidth = width;
  const s = 180, cx = 210, cy = 170;
  ctx.beginPath();
  parents.forEach((p, k) => {
    if (p === null) return;
    ctx.moveTo(cx + s * joints[p][0], cy - s * joints[p][1]);
    ctx.lineTo(cx + s * joints[k][0], cy - s * joints[k][1]);
  });
  ctx.stroke();
}

function renderPose() {
  const jitter = Number($("jitter").value);
  $("jitter-val").textContent = jitter;
  const r = JSON.parse(solve_demo(Number($("seed").value), jitter));
  const ctx = $("pose").getContext("2d");
  ctx.clearRect(0, 0, 420, 420);
  drawSkeleton(ctx, r.truth, r.parents, "#999", 5);
  drawSkeleton(ctx, r.naive.joints, r.parents, "#d33", 2);
  drawSkeleton(ctx, r.adaptive.joints, r.parents, "#27c", 2);
  $("pose-stats").innerHTML =
    `MPJPE naive <b>${r.naive.mpjpe_mm.toFixed(2)}</b> mm<br>` +
    `MPJPE adaptive <b>${r.adaptive.mpjpe_mm.toFixed(2)}</b> mm`;
}

const pts = { A: [90, 220], B: [200, 90], C: [320, 220] };
let dragging = null;

function renderBackward() {
  const lpa = Number($("lpa").value), lk = Number($("lk").value);
  const r = JSON.parse(backward_demo(...pts.A, ...pts.B, ...pts.C, lpa, lk));
  const ctx = $("bu").getContext("2d");
  ctx.clearRect(0, 0, 420, 320);
  ctx.strokeStyle = "#ccc";
  ctx.lineWidth = 1;
  for (const [p, rad] of [[pts.A, lpa], [pts.C, lk]]) {
    ctx.beginPath();
    ctx.arc(p[0], p[1], rad, 0, 2 * Math.PI);
    ctx.stroke();
  }
  ctx.strokeStyle = r.feasible ? "#27c" : "#d33";
  ctx.lineWidth = 3;
  ctx.beginPath();
  ctx.moveTo(...pts.A);
  ctx.lineTo(...r.b_star);
  ctx.lineTo(...pts.C);
  ctx.stroke();
  for (const [name, p] of Object.entries(pts)) {
    ctx.fillStyle = "#333";
    ctx.beginPath();
    ctx.arc(p[0], p[1], 6, 0, 2 * Math.PI);
    ctx.fill();
    ctx.fillText(name, p[0] + 9, p[1] - 9);
  }
  ctx.fillStyle = r.feasible ? "#27c" : "#d33";
  ctx.beginPath();
  ctx.arc(...r.b_star, 5, 0, 2 * Math.PI);
  ctx.fill();
  ctx.fillText("B*", r.b_star[0] + 9, r.b_star[1] + 14);
  $("bu-stats").innerHTML = r.feasible
    ? "B* is the closest point to B that keeps both bone lengths."
    : `No exact solution: both lengths are violated by at most <b>${r.residual.toFixed(1)}</b> px.`;
}

function hookDrag() {
  const c = $("bu");
  const at = (e) => {
    const b = c.getBoundingClientRect();
    return [e.clientX - b.left, e.clientY - b.top];
  };
  c.addEventListener("pointerdown", (e) => {
    const m = at(e);
    dragging = Object.keys(pts).find((k) => Math.hypot(pts[k][0] - m[0], pts[k][1] - m[1]) < 12) ?? null;
  });
  c.addEventListener("pointermove", (e) => {
    if (!dragging) return;
    pts[dragging] = at(e);
    guard(renderBackward);
  });
  addEventListener("pointerup", () => (dragging = null));
}

function renderIce() {
  const f = Number($("s0f").value) / 100;
  $("s0f-val").textContent = f.toFixed(2);
  const depth = Number($("depth").value);
  const r = JSON.parse(ice_demo(1, depth, f, 6, $("update").value === "secant"));
  const ctx = $("ice").getContext("2d");
  ctx.clearRect(0, 0, 420, 240);
  const maxErr = Math.max(...r.trace.map((t) => Math.abs(t.depth - depth)), 1e-9);
  ctx.strokeStyle = "#27c";
  ctx.lineWidth = 2;
  ctx.beginPath();
  r.trace.forEach((t, i) => {
    const x = 30 + i * 60, y = 210 - 180 * (Math.abs(t.depth - depth) / maxErr);
    i ? ctx.lineTo(x, y) : ctx.moveTo(x, y);
  });
  ctx.stroke();
  ctx.fillStyle = "#666";
  ctx.fillText("|depth error| per step", 30, 20);
  $("ice-table").innerHTML =
    "<tr><th>step</th><th>depth (m)</th><th>reprojection</th></tr>" +
    r.trace
      .map((t) => `<tr><td>${t.step}</td><td>${t.depth.toFixed(5)}</td><td>${t.reprojection.toExponential(2)}</td></tr>`)
      .join("");
}

await init();
for (const id of ["seed", "jitter"]) $(id).addEventListener("input", () => guard(renderPose));
for (const id of ["lpa", "lk"]) $(id).addEventListener("input", () => guard(renderBackward));
for (const id of ["depth", "s0f", "update"]) $(id).addEventListener("input", () => guard(renderIce));
hookDrag();
guard(renderPose);
guard(renderBackward);
guard(renderIce);
