import init, { fusionField, episodeSummary, shrinkageCurve } from "./pkg/bayesmm_wasm_demo.js";

const COLORS = [[230, 85, 60], [60, 130, 220], [70, 170, 90]];
const EXTENT = 3;
const RES = 84;

const $ = (id) => document.getElementById(id);

const state = {
  textual: [-1.5, 1.0, 1.5, 1.0, 0.0, -1.5],
  geometric: [-1.0, 0.5, 1.8, 0.4, 0.5, -1.2],
  drag: null,
};

function toCanvas(canvas, x, y) {
  return [((x + EXTENT) / (2 * EXTENT)) * canvas.width, ((EXTENT - y) / (2 * EXTENT)) * canvas.height];
}

function fromCanvas(canvas, px, py) {
  return [(px / canvas.width) * 2 * EXTENT - EXTENT, EXTENT - (py / canvas.height) * 2 * EXTENT];
}

function drawField() {
  const canvas = $("field");
  const ctx = canvas.getContext("2d");
  let field;
  try {
    field = fusionField(
      Float64Array.from(state.textual), Float64Array.from(state.geometric),
      Number($("tvar").value), Number($("gvar").value), EXTENT, RES,
    );
  } catch (e) {
    console.error(e);
    return;
  }
  const img = ctx.createImageData(RES, RES);
  const byWeight = $("show-weight").checked;
  for (let i = 0; i < RES * RES; i++) {
    const [cls, conf, wt] = [field[3 * i], field[3 * i + 1], field[3 * i + 2]];
    const c = COLORS[cls % COLORS.length];
    const k = byWeight ? 0.25 + 0.75 * wt : conf;
    img.data.set([255 - k * (255 - c[0]), 255 - k * (255 - c[1]), 255 - k * (255 - c[2]), 255], 4 * i);
  }
  const off = new OffscreenCanvas(RES, RES);
  off.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = true;
  ctx.drawImage(off, 0, 0, canvas.width, canvas.height);

  for (let k = 0; k < 3; k++) {
    const c = `rgb(${COLORS[k].map((v) => v * 0.6).join(",")})`;
    const [tx, ty] = toCanvas(canvas, state.textual[2 * k], state.textual[2 * k + 1]);
    const [gx, gy] = toCanvas(canvas, state.geometric[2 * k], state.geometric[2 * k + 1]);
    ctx.strokeStyle = c;
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.arc(tx, ty, 8, 0, 2 * Math.PI);
    ctx.stroke();
    ctx.strokeRect(gx - 7, gy - 7, 14, 14);
  }
}

function pick(canvas, px, py) {
  for (const kind of ["textual", "geometric"]) {
    for (let k = 0; k < 3; k++) {
      const [x, y] = toCanvas(canvas, state[kind][2 * k], state[kind][2 * k + 1]);
      if (Math.hypot(px - x, py - y) < 12) return { kind, k };
    }
  }
  return null;
}

function bindField() {
  const canvas = $("field");
  const pos = (e) => {
    const r = canvas.getBoundingClientRect();
    return [(e.clientX - r.left) * (canvas.width / r.width), (e.clientY - r.top) * (canvas.height / r.height)];
  };
  canvas.addEventListener("pointerdown", (e) => {
    state.drag = pick(canvas, ...pos(e));
    if (state.drag) canvas.setPointerCapture(e.pointerId);
  });
  canvas.addEventListener("pointermove", (e) => {
    if (!state.drag) return;
    const [x, y] = fromCanvas(canvas, ...pos(e));
    const { kind, k } = state.drag;
    state[kind][2 * k] = Math.max(-EXTENT, Math.min(EXTENT, x));
    state[kind][2 * k + 1] = Math.max(-EXTENT, Math.min(EXTENT, y));
    drawField();
  });
  canvas.addEventListener("pointerup", () => (state.drag = null));
  for (const id of ["tvar", "gvar", "show-weight"]) $(id).addEventListener("input", drawField);
}

function plot(canvas, series, { ymin, ymax, xmax, labels }) {
  const ctx = canvas.getContext("2d");
  const pad = 36;
  const w = canvas.width - 2 * pad;
  const h = canvas.height - 2 * pad;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w, h);
  ctx.fillStyle = "#444";
  ctx.font = "11px system-ui";
  ctx.fillText(ymax.toFixed(2), 2, pad + 4);
  ctx.fillText(ymin.toFixed(2), 2, pad + h);
  ctx.fillText(String(xmax), pad + w - 20, pad + h + 14);
  series.forEach((pts, i) => {
    ctx.strokeStyle = `rgb(${COLORS[i % COLORS.length].join(",")})`;
    ctx.lineWidth = 2;
    ctx.beginPath();
    pts.forEach(([x, y], j) => {
      const px = pad + (x / xmax) * w;
      const py = pad + h - ((y - ymin) / (ymax - ymin || 1)) * h;
      if (j === 0) ctx.moveTo(px, py);
      else ctx.lineTo(px, py);
    });
    ctx.stroke();
    ctx.fillStyle = ctx.strokeStyle;
    ctx.fillText(labels[i], pad + 8 + 90 * i, pad - 8);
  });
}

function runEpisode() {
  const out = $("episode-out");
  out.textContent = "running...";
  // let the status paint before the synchronous episode starts
  setTimeout(() => {
    let s;
    try {
      s = JSON.parse(episodeSummary(Number($("seed").value), Number($("shift").value), Number($("samples").value)));
    } catch (e) {
      out.textContent = String(e);
      return;
    }
    const pct = (v) => (v == null ? "n/a" : (100 * v).toFixed(2) + "%");
    out.textContent =
      `zero-shot  ${pct(s.zeroshot)}\ncache      ${pct(s.cache)}\nbayesmm    ${pct(s.bayesmm)}\n\n` +
      `mean textual weight ${s.mean_textual_weight?.toFixed(3) ?? "n/a"}`;
    const pts = s.trajectory.filter((c) => c.step > 0);
    const kl0 = Math.max(...pts.map((c) => c.mean_kl));
    const mmd0 = Math.max(...pts.map((c) => c.mmd));
    plot($("trajectory"), [
      pts.map((c) => [c.step, c.mean_kl / kl0]),
      pts.map((c) => [c.step, c.mmd / mmd0]),
      pts.map((c) => [c.step, c.accuracy]),
    ], { ymin: 0, ymax: 1, xmax: pts.at(-1).step, labels: ["KL (rel.)", "MMD (rel.)", "accuracy"] });
  }, 10);
}

function drawShrinkage() {
  const max = 64;
  const curve = shrinkageCurve(Number($("beta").value), Number($("svar").value), max, $("compact").checked);
  const pts = Array.from(curve, (v, i) => [i + 1, v]);
  plot($("shrink"), [pts], { ymin: 0, ymax: Math.max(1, ...curve), xmax: max, labels: ["|ν| / |mean|"] });
}

await init();
bindField();
drawField();
$("run").addEventListener("click", runEpisode);
for (const id of ["beta", "svar", "compact"]) $(id).addEventListener("input", drawShrinkage);
drawShrinkage();
runEpisode();
