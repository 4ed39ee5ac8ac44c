import init, { mesh, simulate_sine, certificate_field } from "./pkg/cpa_gain_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function report(id, fn) {
  const out = $(id);
  out.classList.remove("err");
  try {
    return fn(out);
  } catch (e) {
    out.classList.add("err");
    out.textContent = String(e.message ?? e);
  }
}

// blue (low) to red (high)
function color(t) {
  const c = Math.max(0, Math.min(1, t));
  return `rgb(${Math.round(255 * c)},${Math.round(80 + 60 * (1 - Math.abs(2 * c - 1)))},${Math.round(255 * (1 - c))})`;
}

function drawMesh() {
  report("m-out", (out) => {
    const hw = num("m-hw");
    const m = JSON.parse(mesh(hw, num("m-div"), num("m-ref"), num("m-hole"), $("m-radial").checked));
    out.textContent =
      `${m.num_simplexes} simplexes, ${m.num_vertices} vertices, ` +
      `largest shape constant ${m.max_shape.toPrecision(4)}`;
    const cv = $("m-canvas");
    const g = cv.getContext("2d");
    g.clearRect(0, 0, cv.width, cv.height);
    const px = (x) => ((x[0] + hw) / (2 * hw)) * (cv.width - 20) + 10;
    const py = (x) => cv.height - (((x[1] + hw) / (2 * hw)) * (cv.height - 20) + 10);
    m.simplexes.forEach((s, i) => {
      g.beginPath();
      s.forEach((v, k) => {
        const p = m.vertices[v];
        k ? g.lineTo(px(p), py(p)) : g.moveTo(px(p), py(p));
      });
      g.closePath();
      g.fillStyle = color(m.shape[i] / m.max_shape);
      g.fill();
      g.strokeStyle = m.contains_origin[i] ? "#000" : "#fff";
      g.lineWidth = m.contains_origin[i] ? 1.5 : 0.5;
      g.stroke();
    });
  });
}

function runSine(w) {
  return JSON.parse(simulate_sine($("s-sys").value, num("s-a"), w, num("s-t"), num("s-dt"), 0.8));
}

function simulateOne() {
  report("s-out", (out) => {
    const r = runSine(num("s-w"));
    out.textContent =
      `L2 ratio ${r.l2_ratio.toPrecision(6)}` + (r.state_stayed_in_region ? "" : " (state left the region)");
  });
}

function scan() {
  report("s-out", (out) => {
    const ws = Array.from({ length: 40 }, (_, i) => 0.05 + (i * 3) / 39);
    const rs = ws.map((w) => runSine(w));
    const ratios = rs.map((r) => (r.state_stayed_in_region ? r.l2_ratio : NaN));
    const top = Math.max(...ratios.filter(Number.isFinite), 1e-12);
    const best = ws[ratios.indexOf(top)];
    out.textContent = `max in-region ratio ${top.toPrecision(6)} at frequency ${best?.toFixed(2)}`;
    const cv = $("s-canvas");
    const g = cv.getContext("2d");
    g.clearRect(0, 0, cv.width, cv.height);
    g.strokeStyle = "#036";
    g.beginPath();
    ratios.forEach((r, i) => {
      if (!Number.isFinite(r)) return;
      const x = 10 + (i / (ws.length - 1)) * (cv.width - 20);
      const y = cv.height - 10 - (r / top) * (cv.height - 20);
      i ? g.lineTo(x, y) : g.moveTo(x, y);
    });
    g.stroke();
  });
}

function heat(cv, f, values) {
  const g = cv.getContext("2d");
  g.clearRect(0, 0, cv.width, cv.height);
  const finite = values.filter((v) => v !== null);
  const lo = Math.min(...finite);
  const hi = Math.max(...finite);
  const span = hi - lo || 1;
  const r = f.resolution;
  if (f.n === 1) {
    g.strokeStyle = "#036";
    g.beginPath();
    values.forEach((v, i) => {
      if (v === null) return;
      const x = 10 + (i / (r - 1)) * (cv.width - 20);
      const y = cv.height - 10 - ((v - lo) / span) * (cv.height - 20);
      g.lineTo(x, y);
    });
    g.stroke();
    return [lo, hi];
  }
  const cw = cv.width / r;
  const ch = cv.height / r;
  values.forEach((v, idx) => {
    if (v === null) return;
    const i = idx % r;
    const j = Math.floor(idx / r);
    g.fillStyle = color((v - lo) / span);
    g.fillRect(i * cw, cv.height - (j + 1) * ch, cw + 0.5, ch + 0.5);
  });
  return [lo, hi];
}

async function certificateText() {
  const file = $("c-file").files[0];
  if (file) return file.text();
  const sample = $("c-sample").value;
  if (!sample) throw new Error("choose a certificate file or a sample");
  return (await fetch(sample)).text();
}

async function evaluate() {
  let text;
  try {
    text = await certificateText();
  } catch (e) {
    $("c-out").classList.add("err");
    $("c-out").textContent = String(e.message ?? e);
    return;
  }
  report("c-out", (out) => {
    const f = JSON.parse(certificate_field(text, num("c-res")));
    const [vlo, vhi] = heat($("c-v"), f, f.storage);
    const [rlo, rhi] = heat($("c-r"), f, f.residual);
    out.textContent =
      `${f.system}: gamma* = ${f.gamma_star.toPrecision(6)}\n` +
      `storage range [${vlo.toPrecision(3)}, ${vhi.toPrecision(3)}] (left)\n` +
      `HJI max eigenvalue range [${rlo.toPrecision(3)}, ${rhi.toPrecision(3)}] (right), ` +
      (f.max_residual <= 1e-6 ? "no violation on this grid" : "violated on this grid");
  });
}

await init();
$("m-go").onclick = drawMesh;
$("s-go").onclick = simulateOne;
$("s-scan").onclick = scan;
$("c-go").onclick = evaluate;
drawMesh();
