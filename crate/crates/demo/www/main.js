import init, { encode_log, train_synthetic, compare_presets } from "./pkg/ktm_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function call(fn, ...args) {
  const out = JSON.parse(fn(...args));
  if (out && out.error) throw new Error(out.error);
  return out;
}

function fail(target, e) {
  target.innerHTML = "";
  const p = document.createElement("p");
  p.className = "error";
  p.textContent = e.message;
  target.append(p);
}

function cell(tag, text, cls) {
  const el = document.createElement(tag);
  el.textContent = text;
  if (cls) el.className = cls;
  return el;
}

function showEncoding() {
  const out = $("enc-out");
  try {
    const r = call(encode_log, $("log").value, $("qmatrix").value, $("enc-preset").value);
    const table = document.createElement("table");
    const head = table.insertRow();
    head.append(cell("th", "#"));
    for (const c of r.columns) {
      const id = c.block === "users" ? r.users[c.local] : c.block === "items" ? r.items[c.local] : c.local;
      head.append(cell("th", `${c.block[0]}${id}`, `b-${c.block}`));
    }
    head.append(cell("th", "y"));
    r.rows.forEach((row, i) => {
      const tr = table.insertRow();
      tr.append(cell("td", i + 1));
      for (const x of row) tr.append(cell("td", x, x ? "nz" : ""));
      tr.append(cell("td", r.labels[i]));
    });
    out.replaceChildren(table);
  } catch (e) {
    fail(out, e);
  }
}

function axes(ctx, w, h) {
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(30, 10, w - 40, h - 40);
}

function drawCurve(values) {
  const c = $("curve"), ctx = c.getContext("2d");
  axes(ctx, c.width, c.height);
  const lo = Math.min(...values), hi = Math.max(...values);
  const x = (i) => 30 + (i / Math.max(1, values.length - 1)) * (c.width - 40);
  const y = (v) => 10 + (hi === lo ? 0.5 : (hi - v) / (hi - lo)) * (c.height - 40);
  ctx.strokeStyle = "#2a6fdb";
  ctx.beginPath();
  values.forEach((v, i) => (i ? ctx.lineTo(x(i), y(v)) : ctx.moveTo(x(i), y(v))));
  ctx.stroke();
  ctx.fillStyle = "#333";
  ctx.fillText(`training NLL ${hi.toFixed(3)} to ${values[values.length - 1].toFixed(3)}`, 36, c.height - 12);
}

const COLORS = { users: "#7aa7e8", items: "#3a9a3a", skills: "#a050b0", wins: "#7fb03a", fails: "#d04040", attempts: "#777" };

function drawScatter(points) {
  const c = $("scatter"), ctx = c.getContext("2d");
  axes(ctx, c.width, c.height);
  const pts = points.filter((p) => p.v.length >= 2);
  ctx.fillStyle = "#333";
  if (!pts.length) {
    ctx.fillText("embeddings need d = 2 or more", 40, 30);
    return;
  }
  const m = Math.max(1e-9, ...pts.flatMap((p) => [Math.abs(p.v[0]), Math.abs(p.v[1])]));
  const x = (v) => 30 + ((v / m + 1) / 2) * (c.width - 40);
  const y = (v) => 10 + ((1 - v / m) / 2) * (c.height - 40);
  for (const p of pts) {
    ctx.fillStyle = COLORS[p.block] || "#000";
    ctx.beginPath();
    ctx.arc(x(p.v[0]), y(p.v[1]), 3, 0, 2 * Math.PI);
    ctx.fill();
  }
  let ly = 24;
  for (const [block, color] of Object.entries(COLORS)) {
    if (!pts.some((p) => p.block === block)) continue;
    ctx.fillStyle = color;
    ctx.fillText(block, c.width - 60, ly);
    ly += 14;
  }
}

function generator() {
  return [$("gen").value, num("students"), num("items"), num("skills")];
}

function train() {
  const out = $("train-out");
  try {
    const r = call(train_synthetic, ...generator(), $("preset").value, num("d"), $("link").value, num("epochs"), BigInt(num("seed")));
    const f = (v) => (v == null ? "n/a" : v.toFixed(4));
    out.textContent = `held-out AUC ${f(r.test_auc)} (generator's own probabilities: ${f(r.oracle_auc)})`;
    drawCurve(r.train_nll);
    drawScatter(r.points);
  } catch (e) {
    fail(out, e);
  }
}

function compare() {
  const out = $("cmp-out");
  try {
    const rows = call(compare_presets, ...generator(), $("grid").value, num("epochs"), BigInt(num("seed")));
    const table = document.createElement("table");
    const head = table.insertRow();
    for (const h of ["model", "d", "ACC", "AUC", "NLL"]) head.append(cell("th", h));
    for (const r of rows) {
      const tr = table.insertRow();
      tr.append(cell("td", r.preset), cell("td", r.d), cell("td", r.acc.toFixed(3)),
        cell("td", r.auc == null ? "NA" : r.auc.toFixed(3)), cell("td", r.nll.toFixed(3)));
    }
    out.replaceChildren(table);
  } catch (e) {
    fail(out, e);
  }
}

await init();
$("encode").onclick = showEncoding;
$("train").onclick = train;
$("compare").onclick = compare;
showEncoding();
