import init, { DemoSession } from "./pkg/coltype_wasm.js";

const $ = (id) => document.getElementById(id);
let session = null;
let sessionKey = "";
let lastView = null;

function num(id) {
  return Number($(id).value);
}

function status(text, cls = "muted") {
  $("status").textContent = text;
  $("status").className = cls;
}

function drawCurve(history) {
  const c = $("curve");
  const g = c.getContext("2d");
  g.clearRect(0, 0, c.width, c.height);
  const pad = 30;
  const w = c.width - 2 * pad;
  const h = c.height - 2 * pad;
  const maxLoss = Math.max(...history.map((r) => r.train_loss));
  const x = (e) => pad + (w * e) / Math.max(1, history.length - 1);
  g.strokeStyle = "#bbb";
  g.strokeRect(pad, pad, w, h);
  const line = (value, color) => {
    g.strokeStyle = color;
    g.beginPath();
    history.forEach((r, i) => {
      const y = pad + h * (1 - value(r));
      i ? g.lineTo(x(i), y) : g.moveTo(x(i), y);
    });
    g.stroke();
  };
  line((r) => r.train_loss / maxLoss, "#b3261e");
  line((r) => r.val_macro_f1, "#1a5fb4");
  g.fillStyle = "#333";
  g.fillText(`train loss (max ${maxLoss.toFixed(3)})`, pad + 6, pad + 14);
  g.fillStyle = "#1a5fb4";
  g.fillText("validation macro F1", pad + 6, pad + 28);
  g.fillStyle = "#777";
  g.fillText(`epoch ${history.length - 1}`, c.width - pad - 60, c.height - 10);
}

function fmt(v) {
  return v.toFixed(3);
}

function showScores(s) {
  const rows = s.classes
    .map((c, i) => `<tr><td>${c}</td><td>${fmt(s.base_class_f1[i])}</td><td>${fmt(s.stacked_class_f1[i])}</td></tr>`)
    .join("");
  $("scores").innerHTML = `
    <p>${s.family} S=${s.steps} K=${s.heads}, best epoch ${s.best_epoch}.
    Test macro F1 <b>${fmt(s.base_macro_f1)}</b> → <b>${fmt(s.stacked_macro_f1)}</b>;
    capital/city pair ${fmt(s.base_pair_f1)} → ${fmt(s.stacked_pair_f1)}.</p>
    <table class="cols"><tr><th>class</th><th>base F1</th><th>stacked F1</th></tr>${rows}</table>`;
}

function renderTable(view, target) {
  const head = view.columns.map((_, i) => `<th>col ${i}</th>`).join("");
  const cell = (f) => view.columns.map((c) => `<td>${f(c)}</td>`).join("");
  const verdict = (label, gold) =>
    gold == null ? label : `<span class="${label === gold ? "ok" : "bad"}">${label}</span>`;
  const prob = (p, label) => (p ? fmt(p[view.classes.indexOf(label)]) : "");
  $(target).innerHTML = `
    <table class="cols">
      <tr><th></th>${head}</tr>
      <tr><th>cells</th>${cell((c) => c.preview.join("<br>"))}</tr>
      <tr><th>gold</th>${cell((c) => c.gold ?? "<span class=muted>?</span>")}</tr>
      <tr><th>base</th>${cell((c) => `${verdict(c.base_label, c.gold)} ${prob(c.base_probabilities, c.base_label)}`)}</tr>
      <tr><th>stacked</th>${cell((c) =>
        c.stacked_label ? `${verdict(c.stacked_label, c.gold)} ${prob(c.stacked_probabilities, c.stacked_label)}` : "")}</tr>
    </table>`;
}

function drawAttention(view) {
  const c = $("attention");
  const g = c.getContext("2d");
  g.clearRect(0, 0, c.width, c.height);
  if (!view.attention) {
    g.fillStyle = "#777";
    g.fillText("attention weights exist only for gat models", 10, 20);
    return;
  }
  const step = Math.min(num("attStep"), view.attention.length - 1);
  const head = Math.min(num("attHead"), view.attention[step].length - 1);
  const m = view.attention[step][head];
  const n = m.length;
  const pad = 40;
  const size = (c.width - pad) / n;
  m.forEach((row, u) =>
    row.forEach((w, v) => {
      g.fillStyle = `rgba(26, 95, 180, ${w})`;
      g.fillRect(pad + v * size, pad + u * size, size - 2, size - 2);
      g.fillStyle = w > 0.5 ? "#fff" : "#222";
      g.fillText(w.toFixed(2), pad + v * size + 4, pad + u * size + size / 2);
    }),
  );
  g.fillStyle = "#333";
  g.fillText(`step ${step}, head ${head}: row = receiving column`, 4, 14);
  for (let i = 0; i < n; i++) {
    g.fillText(`${i}`, pad + i * size + size / 2, pad - 6);
    g.fillText(`${i}`, pad - 14, pad + i * size + size / 2);
  }
}

function ensureSession() {
  const key = `${num("tables")}/${num("seed")}`;
  if (!session || key !== sessionKey) {
    session?.free();
    session = new DemoSession(num("tables"), num("seed"));
    sessionKey = key;
  }
}

async function train() {
  status("training…");
  await new Promise((r) => setTimeout(r, 20));
  try {
    ensureSession();
    const t0 = performance.now();
    const s = JSON.parse(session.train($("family").value, num("steps"), num("heads"), num("epochs"), num("seed")));
    status(`trained in ${((performance.now() - t0) / 1000).toFixed(1)} s; ${session.testTables()} held-out tables`, "ok");
    drawCurve(s.history);
    showScores(s);
    show();
  } catch (e) {
    status(String(e), "bad");
  }
}

function show() {
  if (!session) return;
  try {
    lastView = JSON.parse(session.testTable(num("tableIndex")));
    renderTable(lastView, "tableView");
    drawAttention(lastView);
  } catch (e) {
    $("tableView").textContent = String(e);
  }
}

function predictCustom() {
  try {
    ensureSession();
    const columns = $("custom")
      .value.split("\n")
      .map((l) => l.split(",").map((s) => s.trim()).filter((s) => s.length))
      .filter((c) => c.length);
    const view = JSON.parse(session.customTable(JSON.stringify(columns)));
    renderTable(view, "customView");
  } catch (e) {
    $("customView").textContent = String(e);
  }
}

await init();
$("train").onclick = train;
$("show").onclick = show;
$("attStep").onchange = () => lastView && drawAttention(lastView);
$("attHead").onchange = () => lastView && drawAttention(lastView);
$("predict").onclick = predictCustom;
status("ready");
