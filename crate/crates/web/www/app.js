import init, { run_search, budget_curve, mine_groups } from "./pkg/kgplan_web.js";

const SVG = "http://www.w3.org/2000/svg";

function svgEl(name, attrs, parent) {
  const el = document.createElementNS(SVG, name);
  for (const [k, v] of Object.entries(attrs)) el.setAttribute(k, v);
  parent.appendChild(el);
  return el;
}

function num(form, name) {
  return Number(form.elements[name].value);
}

function status(id, text, cls) {
  const p = document.getElementById(id);
  p.textContent = text;
  p.className = cls || "";
}

function cell(row, text) {
  const td = row.insertCell();
  td.textContent = text;
}

function drawGraph(res) {
  const svg = document.getElementById("graph");
  svg.replaceChildren();
  const width = svg.clientWidth || 1000;
  const height = Number(svg.getAttribute("height"));
  const levels = new Map();
  for (const n of res.nodes) {
    if (!levels.has(n.depth)) levels.set(n.depth, []);
    levels.get(n.depth).push(n);
  }
  const depthCount = Math.max(...levels.keys()) + 1;
  const pos = new Map();
  for (const [d, nodes] of levels) {
    nodes.forEach((n, i) => {
      pos.set(n.id, {
        x: ((i + 0.5) / nodes.length) * width,
        y: 20 + (d / Math.max(1, depthCount - 1)) * (height - 40),
      });
    });
  }
  const best = res.plans.length ? res.plans[0].actions : [];
  const onPlan = new Set(best);
  const onOptimal = new Set();
  for (let i = 0; i + 1 < res.optimal.length; i++) onOptimal.add(res.optimal[i] + ">" + res.optimal[i + 1]);
  for (const l of res.links) {
    const a = pos.get(l.from), b = pos.get(l.to);
    const planned = onPlan.has(l.action);
    const optimal = onOptimal.has(l.from + ">" + l.to);
    svgEl("line", {
      x1: a.x, y1: a.y, x2: b.x, y2: b.y,
      stroke: planned ? "#d33" : optimal ? "#3a3" : "#ccc",
      "stroke-width": planned || optimal ? 3 : 1,
    }, svg);
  }
  for (const n of res.nodes) {
    const p = pos.get(n.id);
    const c = svgEl("circle", { cx: p.x, cy: p.y, r: n.goal ? 7 : 4, fill: n.goal ? "#e90" : "#557" }, svg);
    svgEl("title", {}, c).textContent = `${n.id} (${n.label})`;
  }
}

function showPlans(res) {
  const table = document.getElementById("plans");
  table.replaceChildren();
  const head = table.createTHead().insertRow();
  for (const h of ["rank", "actions", "mean Q", "visits", "reaches goal"]) cell(head, h);
  const body = table.createTBody();
  res.plans.forEach((p, i) => {
    const row = body.insertRow();
    cell(row, i + 1);
    cell(row, p.actions.join(" → "));
    cell(row, p.mean_q.toFixed(3));
    cell(row, p.visits);
    cell(row, p.success ? "yes" : "no");
  });
}

function runSearch(ev) {
  ev.preventDefault();
  const f = ev.target;
  const req = {
    env: { k: num(f, "k"), depth: num(f, "depth"), merge_prob: num(f, "merge_prob"), seed: num(f, "seed") },
    strategy: f.elements.strategy.value,
    iterations: num(f, "iterations"),
    c: num(f, "c"),
    noise: num(f, "noise"),
  };
  try {
    const t0 = performance.now();
    const res = JSON.parse(run_search(JSON.stringify(req)));
    const ms = (performance.now() - t0).toFixed(1);
    status("search-status", `"${res.instruction}": top plan ${res.success ? "reaches" : "misses"} the goal (${ms} ms). Red: top plan, green: reference path.`, res.success ? "ok" : "err");
    drawGraph(res);
    showPlans(res);
  } catch (e) {
    status("search-status", String(e.message || e), "err");
  }
}

function drawCurve(points) {
  const svg = document.getElementById("curve");
  svg.replaceChildren();
  const width = svg.clientWidth || 1000;
  const height = Number(svg.getAttribute("height"));
  const pad = 36;
  const maxM = Math.max(...points.map((p) => p.iterations));
  const x = (m) => pad + (Math.log(m) / Math.log(Math.max(2, maxM))) * (width - 2 * pad);
  const y = (s) => height - pad - s * (height - 2 * pad);
  svgEl("line", { x1: pad, y1: y(0), x2: width - pad, y2: y(0), stroke: "#999" }, svg);
  svgEl("line", { x1: pad, y1: y(0), x2: pad, y2: y(1), stroke: "#999" }, svg);
  for (const s of [0, 0.5, 1]) {
    svgEl("text", { x: 4, y: y(s) + 4, "font-size": 11 }, svg).textContent = s.toFixed(1);
  }
  const d = points.map((p, i) => `${i ? "L" : "M"}${x(p.iterations)},${y(p.success)}`).join(" ");
  svgEl("path", { d, fill: "none", stroke: "#36c", "stroke-width": 2 }, svg);
  for (const p of points) {
    svgEl("circle", { cx: x(p.iterations), cy: y(p.success), r: 3, fill: "#36c" }, svg);
    svgEl("text", { x: x(p.iterations) - 8, y: height - 12, "font-size": 11 }, svg).textContent = p.iterations;
  }
}

function runCurve(ev) {
  ev.preventDefault();
  const f = ev.target;
  const budgets = f.elements.budgets.value.split(",").map((s) => Number(s.trim())).filter((n) => n > 0);
  const req = {
    env: { k: num(f, "k"), depth: num(f, "depth") },
    budgets,
    instances: num(f, "instances"),
    c: num(f, "c"),
    noise: num(f, "noise"),
  };
  try {
    const points = JSON.parse(budget_curve(JSON.stringify(req)));
    status("curve-status", points.map((p) => `M=${p.iterations}: ${(100 * p.success).toFixed(0)}%`).join("  "));
    drawCurve(points);
  } catch (e) {
    status("curve-status", String(e.message || e), "err");
  }
}

function runMine(ev) {
  ev.preventDefault();
  const f = ev.target;
  try {
    const res = JSON.parse(mine_groups(f.elements.corpus.value, num(f, "delta_f")));
    status("mine-status", `${res.rules.length} rules; expansion ${res.restored ? "restores" : "does not restore"} the input.`, res.restored ? "ok" : "err");
    const table = document.getElementById("rules");
    table.replaceChildren();
    const head = table.createTHead().insertRow();
    for (const h of ["#", "left", "right", "frequency", "chain"]) cell(head, h);
    const body = table.createTBody();
    const short = (id) => (id.startsWith("grp:") ? id.slice(0, 10) + "…" : id);
    res.rules.forEach((r, i) => {
      const row = body.insertRow();
      cell(row, i);
      cell(row, short(r.left));
      cell(row, short(r.right));
      cell(row, r.frequency);
      cell(row, r.chain.join(" · "));
    });
    document.getElementById("merged").textContent = res.merged.map((p) => p.map(short).join(" ")).join("\n");
  } catch (e) {
    status("mine-status", String(e.message || e), "err");
  }
}

await init();
document.getElementById("search-form").addEventListener("submit", runSearch);
document.getElementById("curve-form").addEventListener("submit", runCurve);
document.getElementById("mine-form").addEventListener("submit", runMine);
document.getElementById("search-form").requestSubmit();
