import init, { exploreCell, runPsiRound, buildHeatmap, sampleTraces } from "./pkg/contactpsi_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function escape(s) {
  return String(s).replace(/[&<>"]/g, (c) => ({ "&": "&amp;", "<": "&lt;", ">": "&gt;", '"': "&quot;" })[c]);
}

function guarded(out, fn) {
  return () => {
    try {
      fn();
    } catch (e) {
      $(out).innerHTML = `<p class="error">${escape(e.message ?? e)}</p>`;
    }
  };
}

function explore() {
  const v = JSON.parse(exploreCell(num("g-lat"), num("g-lon"), num("g-t"), num("g-delta"), num("g-tau"),
    $("g-region").value, num("g-k")));
  const cells = v.stencil.map((c) => {
    const i = c.interval;
    const centre = i.cell_x === v.interval.cell_x && i.cell_y === v.interval.cell_y ? " centre" : "";
    return `<div class="${centre}">x ${i.cell_x}<br>y ${i.cell_y}<br>${c.digest_hex.slice(0, 16)}…</div>`;
  }).join("");
  const w = v.window;
  $("g-out").innerHTML = `
    <p>interval (${v.interval.cell_x}, ${v.interval.cell_y}, ${v.interval.t_idx}) covers
    lat [${w.lat_min.toFixed(6)}, ${w.lat_max.toFixed(6)}), lon [${w.lon_min.toFixed(6)}, ${w.lon_max.toFixed(6)}),
    time [${w.t_start}, ${w.t_end}). A client sends ${v.expanded_count} hashed intervals for it.</p>
    <div class="grid3">${cells}</div>
    <pre>canonical bytes ${v.canonical_hex}\nSHA-256         ${v.digest_hex}</pre>`;
}

function loadSample() {
  const s = JSON.parse(sampleTraces(num("p-seed")));
  $("p-user").value = s.user_csv;
  $("p-carrier").value = s.carrier_csv;
  $("h-csv").value = s.population_csv;
}

function psi() {
  const t0 = performance.now();
  const d = JSON.parse(runPsiRound($("p-user").value, $("p-carrier").value, $("p-mode").value, $("p-group").value,
    $("p-expand").checked));
  const ms = (performance.now() - t0).toFixed(0);
  const rows = d.wire.map((m) =>
    `<tr><td style="text-align:left">${m.direction}</td><td>${m.endpoint}</td><td>${m.bytes}</td>` +
    `<td style="text-align:left"><code>${escape(m.preview)}</code></td></tr>`).join("");
  const contacts = (d.report.points_of_contact ?? []).map((c) =>
    `${new Date(c.t_start * 1000).toISOString()} near ${((c.lat_min + c.lat_max) / 2).toFixed(5)}, ` +
    `${((c.lon_min + c.lon_max) / 2).toFixed(5)}`).join("\n");
  const expected = d.mode === "ordered" ? d.oracle_raw : d.oracle_expanded;
  $("p-out").innerHTML = `
    <p>Risk <b>${d.report.level}</b>, match count ${d.report.match_count} (plaintext comparison: ${expected}).
    ${d.elements_sent} blinded elements sent against ${d.carrier_intervals} carrier intervals with ${d.group} in ${ms} ms.</p>
    ${contacts ? `<pre>${contacts}</pre>` : ""}
    <table><tr><th>direction</th><th>endpoint</th><th>bytes</th><th>start of message</th></tr>${rows}</table>`;
}

function heatmap() {
  const h = JSON.parse(buildHeatmap($("h-csv").value, num("h-fs"), num("h-ft"), num("h-k")));
  const rows = h.cells.map((c) =>
    `<tr><td>${c.coarse_x}</td><td>${c.coarse_y}</td><td>${c.day_idx}</td><td>${c.count}</td></tr>`).join("");
  $("h-out").innerHTML = `
    <p>${h.intervals} intervals: ${h.published} published in ${h.cells.length} cells, ${h.suppressed} suppressed.</p>
    <table><tr><th>coarse x</th><th>coarse y</th><th>bucket</th><th>count</th></tr>${rows}</table>`;
}

await init();
$("g-run").addEventListener("click", guarded("g-out", explore));
$("p-sample").addEventListener("click", guarded("p-out", loadSample));
$("p-run").addEventListener("click", guarded("p-out", psi));
$("h-run").addEventListener("click", guarded("h-out", heatmap));
guarded("g-out", explore)();
guarded("p-out", loadSample)();
