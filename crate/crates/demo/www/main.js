import init, { decode, encode_tags, decode_tags, viterbi } from "./pkg/quartet_demo.js";

const LABELS = ["B-CORRECT", "I-CORRECT", "B-OPPOSITE", "I-OPPOSITE", "E-CORRECT", "E-OPPOSITE", "O"];
const DIRS = ["MORE", "LESS", "NONE"];
const $ = (id) => document.getElementById(id);

function call(fn, arg, out) {
  try {
    const value = JSON.parse(fn(arg));
    out.classList.remove("error");
    return value;
  } catch (e) {
    out.textContent = String(e.message ?? e);
    out.classList.add("error");
    return null;
  }
}

function renderTags(el, tags) {
  el.innerHTML = "";
  for (const t of tags) {
    const span = document.createElement("span");
    span.className = "tag " + t;
    span.textContent = t;
    el.appendChild(span);
  }
}

function sliderGroup(name, labels) {
  const group = document.createElement("div");
  group.className = "group";
  group.innerHTML = `<h3>${name}</h3>`;
  const grid = document.createElement("div");
  grid.className = "grid";
  labels.forEach((label, idx) => {
    const input = document.createElement("input");
    input.type = "range";
    input.min = "0";
    input.max = "100";
    input.value = idx === 0 ? "60" : "20";
    input.dataset.group = name;
    const value = document.createElement("output");
    grid.append(Object.assign(document.createElement("span"), { textContent: label }), input, value);
    input.addEventListener("input", runDecode);
  });
  group.appendChild(grid);
  return group;
}

function buildSliders() {
  const k = Math.max(1, Math.min(8, Number($("k").value) || 1));
  const steps = Array.from({ length: k }, (_, i) => `step ${i + 1}`).concat("NULL");
  const root = $("sliders");
  root.innerHTML = "";
  root.append(sliderGroup("s_i", steps), sliderGroup("s_j", steps), sliderGroup("p_di", DIRS), sliderGroup("p_de", DIRS));
  runDecode();
}

function groupValues(name) {
  return [...document.querySelectorAll(`input[data-group="${name}"]`)].map((el) => Number(el.value));
}

function runDecode() {
  const req = { s_i: groupValues("s_i"), s_j: groupValues("s_j"), p_di: groupValues("p_di"), p_de: groupValues("p_de") };
  const out = $("decode-out");
  const res = call(decode, JSON.stringify(req), out);
  if (!res) return;
  for (const name of ["s_i", "s_j", "p_di", "p_de"]) {
    const probs = res.dists[name];
    document.querySelectorAll(`input[data-group="${name}"]`).forEach((el, idx) => {
      el.nextElementSibling.textContent = probs[idx].toFixed(3);
    });
  }
  const e = res.explanation;
  out.textContent = `${e.text}\nanswer: ${e.answer}`;
}

function runEncode() {
  const none = $("codec-none").checked;
  const req = { k: Number($("codec-k").value) };
  if (!none) {
    Object.assign(req, { i: Number($("codec-i").value), j: Number($("codec-j").value), d_i: $("codec-di").value, d_j: $("codec-dj").value });
  }
  const out = $("codec-out");
  const res = call(encode_tags, JSON.stringify(req), out);
  if (!res) {
    $("codec-tags").innerHTML = "";
    return;
  }
  renderTags($("codec-tags"), res.tags);
  $("codec-text").value = res.tags.join(" ");
  runDecodeTags();
}

function runDecodeTags() {
  const out = $("codec-out");
  const res = call(decode_tags, $("codec-text").value, out);
  if (!res) return;
  out.textContent = res.span
    ? `span i=${res.span.i} j=${res.span.j} d_i=${res.span.d_i} d_j=${res.span.d_j}`
    : "all O: no effect";
}

function buildCrfTable() {
  const k = Math.max(1, Math.min(8, Number($("crf-k").value) || 1));
  const table = $("crf-table");
  table.innerHTML = "<tr><th></th>" + LABELS.map((l) => `<th>${l}</th>`).join("") + "</tr>";
  for (let row = 0; row < k; row++) {
    const tr = document.createElement("tr");
    tr.innerHTML = `<td>step ${row + 1}</td>`;
    LABELS.forEach((label, col) => {
      const td = document.createElement("td");
      const input = document.createElement("input");
      input.type = "number";
      input.step = "0.5";
      input.value = label === "O" ? "1" : String(((row + col) % 3) - 1);
      input.addEventListener("input", runViterbi);
      td.appendChild(input);
      tr.appendChild(td);
    });
    table.appendChild(tr);
  }
  runViterbi();
}

function runViterbi() {
  const rows = [...$("crf-table").querySelectorAll("tr")].slice(1);
  const emissions = rows.map((tr) => [...tr.querySelectorAll("input")].map((el) => Number(el.value)));
  const out = $("crf-out");
  const res = call(viterbi, JSON.stringify({ emissions, require_run: $("crf-run").checked }), out);
  if (!res) return;
  renderTags($("crf-tags"), res.tags);
  const span = res.span ? `span i=${res.span.i} j=${res.span.j} d_i=${res.span.d_i} d_j=${res.span.d_j}` : "no span";
  out.textContent = `score ${res.score.toFixed(3)}\n${span}`;
}

await init();
$("k").addEventListener("change", buildSliders);
for (const id of ["codec-k", "codec-i", "codec-j", "codec-di", "codec-dj", "codec-none"]) {
  $(id).addEventListener("change", runEncode);
}
$("codec-text").addEventListener("input", runDecodeTags);
$("crf-k").addEventListener("change", buildCrfTable);
$("crf-run").addEventListener("change", runViterbi);
buildSliders();
runEncode();
buildCrfTable();
