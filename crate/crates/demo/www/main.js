import init, { rerank_candidates, score_prediction, sample_negatives } from "./pkg/procwriter_demo.js";

const $ = (id) => document.getElementById(id);
const fmt = (x, d = 3) => (x === null || x === undefined ? "" : Number(x).toFixed(d));

function escape(s) {
  return s.replace(/[&<>"]/g, (c) => ({ "&": "&amp;", "<": "&lt;", ">": "&gt;", '"': "&quot;" })[c]);
}

function show(el, f) {
  try {
    el.innerHTML = f();
  } catch (e) {
    el.innerHTML = `<p class="err">${escape(String(e))}</p>`;
  }
}

function parseCandidates(text) {
  return text
    .split("\n")
    .filter((l) => l.trim())
    .map((l) => {
      const bar = l.indexOf("|");
      if (bar < 0) throw new Error(`missing "|" in: ${l}`);
      return { logprob: Number(l.slice(0, bar)), text: l.slice(bar + 1).trim() };
    });
}

function rerank() {
  const lambda = Number($("rr-lambda").value);
  $("rr-lambda-value").textContent = lambda.toFixed(1);
  show($("rr-out"), () => {
    const input = {
      process: $("rr-process").value,
      prior: $("rr-prior").value.split("\n").map((s) => s.trim()).filter(Boolean),
      candidates: parseCandidates($("rr-cands").value),
      lambda,
      scorer: $("rr-scorer").value,
    };
    const out = JSON.parse(rerank_candidates(JSON.stringify(input)));
    const rows = out.rows
      .map(
        (r, i) => `<tr class="${i === out.winner ? "win" : ""}"><td>${escape(r.text)}</td>
          <td class="num">${fmt(r.logprob)}</td><td class="num">${fmt(r.coherence)}</td>
          <td class="num">${fmt(r.combined)}</td><td class="num">${fmt(out.flip_lambda[i], 2)}</td></tr>`,
      )
      .join("");
    return `<table><tr><th>candidate</th><th>log P</th><th>coherence</th><th>combined</th>
      <th>beats top-1 from λ</th></tr>${rows}</table>`;
  });
}

function score() {
  show($("sc-out"), () => {
    const rows = JSON.parse(score_prediction($("sc-pred").value, $("sc-refs").value));
    const n = rows[0].per_reference.length;
    const head = Array.from({ length: n }, (_, i) => `<th>ref ${i + 1}</th>`).join("");
    const body = rows
      .map(
        (r) => `<tr><td>${r.metric}</td><td class="num"><b>${fmt(r.best * 100, 2)}</b></td>
          ${r.per_reference.map((v) => `<td class="num">${fmt(v * 100, 2)}</td>`).join("")}</tr>`,
      )
      .join("");
    return `<table><tr><th>metric</th><th>best</th>${head}</tr>${body}</table>`;
  });
}

function negatives() {
  show($("ng-out"), () => {
    const samples = JSON.parse(
      sample_negatives(
        $("ng-process").value,
        $("ng-steps").value,
        Number($("ng-seed").value) >>> 0,
        Number($("ng-n").value) >>> 0,
        $("ng-scorer").value,
      ),
    );
    const rows = samples
      .map(
        (s) => `<tr><td>${s.kind}</td><td class="num">${fmt(s.coherence)}</td>
          <td>${s.steps.map(escape).join("<br>")}</td></tr>`,
      )
      .join("");
    return `<table><tr><th>kind</th><th>coherence</th><th>steps</th></tr>${rows}</table>`;
  });
}

await init();
for (const id of ["rr-process", "rr-prior", "rr-cands", "rr-lambda", "rr-scorer"]) $(id).addEventListener("input", rerank);
for (const id of ["sc-pred", "sc-refs"]) $(id).addEventListener("input", score);
$("ng-go").addEventListener("click", negatives);
rerank();
score();
negatives();
