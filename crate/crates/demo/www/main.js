import init, { exploreDistribution, previewPrompt, classifySynthetic } from "./pkg/icc_demo.js";

const $ = (id) => document.getElementById(id);

function escape(s) {
  return String(s).replace(/[&<>"]/g, (c) => ({ "&": "&amp;", "<": "&lt;", ">": "&gt;", '"': "&quot;" })[c]);
}

function attempt(out, f) {
  try {
    f();
  } catch (e) {
    out.innerHTML = `<p class="error">${escape(e)}</p>`;
  }
}

function renderDistribution() {
  const out = $("d-out");
  attempt(out, () => {
    const r = JSON.parse(exploreDistribution($("d-anchor").value, $("d-sims").value, Number($("d-topm").value), Number($("d-temp").value)));
    const rows = r.entries
      .map((e) => `<tr><td>${escape(e.label)}</td><td>${e.shown}</td><td><span class="bar" style="width:${(e.weight * 12).toFixed(2)}rem"></span></td></tr>`)
      .join("");
    const texts = Object.entries(r.texts)
      .map(([k, v]) => `<tr><th>${k}</th><td colspan="2"><code>${escape(v)}</code></td></tr>`)
      .join("");
    out.innerHTML = `<table>${rows}</table><h3>Label text per strategy</h3><table>${texts}</table>`;
  });
}

let promptEdited = false;

function renderPrompt() {
  const out = $("p-out");
  attempt(out, () => {
    const r = JSON.parse(previewPrompt($("p-examples").value, $("p-query").value));
    out.textContent = `${r.text}\n\nimages: ${r.images.join(", ")}  (${r.shots}-shot)`;
    if (!promptEdited) {
      $("c-prompt").value = r.text;
      renderScores();
    }
  });
}

function renderScores() {
  const out = $("c-out");
  attempt(out, () => {
    const r = JSON.parse(classifySynthetic($("c-prompt").value, $("c-classes").value, Number($("c-bias").value), Number($("c-weight").value)));
    const rows = r.classes
      .map((c) => `<tr${c.class === r.predicted ? ' style="font-weight:bold"' : ""}><td>${escape(c.class)}</td><td>${c.score.toFixed(4)}</td><td>${c.tokens} tokens</td></tr>`)
      .join("");
    out.innerHTML = `<table><tr><th>class</th><th>mean log-prob</th><th></th></tr>${rows}</table><p>Prediction: <b>${escape(r.predicted)}</b></p>`;
  });
}

await init();
for (const id of ["d-anchor", "d-sims", "d-topm", "d-temp"]) $(id).addEventListener("input", renderDistribution);
for (const id of ["p-examples", "p-query"]) $(id).addEventListener("input", renderPrompt);
for (const id of ["c-classes", "c-bias", "c-weight"]) $(id).addEventListener("input", renderScores);
$("c-prompt").addEventListener("input", () => {
  promptEdited = true;
  renderScores();
});
renderDistribution();
renderPrompt();
