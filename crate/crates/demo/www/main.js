import init, {
  partition_plan,
  token_budget,
  corruption_preview,
  preview_regions_json,
} from "./pkg/mllm_lab_demo.js";

const PREVIEW_W = 320;
const PREVIEW_H = 200;
const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function showError(el, e) {
  el.textContent = String(e);
  el.classList.add("error");
}

function drawPartition() {
  const out = $("p-out");
  const canvas = $("p-canvas");
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  out.classList.remove("error");
  let plan;
  try {
    plan = JSON.parse(partition_plan(num("p-width"), num("p-height"), num("p-max")));
  } catch (e) {
    showError(out, e);
    return;
  }
  const w = num("p-width");
  const h = num("p-height");
  const scale = Math.min((canvas.width - 2) / w, (canvas.height - 2) / h);
  ctx.fillStyle = "#e8eef7";
  ctx.fillRect(1, 1, w * scale, h * scale);
  ctx.strokeStyle = "#2a5db0";
  plan.cells.forEach(([x, y, cw, ch], i) => {
    ctx.strokeRect(1 + x * scale, 1 + y * scale, cw * scale, ch * scale);
    ctx.fillStyle = "#2a5db0";
    ctx.fillText(String(i), 5 + x * scale, 14 + y * scale);
  });
  out.textContent =
    `grid ${plan.grid[0]}x${plan.grid[1]}, slice ${plan.slice[0]}x${plan.slice[1]}, ` +
    `${plan.tokens_total} tokens, score ${plan.score.toFixed(4)}`;
}

function drawBudget() {
  const out = $("b-out");
  out.classList.remove("error");
  try {
    const r = JSON.parse(token_budget(num("b-frames"), num("b-size"), num("b-queries")));
    const lines = [
      `packages            ${r.packages}`,
      `tokens              ${r.our_tokens}`,
      `tokens per frame    ${r.tokens_per_frame.toFixed(2)}`,
      `vs raw patches      ${r.compression_vs_patches.toFixed(1)}x`,
    ];
    for (const [name, tokens] of Object.entries(r.baseline_tokens)) {
      lines.push(`${name.padEnd(19)} ${tokens} tokens (${r.compression_vs_baseline[name].toFixed(1)}x)`);
    }
    out.textContent = lines.join("\n");
  } catch (e) {
    showError(out, e);
  }
}

const regions = () => JSON.parse(preview_regions_json());

function drawCorruption() {
  const canvas = $("c-canvas");
  canvas.width = PREVIEW_W;
  canvas.height = PREVIEW_H;
  canvas.style.width = `${PREVIEW_W * 2}px`;
  const ctx = canvas.getContext("2d");
  const pixels = corruption_preview($("c-level").value, num("c-seed"));
  ctx.putImageData(new ImageData(new Uint8ClampedArray(pixels), PREVIEW_W, PREVIEW_H), 0, 0);
  if ($("c-boxes").checked) {
    ctx.strokeStyle = "rgba(200, 30, 30, 0.8)";
    for (const r of regions()) {
      const [x, y, w, h] = r.bbox;
      ctx.strokeRect(x - 0.5, y - 0.5, w + 1, h + 1);
    }
  }
}

await init();
for (const id of ["p-width", "p-height", "p-max"]) $(id).addEventListener("input", drawPartition);
for (const id of ["b-frames", "b-size", "b-queries"]) $(id).addEventListener("input", drawBudget);
for (const id of ["c-level", "c-seed", "c-boxes"]) $(id).addEventListener("input", drawCorruption);
drawPartition();
drawBudget();
drawCorruption();
