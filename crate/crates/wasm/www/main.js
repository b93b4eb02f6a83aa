import init, { fixedPointDiagram, bridgeHeatmap, lsiProfile } from "./pkg/bridgecert_wasm.js";

const PAD = 40;

function inputs(section) {
  const values = {};
  for (const el of section.querySelectorAll("input")) {
    values[el.name] = parseFloat(el.value);
    el.nextElementSibling.textContent = el.value;
  }
  return values;
}

function bind(id, draw) {
  const section = document.getElementById(id);
  const update = () => {
    const out = section.querySelector(".out");
    try {
      out.textContent = draw(section.querySelector("canvas"), inputs(section));
    } catch (e) {
      out.textContent = String(e.message ?? e);
    }
  };
  section.addEventListener("input", update);
  update();
}

function frame(ctx, xs, ys) {
  const [x0, x1] = [Math.min(...xs), Math.max(...xs)];
  const [y0, y1] = [Math.min(...ys), Math.max(...ys)];
  const w = ctx.canvas.width - 2 * PAD;
  const h = ctx.canvas.height - 2 * PAD;
  const sx = (x) => PAD + ((x - x0) / (x1 - x0 || 1)) * w;
  const sy = (y) => PAD + h - ((y - y0) / (y1 - y0 || 1)) * h;
  ctx.clearRect(0, 0, ctx.canvas.width, ctx.canvas.height);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(PAD, PAD, w, h);
  ctx.fillStyle = "#444";
  ctx.font = "11px sans-serif";
  ctx.fillText(x0.toPrecision(3), PAD, PAD + h + 14);
  ctx.fillText(x1.toPrecision(3), PAD + w - 30, PAD + h + 14);
  ctx.fillText(y1.toPrecision(3), 2, PAD + 4);
  ctx.fillText(y0.toPrecision(3), 2, PAD + h);
  return { sx, sy };
}

function line(ctx, s, xs, ys, color, dash = []) {
  ctx.strokeStyle = color;
  ctx.setLineDash(dash);
  ctx.beginPath();
  xs.forEach((x, i) => (i ? ctx.lineTo(s.sx(x), s.sy(ys[i])) : ctx.moveTo(s.sx(x), s.sy(ys[i]))));
  ctx.stroke();
  ctx.setLineDash([]);
}

function drawFixedPoint(canvas, v) {
  const d = fixedPointDiagram(v.t, v.beta, v.alpha, v.l, 200);
  const ctx = canvas.getContext("2d");
  const s = frame(ctx, d.alphas, d.map.concat(d.alphas));
  line(ctx, s, d.alphas, d.alphas, "#aaa", [4, 4]);
  line(ctx, s, d.alphas, d.map, "#1f5fa8");
  ctx.fillStyle = "#c0392b";
  for (const a of d.iterates) {
    ctx.fillRect(s.sx(a) - 2, s.sy(a) - 2, 4, 4);
  }
  for (const [b, c] of [[d.lower, "#2e8b57"], [d.upper, "#e67e22"]]) {
    line(ctx, s, [b, b], [Math.min(...d.alphas), Math.max(...d.map)], c, [2, 3]);
  }
  return `alpha_psi = ${d.alpha_psi.toFixed(6)} after ${d.iterates.length - 1} steps, bracket [${d.lower.toFixed(6)}, ${d.upper.toFixed(6)}]`;
}

function drawBridge(canvas, v) {
  const n = 96;
  const b = bridgeHeatmap(v.height, v.sep, v.t, n);
  const ctx = canvas.getContext("2d");
  const img = ctx.createImageData(n, n);
  const top = Math.max(...b.masses);
  for (let i = 0; i < n; i++) {
    for (let j = 0; j < n; j++) {
      const level = Math.sqrt(b.masses[i * n + j] / top);
      const k = 4 * ((n - 1 - j) * n + i);
      img.data[k] = 255 * (1 - level * 0.9);
      img.data[k + 1] = 255 * (1 - level * 0.6);
      img.data[k + 2] = 255 * (1 - level * 0.2);
      img.data[k + 3] = 255;
    }
  }
  const off = new OffscreenCanvas(n, n);
  off.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.drawImage(off, 0, 0, canvas.width, canvas.height);
  return `x horizontal, y vertical on [${b.x[0].toFixed(2)}, ${b.x[n - 1].toFixed(2)}]; correlation ${b.correlation.toFixed(4)}; ${b.iterations} sweeps`;
}

function drawLsi(canvas, v) {
  const p = lsiProfile(v.alpha, v.l, v.t, v.cmu, 200);
  const ctx = canvas.getContext("2d");
  const s = frame(ctx, p.times, p.contraction.concat([0]));
  line(ctx, s, p.times, p.contraction, "#1f5fa8");
  return `C = ${p.constant.toPrecision(6)} (mixing ${p.mixing_constant.toPrecision(6)}, squared ${p.squared_constant.toPrecision(6)})`;
}

await init();
bind("fixed-point", drawFixedPoint);
bind("bridge", drawBridge);
bind("lsi", drawLsi);
