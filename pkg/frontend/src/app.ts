/** DOM wiring for the edit console. Everything testable lives in the
 * sibling modules; this file only moves values between controls and the
 * client. Layout: scene/mask column, edit form column, compare view. */

import { ApiError, Client, ClientValidationError } from "./api.js";
import { MaskPainter } from "./mask.js";
import { formatPixel, parsePfm, pixel, type FloatImage } from "./pfm.js";
import { pollJob } from "./poll.js";
import { ConsoleState } from "./state.js";
import { RANGES, validateEdit, type EditPayload } from "./validate.js";

const MAP_THUMBS = ["albedo", "roughness", "metallic", "normal", "depth"];

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text) node.textContent = text;
  return node;
}

function pngUrl(bytes: ArrayBuffer): string {
  return URL.createObjectURL(new Blob([bytes], { type: "image/png" }));
}

class Banner {
  node: HTMLElement;

  constructor(parent: HTMLElement) {
    this.node = el("div", { class: "banner", hidden: "" });
    parent.prepend(this.node);
  }

  show(message: string, retry?: () => void): void {
    this.node.textContent = message;
    this.node.removeAttribute("hidden");
    if (retry) {
      const b = el("button", {}, "retry");
      b.onclick = retry;
      this.node.append(" ", b);
    }
  }

  hide(): void {
    this.node.setAttribute("hidden", "");
  }
}

interface SliderSpec {
  name: string;
  label: string;
  lo: number;
  hi: number;
  step: number;
  value: number;
}

const FORMS: Record<string, SliderSpec[]> = {
  opaque: [
    { name: "roughness", label: "roughness", lo: 0, hi: 1, step: 0.01, value: 0.5 },
    { name: "metallic", label: "metallic", lo: 0, hi: 1, step: 0.01, value: 0.0 },
  ],
  hsv: [
    { name: "dh", label: "hue shift (deg)", ...range("hsv.dh"), step: 1, value: 0 },
    { name: "ss", label: "saturation x", ...range("hsv.ss"), step: 0.05, value: 1 },
    { name: "sv", label: "value x", ...range("hsv.sv"), step: 0.05, value: 1 },
  ],
  relight: [
    { name: "scale", label: "light scale", ...range("relight.scale"), step: 0.1, value: 1 },
  ],
  transparency: [
    { name: "transmission", label: "transmission", ...range("transparency.transmission"), step: 0.01, value: 1 },
    { name: "eta", label: "ior", ...range("transparency.eta"), step: 0.01, value: 1.5 },
    { name: "d1_const", label: "thickness", lo: 0, hi: 2, step: 0.01, value: 0.2 },
  ],
};

function range(key: string): { lo: number; hi: number } {
  const [lo, hi] = RANGES[key];
  return { lo, hi };
}

export class ConsoleApp {
  client: Client;
  state = new ConsoleState();
  root: HTMLElement;
  banner: Banner;
  painter: MaskPainter | null = null;
  kind = "opaque";
  sliders = new Map<string, HTMLInputElement>();
  errors = new Map<string, HTMLElement>();
  beforeImg = el("img", { class: "pane before" });
  afterImg = el("img", { class: "pane after" });
  split = 0.5;
  swapped = false;
  inspector = el("div", { class: "inspector" }, "hover for values");
  resultHdr: FloatImage | null = null;
  status = el("div", { class: "status" });

  constructor(root: HTMLElement, serviceUrl: string) {
    this.root = root;
    this.client = new Client(serviceUrl);
    this.banner = new Banner(root);
  }

  async load(): Promise<void> {
    try {
      const scene = await this.client.scene();
      this.banner.hide();
      this.state.setScene(scene);
      this.render(scene.preview_png_b64);
    } catch (e) {
      if (e instanceof ApiError && e.status === 409) {
        this.banner.show(
          "bundle not optimized yet: run the envmap stage first, then reload",
        );
      } else {
        this.banner.show("engine unreachable", () => void this.load());
      }
    }
  }

  private render(previewB64: string): void {
    const scene = this.state.scene!;
    this.root.querySelector(".layout")?.remove();
    const layout = el("div", { class: "layout" });
    this.root.append(layout);

    // scene column: preview, thumbnails, masks, paint canvas
    const left = el("div", { class: "col scene" });
    layout.append(left);
    this.beforeImg.src = `data:image/png;base64,${previewB64}`;
    left.append(el("h3", {}, "scene"), this.beforeImg.cloneNode() as HTMLElement);
    const thumbs = el("div", { class: "thumbs" });
    left.append(thumbs);
    for (const name of MAP_THUMBS) {
      const img = el("img", { class: "thumb", title: name });
      this.client
        .mapPng(name)
        .then((b) => (img.src = pngUrl(b)))
        .catch(() => img.remove());
      thumbs.append(img);
    }
    const maskList = el("select", { size: "4" });
    for (const m of scene.masks) maskList.append(el("option", { value: m }, m));
    maskList.onchange = () => this.state.selectMask(maskList.value);
    left.append(el("h3", {}, "masks"), maskList);

    const canvas = el("canvas", {
      width: String(scene.width),
      height: String(scene.height),
      class: "paint",
    });
    this.painter = new MaskPainter(scene.width, scene.height);
    const ctx = canvas.getContext("2d")!;
    let down = false;
    let last: [number, number] | null = null;
    const pos = (ev: MouseEvent): [number, number] => {
      const r = canvas.getBoundingClientRect();
      return [
        ((ev.clientX - r.left) / r.width) * scene.width,
        ((ev.clientY - r.top) / r.height) * scene.height,
      ];
    };
    canvas.onmousedown = (ev) => {
      down = true;
      last = pos(ev);
    };
    canvas.onmouseup = () => (down = false);
    canvas.onmousemove = (ev) => {
      if (!down || !this.painter) return;
      const p = pos(ev);
      this.painter.stroke(last![0], last![1], p[0], p[1], 3, ev.shiftKey);
      last = p;
      ctx.fillStyle = ev.shiftKey ? "black" : "white";
      ctx.beginPath();
      ctx.arc(p[0], p[1], 3, 0, 2 * Math.PI);
      ctx.fill();
    };
    left.append(el("h3", {}, "paint mask (shift = erase)"), canvas);

    // edit column
    const mid = el("div", { class: "col edit" });
    layout.append(mid);
    const kindSel = el("select");
    for (const k of Object.keys(FORMS)) kindSel.append(el("option", { value: k }, k));
    kindSel.onchange = () => {
      this.kind = kindSel.value;
      this.buildForm(mid);
    };
    mid.append(el("h3", {}, "edit"), kindSel);
    this.formHost = el("div", { class: "form" });
    mid.append(this.formHost, this.status);
    this.buildForm(mid);

    // compare column
    const right = el("div", { class: "col compare" });
    layout.append(right);
    right.append(el("h3", {}, "compare (drag split, x swaps)"));
    const wrap = el("div", { class: "abwrap" });
    wrap.append(this.beforeImg, this.afterImg);
    const handle = el("div", { class: "handle" });
    wrap.append(handle);
    right.append(wrap, this.inspector);
    const applySplit = () => {
      const pct = 100 * (this.swapped ? 1 - this.split : this.split);
      this.afterImg.style.clipPath = `inset(0 0 0 ${pct}%)`;
      handle.style.left = `${pct}%`;
    };
    applySplit();
    wrap.onmousemove = (ev) => {
      const r = wrap.getBoundingClientRect();
      if (ev.buttons) {
        this.split = Math.min(1, Math.max(0, (ev.clientX - r.left) / r.width));
        applySplit();
      }
      this.inspect(
        Math.floor(((ev.clientX - r.left) / r.width) * scene.width),
        Math.floor(((ev.clientY - r.top) / r.height) * scene.height),
      );
    };
    document.addEventListener("keydown", (ev) => {
      if (ev.key === "x") {
        this.swapped = !this.swapped;
        const tmp = this.beforeImg.src;
        this.beforeImg.src = this.afterImg.src || tmp;
        this.afterImg.src = tmp;
        applySplit();
      }
    });
  }

  private formHost: HTMLElement = el("div");

  private buildForm(_mid: HTMLElement): void {
    this.formHost.textContent = "";
    this.sliders.clear();
    this.errors.clear();
    for (const spec of FORMS[this.kind] ?? []) {
      const row = el("label", { class: "slider" }, `${spec.label} `);
      const input = el("input", {
        type: "range",
        min: String(spec.lo),
        max: String(spec.hi),
        step: String(spec.step),
        value: String(spec.value),
      });
      const box = el("input", { type: "number", value: String(spec.value) });
      input.oninput = () => (box.value = input.value);
      box.oninput = () => (input.value = box.value);
      const err = el("span", { class: "err" });
      row.append(input, box, err);
      this.formHost.append(row);
      this.sliders.set(spec.name, box);
      this.errors.set(spec.name, err);
    }
    const go = el("button", {}, "preview");
    go.onclick = () => void this.submit();
    const undoB = el("button", {}, "undo");
    undoB.onclick = () => {
      const prev = this.state.undo();
      if (prev) {
        for (const [k, v] of Object.entries(prev.params)) {
          const box = this.sliders.get(k);
          if (box && typeof v === "number") box.value = String(v);
        }
      }
    };
    this.formHost.append(go, undoB);
  }

  private payload(): EditPayload {
    const params: Record<string, unknown> = {};
    for (const [name, box] of this.sliders) params[name] = Number(box.value);
    const p: EditPayload = { kind: this.kind, quality: "preview", params };
    if (this.kind === "opaque") {
      p.params = { set: { roughness: params.roughness, metallic: params.metallic } };
    }
    if (this.kind !== "relight" && this.kind !== "insert") {
      if (this.painter && !this.painter.isEmpty()) {
        p.mask_png_b64 = this.painter.toPngB64();
        p.mask_name = "painted";
      } else if (this.state.selectedMask) {
        p.mask = this.state.selectedMask;
      }
    }
    return p;
  }

  private showFieldError(field: string, message: string): void {
    const leaf = field.split(".").pop()!;
    const err = this.errors.get(leaf);
    if (err) err.textContent = message;
    else this.status.textContent = `${field}: ${message}`;
  }

  async submit(): Promise<void> {
    for (const err of this.errors.values()) err.textContent = "";
    this.status.textContent = "";
    const payload = this.payload();
    const masks = this.state.scene?.masks ?? null;
    const errs = validateEdit(payload, masks);
    if (errs.length > 0) {
      this.showFieldError(errs[0].field, errs[0].message);
      return;
    }
    const { signal, seq } = this.state.beginPreview("edit");
    try {
      const { id } = await this.client.submitEdit(payload, { signal });
      this.status.textContent = `job ${id}...`;
      const job = await pollJob(this.client, id, {
        signal,
        onUpdate: (j) => (this.status.textContent = `${j.id}: ${j.status}`),
      });
      const png = await this.client.jobResultPng(job.id, signal);
      if (!this.state.commitResult("edit", seq, png)) return; // stale
      this.afterImg.src = pngUrl(png);
      this.resultHdr = parsePfm(await this.client.jobResultHdr(job.id));
      this.state.pushHistory({
        kind: this.kind,
        params: Object.fromEntries(
          [...this.sliders].map(([k, v]) => [k, Number(v.value)]),
        ),
        label: `${this.kind} ${job.id}`,
      });
      this.status.textContent = `${job.id}: done`;
    } catch (e) {
      if (e instanceof ClientValidationError || e instanceof ApiError) {
        if (e.field) this.showFieldError(e.field, e.message);
        else this.status.textContent = e.message;
      } else if ((e as Error).message !== "aborted") {
        this.status.textContent = String(e);
      }
    }
  }

  private inspect(x: number, y: number): void {
    if (!this.resultHdr) return;
    if (x < 0 || y < 0 || x >= this.resultHdr.width || y >= this.resultHdr.height) return;
    this.inspector.textContent = `(${x}, ${y}) linear ${formatPixel(
      pixel(this.resultHdr, x, y),
    )}`;
  }
}

export function mount(rootId: string, serviceUrl: string): ConsoleApp {
  const root = document.getElementById(rootId);
  if (!root) throw new Error(`no element #${rootId}`);
  const app = new ConsoleApp(root, serviceUrl);
  void app.load();
  return app;
}
