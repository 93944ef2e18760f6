/** Browser entry point: mounts the viewer UI and wires it to a session.
 *
 * The base image under the overlay is the service's rendered feature
 * map (`GET /render?view=`), the only image endpoint the API exposes;
 * object regions show their lattice colors there, so the mask overlay
 * reads naturally. All query math happens server-side.
 */

import { ApiClient, ApiError } from "./api.js";
import { compositeOverlay } from "./overlay.js";
import { maskArea } from "./rle.js";
import { ViewerSession, type SessionResult } from "./session.js";

interface ViewerHandles {
  session: ViewerSession;
  reload: () => Promise<void>;
}

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

export function mountViewer(root: HTMLElement, baseUrl: string): ViewerHandles {
  const client = new ApiClient(baseUrl);
  const session = new ViewerSession(client);

  const banner = el("div", { class: "banner", style: "display:none" });
  const retry = el("button", {}, "retry");
  banner.append(" ", retry);

  const viewSelect = el("select", { title: "view" });
  const querySelect = el("select", { title: "saved query" });
  const runButton = el("button", {}, "run query");
  const tauSlider = el("input", {
    type: "range", min: "0.5", max: "130", step: "0.5", value: "5", title: "tau_ac",
  });
  const tauLabel = el("span", {}, "tau_ac 5.0");
  const topNInput = el("input", { type: "number", min: "1", value: "1", title: "top_n" });
  const opacitySlider = el("input", {
    type: "range", min: "0", max: "1", step: "0.05", value: "0.5", title: "overlay opacity",
  });
  const heatmapToggle = el("input", { type: "checkbox", title: "heatmap" });

  const canvas = el("canvas");
  const scores = el("div", { class: "scores" });
  const historyStrip = el("div", { class: "history" });

  const controls = el("div", { class: "controls" });
  controls.append(
    viewSelect, querySelect, runButton,
    tauLabel, tauSlider, topNInput, opacitySlider, heatmapToggle,
  );
  root.append(banner, controls, canvas, scores, historyStrip);

  let baseImage: ImageData | null = null;

  function showError(message: string): void {
    banner.childNodes[0]?.remove();
    banner.prepend(message);
    banner.style.display = "";
  }

  async function loadBaseImage(view: number): Promise<void> {
    const resp = await fetch(client.renderUrl(view));
    if (!resp.ok) throw new ApiError(resp.status, `http_${resp.status}`, "render fetch failed");
    const bitmap = await createImageBitmap(await resp.blob());
    canvas.width = bitmap.width;
    canvas.height = bitmap.height;
    const ctx = canvas.getContext("2d")!;
    ctx.drawImage(bitmap, 0, 0);
    baseImage = ctx.getImageData(0, 0, bitmap.width, bitmap.height);
  }

  function draw(result: SessionResult | null): void {
    if (!baseImage) return;
    const ctx = canvas.getContext("2d")!;
    if (!result) {
      ctx.putImageData(baseImage, 0, 0);
      return;
    }
    const blended = compositeOverlay(
      baseImage.data, result.mask, baseImage.width, baseImage.height,
      { color: [255, 64, 64], opacity: session.overlay.opacity },
    );
    // Copy pins the buffer type to ArrayBuffer, which ImageData requires.
    const pixels = new Uint8ClampedArray(blended);
    ctx.putImageData(new ImageData(pixels, baseImage.width, baseImage.height), 0, 0);
    const r = result.response;
    const ranked = r.scores
      .map((s, id) => ({ id, s }))
      .sort((a, b) => b.s - a.s)
      .slice(0, 5)
      .map(({ id, s }) => `#${id}: ${s.toFixed(4)}`)
      .join("  ");
    scores.textContent =
      `objects [${r.object_ids.join(", ")}]  area ${maskArea(result.mask)}  ` +
      `render ${r.timings_ms["render"]?.toFixed(1)} ms  total ${r.timings_ms["total"]?.toFixed(1)} ms  ` +
      `cache ${r.from_cache}  |  ${ranked}`;
    renderHistory();
  }

  function renderHistory(): void {
    historyStrip.replaceChildren(
      ...session.history.map((h, i) =>
        el(
          "span",
          { class: "chip" },
          `${i === 0 ? "latest" : `-${i}`}: view ${h.request.view} tau ${h.request.tau_ac} area ${h.response.area}`,
        ),
      ),
    );
  }

  function surface(e: unknown): void {
    if (e instanceof ApiError) showError(`${e.code}: ${e.message}`);
    else showError(String(e));
  }

  async function reload(): Promise<void> {
    banner.style.display = "none";
    try {
      const scene = await session.load();
      viewSelect.replaceChildren(
        ...Array.from({ length: scene.views }, (_, i) => el("option", { value: String(i) }, `view ${i}`)),
      );
      querySelect.replaceChildren(
        ...Object.keys(session.savedQueries).map((name) => el("option", { value: name }, name)),
      );
      await loadBaseImage(session.view);
      draw(session.latest);
    } catch (e) {
      surface(e);
    }
  }

  retry.addEventListener("click", () => void reload());
  viewSelect.addEventListener("change", () => {
    session.setView(Number(viewSelect.value));
    void loadBaseImage(session.view).then(() => draw(null)).catch(surface);
  });
  runButton.addEventListener("click", () => {
    const name = querySelect.value;
    if (!name) return;
    session.runNamedQuery(name).then(draw).catch(surface);
  });
  tauSlider.addEventListener("input", () => {
    const tau = Number(tauSlider.value);
    tauLabel.textContent = `tau_ac ${tau.toFixed(1)}`;
    session.setTauAc(tau).then(draw).catch(surface);
  });
  topNInput.addEventListener("change", () => {
    session.setTopN(Number(topNInput.value)).then(draw).catch(surface);
  });
  opacitySlider.addEventListener("input", () => {
    session.setOpacity(Number(opacitySlider.value));
    draw(session.latest);
  });
  heatmapToggle.addEventListener("change", () => {
    session.toggleHeatmap();
    draw(session.latest);
  });

  void reload();
  return { session, reload };
}

const rootEl = typeof document !== "undefined" ? document.getElementById("app") : null;
if (rootEl) {
  const base = new URLSearchParams(window.location.search).get("service") ?? "";
  mountViewer(rootEl, base);
}
