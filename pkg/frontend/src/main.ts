/**
 * Wiring: one websocket client, one input state, one view model, one
 * renderer. Actions go out exactly once per received frame (paced by the
 * server tick); the render loop runs at display rate and only paints.
 */

import { CockpitClient } from "./net.js";
import { InputState } from "./input.js";
import { CockpitViewModel, STALE_MS } from "./viewmodel.js";
import { Renderer } from "./render.js";
import { makeAction, makeConfig, makeEstop, makeRecord, makeReset } from "./protocol.js";

const canvas = document.getElementById("view") as HTMLCanvasElement;
const renderer = new Renderer(canvas);
const vm = new CockpitViewModel();
const input = new InputState();

const wsUrl = `ws://${location.host}/ws`;
let recordingWanted = false;

const client = new CockpitClient(wsUrl, {
  onFrame(frame) {
    vm.applyFrame(frame, performance.now());
    if (vm.shouldSendFor(frame.seq)) {
      const a = input.current();
      client.send(makeAction(a.steering, a.throttle));
    }
  },
  onClose() {
    vm.resetConnection();
    input.releaseAll();
  },
});
client.connect();

// --- keyboard -------------------------------------------------------------

const HANDLED = new Set([
  "ArrowLeft", "ArrowRight", "ArrowUp", "ArrowDown",
  "a", "A", "d", "D", "w", "W", "s", "S",
]);

window.addEventListener("keydown", (ev) => {
  if (vm.connected && HANDLED.has(ev.key)) {
    input.keyDown(ev.key);
    ev.preventDefault();
  } else if (ev.key === " ") {
    client.send(makeEstop());
    ev.preventDefault();
  } else if (ev.key === "r" || ev.key === "R") {
    client.send(makeReset());
  }
});
window.addEventListener("keyup", (ev) => {
  if (HANDLED.has(ev.key)) input.keyUp(ev.key);
});
window.addEventListener("blur", () => input.releaseAll());

// --- gamepad --------------------------------------------------------------

function pollGamepad(): void {
  const pads = navigator.getGamepads ? navigator.getGamepads() : [];
  const pad = pads && pads[0];
  if (pad && pad.connected) {
    // left stick: x is steering, pushing forward (negative y) is throttle
    input.setGamepad({ steering: pad.axes[0] ?? 0, throttle: -(pad.axes[1] ?? 0) });
  } else {
    input.setGamepad(null);
  }
}

// --- buttons --------------------------------------------------------------

function button(id: string, fn: () => void): void {
  const el = document.getElementById(id);
  if (el !== null) el.addEventListener("click", fn);
}

button("estop", () => client.send(makeEstop()));
button("reset", () => client.send(makeReset()));
button("record", () => {
  recordingWanted = !recordingWanted;
  client.send(makeRecord(recordingWanted));
});
button("apply-config", () => {
  const task = (document.getElementById("task") as HTMLSelectElement).value;
  const seed = Number((document.getElementById("seed") as HTMLInputElement).value);
  if (task === "easy" || task === "hard") {
    client.send(makeConfig(task, Number.isInteger(seed) && seed >= 0 ? seed : 0));
  }
});

// --- render loop ----------------------------------------------------------

let lastTickMs = performance.now();
function loop(nowMs: number): void {
  const dtS = Math.min(0.1, (nowMs - lastTickMs) / 1000);
  lastTickMs = nowMs;
  pollGamepad();
  input.update(dtS);
  vm.tick(nowMs);
  if (!vm.connected) input.releaseAll();
  renderer.draw(vm, nowMs);
  const status = document.getElementById("status");
  if (status !== null) {
    status.textContent = vm.connected
      ? "connected"
      : `disconnected (no frame for ${STALE_MS} ms)`;
    status.className = vm.connected ? "ok" : "bad";
  }
  requestAnimationFrame(loop);
}
requestAnimationFrame(loop);
