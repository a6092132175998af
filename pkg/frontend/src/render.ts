/**
 * Canvas drawing: the live observation image scaled up, HUD scalars,
 * collision flash, recording dot, and the disconnected overlay. All
 * state comes in through the view model; this module only paints.
 */

import type { CockpitViewModel } from "./viewmodel.js";

export class Renderer {
  private ctx: CanvasRenderingContext2D;
  private img = new Image();
  private imgSeq = -1;
  private flashUntilMs = 0;

  constructor(private canvas: HTMLCanvasElement) {
    const ctx = canvas.getContext("2d");
    if (ctx === null) throw new Error("2d canvas context unavailable");
    this.ctx = ctx;
    this.ctx.imageSmoothingEnabled = false;
  }

  draw(vm: CockpitViewModel, nowMs: number): void {
    const { ctx, canvas } = this;
    ctx.fillStyle = "#111";
    ctx.fillRect(0, 0, canvas.width, canvas.height);

    const frame = vm.latest;
    if (frame !== null) {
      if (frame.seq !== this.imgSeq) {
        this.img.src = `data:image/png;base64,${frame.image}`;
        this.imgSeq = frame.seq;
        if (frame.collision) this.flashUntilMs = nowMs + 300;
      }
      if (this.img.complete && this.img.naturalWidth > 0) {
        ctx.drawImage(this.img, 0, 0, canvas.width, canvas.height);
      }
      if (nowMs < this.flashUntilMs) {
        ctx.fillStyle = "rgba(255, 32, 32, 0.35)";
        ctx.fillRect(0, 0, canvas.width, canvas.height);
      }
      this.drawHud(frame.speed, frame.lap_progress, frame.recording, vm);
    }

    if (!vm.connected) this.drawDisconnected();
  }

  private drawHud(
    speed: number,
    lapProgress: number,
    recording: boolean,
    vm: CockpitViewModel,
  ): void {
    const { ctx } = this;
    ctx.font = "14px monospace";
    ctx.textBaseline = "top";
    ctx.fillStyle = "#eee";
    ctx.fillText(`speed ${speed.toFixed(2)} m/s`, 8, 8);
    ctx.fillText(`lap ${(lapProgress * 100).toFixed(1)}%`, 8, 26);
    ctx.fillText(`interventions ${vm.log.interventions}`, 8, 44);
    ctx.fillText(`episodes ${vm.log.episodesRecorded}`, 8, 62);
    if (recording) {
      ctx.fillStyle = "#f33";
      ctx.beginPath();
      ctx.arc(this.canvas.width - 18, 16, 7, 0, 2 * Math.PI);
      ctx.fill();
      ctx.fillStyle = "#eee";
      ctx.fillText("REC", this.canvas.width - 62, 9);
    }
  }

  private drawDisconnected(): void {
    const { ctx, canvas } = this;
    ctx.fillStyle = "rgba(0, 0, 0, 0.6)";
    ctx.fillRect(0, canvas.height / 2 - 24, canvas.width, 48);
    ctx.fillStyle = "#f66";
    ctx.font = "bold 20px monospace";
    ctx.textBaseline = "middle";
    const label = "DISCONNECTED";
    const w = ctx.measureText(label).width;
    ctx.fillText(label, (canvas.width - w) / 2, canvas.height / 2);
    ctx.textBaseline = "top";
  }
}
