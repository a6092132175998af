/**
 * Cockpit state independent of any DOM: the latest frame and HUD scalars,
 * connection tracking with a 1 s staleness cutoff, the session log
 * (interventions seen, episodes recorded), and the one-action-per-frame
 * send pacing.
 */

import type { Frame } from "./protocol.js";

export const STALE_MS = 1000;

export interface SessionLog {
  interventions: number;
  episodesRecorded: number;
}

export class CockpitViewModel {
  latest: Frame | null = null;
  connected = false;
  log: SessionLog = { interventions: 0, episodesRecorded: 0 };

  private lastFrameAtMs: number | null = null;
  private lastSentSeq: number | null = null;
  private prevCollision = false;
  private prevRecording = false;

  /** Ingest one server frame. `nowMs` is the receipt time. */
  applyFrame(frame: Frame, nowMs: number): void {
    // interventions are collision rising edges: one reset event per crash,
    // however many ticks the flag stays up
    if (frame.collision && !this.prevCollision) {
      this.log.interventions += 1;
    }
    // a finished episode shows up as the recording flag falling, whether
    // the driver toggled it off or a collision/e-stop finalized it
    if (!frame.recording && this.prevRecording) {
      this.log.episodesRecorded += 1;
    }
    this.prevCollision = frame.collision;
    this.prevRecording = frame.recording;
    this.latest = frame;
    this.lastFrameAtMs = nowMs;
    this.connected = true;
  }

  /** Re-evaluate connection state; call regularly from the render loop. */
  tick(nowMs: number): void {
    if (this.lastFrameAtMs === null || nowMs - this.lastFrameAtMs > STALE_MS) {
      this.connected = false;
    }
  }

  /**
   * One action per received frame: returns true exactly once per frame
   * seq, and never while disconnected (no frames means no sends, so the
   * cockpit can never free-run ahead of the server tick).
   */
  shouldSendFor(seq: number): boolean {
    if (!this.connected || this.latest === null || this.latest.seq !== seq) {
      return false;
    }
    if (this.lastSentSeq !== null && seq <= this.lastSentSeq) return false;
    this.lastSentSeq = seq;
    return true;
  }

  /** Forget the session on disconnect so a reconnect starts cleanly. */
  resetConnection(): void {
    this.connected = false;
    this.lastFrameAtMs = null;
    this.lastSentSeq = null;
  }
}
