/**
 * Driver input: keyboard ramps and gamepad axes, merged into one
 * (steering, throttle) pair per tick.
 *
 * Keyboard is discrete, so held keys ramp the channel toward full
 * deflection over ATTACK_S seconds and released channels decay back to
 * zero over DECAY_S seconds; that is what lets a keyboard driver produce
 * demonstrations smooth enough to imitate. A gamepad is already analog
 * and maps linearly, overriding the keyboard while any axis is deflected.
 */

export const ATTACK_S = 0.3;
export const DECAY_S = 0.2;

/** Keys that drive each channel; WASD and arrows both work. */
const LEFT = new Set(["ArrowLeft", "a", "A"]);
const RIGHT = new Set(["ArrowRight", "d", "D"]);
const UP = new Set(["ArrowUp", "w", "W"]);
const DOWN = new Set(["ArrowDown", "s", "S"]);

export interface GamepadAxes {
  steering: number;
  throttle: number;
}

const clamp = (v: number, lo: number, hi: number): number =>
  Math.min(hi, Math.max(lo, v));

/** Move `value` toward `target` at the attack rate, or toward 0 at the
 * decay rate when there is no target deflection. */
function ramp(value: number, target: number, dtS: number): number {
  if (target !== 0) {
    const step = (dtS / ATTACK_S) * Math.sign(target - value);
    if (Math.abs(target - value) <= Math.abs(step)) return target;
    return clamp(value + step, -1, 1);
  }
  const step = dtS / DECAY_S;
  if (Math.abs(value) <= step) return 0;
  return value - Math.sign(value) * step;
}

export class InputState {
  private pressed = new Set<string>();
  private steering = 0;
  private throttle = 0;
  private gamepad: GamepadAxes | null = null;

  keyDown(key: string): void {
    this.pressed.add(key);
  }

  keyUp(key: string): void {
    this.pressed.delete(key);
  }

  /** Drop all held keys (window blur, disconnect): no stuck controls. */
  releaseAll(): void {
    this.pressed.clear();
    this.steering = 0;
    this.throttle = 0;
  }

  /** Latest gamepad axes, or null when no pad is connected. */
  setGamepad(axes: GamepadAxes | null): void {
    this.gamepad = axes;
  }

  private keyTarget(neg: Set<string>, pos: Set<string>): number {
    let t = 0;
    for (const k of this.pressed) {
      if (neg.has(k)) t -= 1;
      if (pos.has(k)) t += 1;
    }
    return clamp(t, -1, 1);
  }

  /** Advance the ramps by dtS seconds and return the current action pair. */
  update(dtS: number): { steering: number; throttle: number } {
    if (this.gamepad !== null) {
      const g = this.gamepad;
      if (Math.abs(g.steering) > 1e-3 || Math.abs(g.throttle) > 1e-3) {
        // analog stick wins outright; keyboard ramps snap to it so a
        // key press right after releasing the stick starts from there
        this.steering = clamp(g.steering, -1, 1);
        this.throttle = clamp(g.throttle, -1, 1);
        return { steering: this.steering, throttle: this.throttle };
      }
    }
    this.steering = ramp(this.steering, this.keyTarget(LEFT, RIGHT), dtS);
    this.throttle = ramp(this.throttle, this.keyTarget(DOWN, UP), dtS);
    return { steering: this.steering, throttle: this.throttle };
  }

  current(): { steering: number; throttle: number } {
    return { steering: this.steering, throttle: this.throttle };
  }
}
