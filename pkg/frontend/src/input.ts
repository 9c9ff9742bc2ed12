/**
 * Handle-to-device mapping: a 2D drag pad with a scroll-wheel z axis.
 * Displacements clamp to the configured workspace radius before anything
 * is sent, and map linearly onto the device pose.
 */

export interface HandleState {
  x: number;
  y: number;
  z: number;
  engaged: boolean;
}

export function clampToWorkspace(d: { x: number; y: number; z: number },
                                 radius: number) {
  const norm = Math.hypot(d.x, d.y, d.z);
  if (radius <= 0 || norm <= radius) return { ...d };
  const s = radius / norm;
  return { x: d.x * s, y: d.y * s, z: d.z * s };
}

/** Device pose [qw qx qy qz tx ty tz] for a translated handle. */
export function displacementToPose(d: { x: number; y: number; z: number },
                                   scale = 1.0): number[] {
  return [1, 0, 0, 0, d.x * scale, d.y * scale, d.z * scale];
}

export function handleToDevice(handle: HandleState, scale: number,
                               workspaceRadius: number): number[] {
  const clamped = clampToWorkspace(
    { x: handle.x * scale, y: handle.y * scale, z: handle.z * scale },
    workspaceRadius);
  return [1, 0, 0, 0, clamped.x, clamped.y, clamped.z];
}
