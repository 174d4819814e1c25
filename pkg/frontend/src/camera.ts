// Orthographic turntable camera for the line-skeleton view (z up).

export interface Camera {
  yaw: number; // turntable angle, rad
  pitch: number; // elevation, rad
  zoom: number; // pixels per meter
  center: [number, number, number]; // world focus point
}

export function defaultCamera(): Camera {
  return { yaw: 0.6, pitch: 0.35, zoom: 220, center: [0.4, 0, 0.3] };
}

// World -> screen-plane coordinates (y grows downward on canvas).
export function project(p: [number, number, number], cam: Camera): [number, number] {
  const cx = p[0] - cam.center[0];
  const cy = p[1] - cam.center[1];
  const cz = p[2] - cam.center[2];
  const cosY = Math.cos(cam.yaw);
  const sinY = Math.sin(cam.yaw);
  // rotate about world z, then tilt
  const rx = cx * cosY + cy * sinY;
  const ry = -cx * sinY + cy * cosY;
  const cosP = Math.cos(cam.pitch);
  const sinP = Math.sin(cam.pitch);
  const sx = rx;
  const sy = cz * cosP - ry * sinP;
  return [sx * cam.zoom, -sy * cam.zoom];
}

export function orbit(cam: Camera, dYaw: number, dPitch: number): Camera {
  const pitch = Math.min(Math.max(cam.pitch + dPitch, -1.4), 1.4);
  return { ...cam, yaw: cam.yaw + dYaw, pitch };
}
