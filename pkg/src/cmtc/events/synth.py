"""Synthetic event-camera ReID data: articulated walkers seen by distinct cameras.

Each identity is a stick-and-capsule silhouette with its own proportions,
clothing tones and gait. Cameras differ in scale, viewpoint foreshortening,
background tone, contrast threshold and background-activity noise. Events
are emitted by a per-pixel log-intensity threshold model run on sub-frame
renders, so only moving boundaries fire; noise events are added on top.
"""
from dataclasses import asdict, dataclass, fields
from typing import List

import numpy as np

from .io import EventStream


@dataclass(frozen=True)
class SynthConfig:
    num_ids: int = 8
    num_cams: int = 2
    clips_per_id_cam: int = 4
    seed: int = 0
    width: int = 32
    height: int = 64
    clip_len: int = 8
    t_window: int = 50_000  # microseconds
    substeps: int = 6
    gait_speed: float = 1.0
    noise_scale: float = 1.0

    def validate(self) -> None:
        if self.num_ids < 2:
            raise ValueError(f"need at least 2 identities, got {self.num_ids}")
        if self.num_cams < 2:
            raise ValueError(f"need at least 2 cameras, got {self.num_cams}")
        if self.clips_per_id_cam < 1:
            raise ValueError("clips_per_id_cam must be >= 1")
        if self.width < 8 or self.height < 8:
            raise ValueError(f"sensor {self.width}x{self.height} too small")
        if self.clip_len < 2 or self.t_window < 1 or self.substeps < 1:
            raise ValueError("clip_len >= 2, t_window >= 1 and substeps >= 1 required")
        if self.gait_speed <= 0 or self.noise_scale < 0:
            raise ValueError("gait_speed must be positive and noise_scale non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class IdentityParams:
    height: float       # body height as a fraction of the frame height
    leg_ratio: float    # leg length / body height
    torso_width: float  # torso radius / body height
    limb_width: float   # limb radius / body height
    head_ratio: float   # head radius / body height
    arm_ratio: float    # arm length / body height
    gait_freq: float    # full gait cycles per second
    stride: float       # thigh swing amplitude, radians
    arm_swing: float    # arm swing amplitude, radians
    upper_tone: float
    lower_tone: float
    skin_tone: float

    def vector(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)])


@dataclass(frozen=True)
class CameraProfile:
    scale: float
    view: float          # horizontal foreshortening factor
    background: float
    threshold: float     # log-intensity contrast threshold
    noise_rate: float    # background-activity events per pixel per second
    offset_y: float      # vertical placement, fraction of frame height


@dataclass
class SyntheticClip:
    stream: EventStream
    masks: np.ndarray  # clip_len x H x W uint8 silhouettes at window mid-points
    person_id: int
    camera_id: int
    clip_index: int

    @property
    def name(self) -> str:
        return f"p{self.person_id:03d}_c{self.camera_id}_k{self.clip_index}"


def _tone(r: np.random.Generator) -> float:
    """Dark or light tone, kept clear of the background band so every part shows contrast."""
    return r.uniform(0.03, 0.25) if r.random() < 0.5 else r.uniform(0.75, 0.97)


def identity_params(seed: int, person_id: int) -> IdentityParams:
    r = np.random.default_rng([seed, 1, person_id])
    return IdentityParams(
        height=r.uniform(0.68, 0.88),
        leg_ratio=r.uniform(0.40, 0.56),
        torso_width=r.uniform(0.07, 0.15),
        limb_width=r.uniform(0.025, 0.05),
        head_ratio=r.uniform(0.055, 0.09),
        arm_ratio=r.uniform(0.28, 0.42),
        gait_freq=r.uniform(1.4, 2.6),
        stride=r.uniform(0.25, 0.6),
        arm_swing=r.uniform(0.1, 0.7),
        upper_tone=_tone(r),
        lower_tone=_tone(r),
        skin_tone=_tone(r),
    )


def camera_profile(seed: int, camera_id: int) -> CameraProfile:
    r = np.random.default_rng([seed, 2, camera_id])
    return CameraProfile(
        scale=r.uniform(0.85, 1.08),
        view=r.uniform(0.75, 1.0),
        background=r.uniform(0.35, 0.65),
        threshold=r.uniform(0.15, 0.3),
        noise_rate=r.uniform(1.0, 4.0),
        offset_y=r.uniform(-0.04, 0.04),
    )


def _capsule_dist(px, py, ax, ay, bx, by):
    dx, dy = bx - ax, by - ay
    ll = dx * dx + dy * dy
    s = np.clip(((px - ax) * dx + (py - ay) * dy) / ll, 0.0, 1.0) if ll > 0 else 0.0
    return np.hypot(px - ax - s * dx, py - ay - s * dy)


def render(ident: IdentityParams, cam: CameraProfile, phase: float, cx: float, scale: float,
           width: int, height: int, dy: float = 0.0):
    """Intensity image and binary silhouette for one gait phase."""
    py, px = np.mgrid[0:height, 0:width].astype(np.float64) + 0.5
    h = ident.height * cam.scale * scale * height
    ground = height * (0.5 + cam.offset_y) + h / 2 + dy
    bob = 0.02 * h * abs(np.cos(phase))
    leg = ident.leg_ratio * h
    head_r = ident.head_ratio * h
    hip_y = ground - leg + bob
    top = ground - h + bob
    neck_y = top + 2 * head_r
    limb = ident.limb_width * h
    view = cam.view

    def pt(x0, y0, length, angle):
        return x0 + view * length * np.sin(angle), y0 + length * np.cos(angle)

    parts = []  # (distance field, radius, tone) painted in order
    for side in (1, -1):
        thigh = side * ident.stride * np.sin(phase)
        knee_bend = 0.6 * ident.stride * max(0.0, np.sin(phase * side + 0.8))
        kx, ky = pt(cx, hip_y, leg / 2, thigh)
        fx, fy = pt(kx, ky, leg / 2, thigh - knee_bend)
        parts.append((_capsule_dist(px, py, cx, hip_y, kx, ky), limb, ident.lower_tone))
        parts.append((_capsule_dist(px, py, kx, ky, fx, fy), limb, ident.lower_tone))
    parts.append((_capsule_dist(px, py, cx, neck_y, cx, hip_y), ident.torso_width * h, ident.upper_tone))
    arm = ident.arm_ratio * h
    shoulder_y = neck_y + 0.3 * limb
    for side in (1, -1):
        swing = -side * ident.arm_swing * np.sin(phase)
        ex, ey = pt(cx, shoulder_y, arm / 2, swing)
        hx, hy = pt(ex, ey, arm / 2, swing + 0.3 * ident.arm_swing)
        parts.append((_capsule_dist(px, py, cx, shoulder_y, ex, ey), 0.8 * limb, ident.upper_tone))
        parts.append((_capsule_dist(px, py, ex, ey, hx, hy), 0.8 * limb, ident.skin_tone))
    parts.append((np.hypot(px - cx, py - (top + head_r)), head_r, ident.skin_tone))

    image = np.full((height, width), cam.background)
    mask = np.zeros((height, width), dtype=bool)
    for dist, radius, tone in parts:
        cover = np.clip(radius - dist + 0.5, 0.0, 1.0)
        image = image * (1 - cover) + tone * cover
        mask |= dist <= radius
    return image, mask


def simulate_clip(cfg: SynthConfig, person_id: int, camera_id: int, clip_index: int) -> SyntheticClip:
    ident = identity_params(cfg.seed, person_id)
    cam = camera_profile(cfg.seed, camera_id)
    r = np.random.default_rng([cfg.seed, 3, person_id, camera_id, clip_index])
    phase0 = r.uniform(0, 2 * np.pi)
    freq = ident.gait_freq * cfg.gait_speed * r.uniform(0.95, 1.05)
    scale = r.uniform(0.97, 1.03)
    cx0 = cfg.width / 2 + r.uniform(-1.0, 1.0)
    # residual drift of a tracking crop, faster for faster walkers
    drift = r.choice([-1.0, 1.0]) * r.uniform(4.0, 10.0) * cfg.gait_speed

    n_steps = cfg.clip_len * cfg.substeps
    dt = cfg.t_window / cfg.substeps
    duration = cfg.clip_len * cfg.t_window
    # bounding-box jitter: mean-reverting random walk sampled on the substep grid
    grid = np.arange(n_steps + 1) * dt
    jitter = np.zeros((n_steps + 1, 2))
    for k in range(1, n_steps + 1):
        jitter[k] = 0.8 * jitter[k - 1] + r.normal(0.0, 0.3, 2)

    def frame_at(t_us):
        phase = phase0 + 2 * np.pi * freq * t_us * 1e-6
        jx = np.interp(t_us, grid, jitter[:, 0])
        jy = np.interp(t_us, grid, jitter[:, 1])
        cx = cx0 + drift * (t_us - duration / 2) * 1e-6 + jx
        return render(ident, cam, phase, cx, scale, cfg.width, cfg.height, jy)

    ts, xs, ys, ps = [], [], [], []
    image, _ = frame_at(0.0)
    ref = np.log(image + 0.02)
    for k in range(1, n_steps + 1):
        image, _ = frame_at(k * dt)
        diff = np.log(image + 0.02) - ref
        n = np.floor(np.abs(diff) / cam.threshold).astype(np.int64)
        yy, xx = np.nonzero(n)
        if yy.size:
            counts = n[yy, xx]
            sign = np.sign(diff[yy, xx]).astype(np.int8)
            total = int(counts.sum())
            t0 = (k - 1) * dt
            ts.append(np.floor(t0 + r.random(total) * dt).astype(np.int64))
            xs.append(np.repeat(xx, counts))
            ys.append(np.repeat(yy, counts))
            ps.append(np.repeat(sign, counts))
            ref[yy, xx] += sign * counts * cam.threshold

    n_noise = r.poisson(cam.noise_rate * cfg.noise_scale * cfg.width * cfg.height * duration * 1e-6)
    ts.append(r.integers(0, duration, n_noise))
    xs.append(r.integers(0, cfg.width, n_noise))
    ys.append(r.integers(0, cfg.height, n_noise))
    ps.append(r.choice(np.array([-1, 1], dtype=np.int8), n_noise))

    stream = EventStream.from_arrays(cfg.width, cfg.height, np.concatenate(ts), np.concatenate(xs),
                                     np.concatenate(ys), np.concatenate(ps))
    masks = np.stack([frame_at((k + 0.5) * cfg.t_window)[1] for k in range(cfg.clip_len)]).astype(np.uint8)
    return SyntheticClip(stream, masks, person_id, camera_id, clip_index)


def synth_dataset(cfg: SynthConfig) -> List[SyntheticClip]:
    """All clips for every (identity, camera, clip index), in that nesting order."""
    cfg.validate()
    return [simulate_clip(cfg, pid, cam, k)
            for pid in range(cfg.num_ids)
            for cam in range(cfg.num_cams)
            for k in range(cfg.clips_per_id_cam)]
