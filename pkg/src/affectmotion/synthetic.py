"""Synthetic emotion-like motion-capture suite.

Four classes from a half-fraction of the speed x jerkiness x vertical
posture factorial, so every pair of classes differs in two factors:

    sadness    slow  smooth  low
    fear       fast  jerky   low
    happiness  fast  smooth  high
    anger      slow  jerky   high

Both hands circle a loop in the sagittal plane around a rest posture at a
similar tempo for every class.  Speed is carried by the loop size,
jerkiness by a sharp in-out zigzag laid over the loop (kept at a constant
distance from the loop centre), and posture by a slumped, narrow stance (low) versus an upright,
open one (high).  Posture offsets are kept out of the loop plane so that a
desired path and a target-class movement still line up loop-to-loop.

Movements have 8 markers sampled at 120 Hz; body scale is normalized by the
pelvis-chest distance, which posture leaves unchanged.
"""

from __future__ import annotations

import numpy as np

from affectmotion.dataset import LabeledDataset, MarkerSet, Movement

MARKERS = (
    "head",
    "chest",
    "pelvis",
    "right_shoulder",
    "right_wrist",
    "left_wrist",
    "right_foot",
    "left_foot",
)

MARKER_SET = MarkerSet(
    markers=MARKERS,
    groups={
        "torso": ("chest", "pelvis", "right_shoulder"),
        "head": ("head",),
        "right_hand": ("right_wrist",),
        "left_hand": ("left_wrist",),
        "right_foot": ("right_foot",),
        "left_foot": ("left_foot",),
    },
    scale_pair=("pelvis", "chest"),
)

# (fast, jerky, high)
CLASSES = {
    "sadness": (0, 0, 0),
    "fear": (1, 1, 0),
    "happiness": (1, 0, 1),
    "anger": (0, 1, 1),
}

FRAME_RATE = 120.0

_BASE_POSE = np.array(
    [
        [0.0, 0.0, 1.70],  # head
        [0.0, 0.0, 1.35],  # chest
        [0.0, 0.0, 1.00],  # pelvis
        [-0.20, 0.0, 1.45],  # right shoulder
        [-0.20, 0.25, 1.30],  # right wrist (hands held in front)
        [0.20, 0.25, 1.30],  # left wrist
        [-0.15, 0.0, 0.05],  # right foot
        [0.15, 0.0, 0.05],  # left foot
    ]
)


def _zigzag(phase):
    """Band-limited triangle wave in [-1, 1] with sharp turning points."""
    w = np.cos(phase) + np.cos(3 * phase) / 9 + np.cos(5 * phase) / 25
    return w / (1 + 1 / 9 + 1 / 25)


def synth_movement(
    emotion: str,
    rng: np.random.Generator,
    source_id: str,
    subject: str | None = None,
    noise: float = 0.0005,
) -> Movement:
    """One movement of class ``emotion``; style parameters are drawn from
    class-dependent ranges so classes have genuine spread."""
    fast, jerky, high = CLASSES[emotion]
    duration = rng.uniform(1.6, 2.0)
    T = int(round(duration * FRAME_RATE))
    t = np.arange(T) / FRAME_RATE
    size = rng.uniform(0.85, 1.15)
    pose = _BASE_POSE * size

    # posture: open arms and a lifted head (high) or narrow arms and a slump
    if high:
        width = rng.uniform(0.40, 0.50)
        head = rng.uniform(0.03, 0.06)
    else:
        width = rng.uniform(0.05, 0.12)
        head = -rng.uniform(0.08, 0.12)
    pose[4, 0] -= width * size
    pose[5, 0] += width * size
    pose[[0, 3], 2] += head * size

    freq = rng.uniform(1.2, 1.5)
    amp = (rng.uniform(0.30, 0.40) if fast else rng.uniform(0.08, 0.13)) * size
    phase = 2 * np.pi * freq * t + rng.uniform(0, 0.2)
    # jerky hands zigzag in and out twice per loop; the zigzag tilts the
    # loop on a sphere, so the distance from the loop centre stays constant
    tilt = 0.6 * _zigzag(2 * phase) if jerky else np.zeros(T)
    sweep = amp * np.cos(phase)
    lift = amp * np.sin(phase)
    frames = np.repeat(pose[None], T, axis=0)
    frames[:, [4, 5], 1] += (sweep * np.cos(tilt))[:, None]
    frames[:, [4, 5], 2] += (lift * np.cos(tilt))[:, None]
    frames[:, 4, 0] -= amp * np.sin(tilt)
    frames[:, 5, 0] += amp * np.sin(tilt)
    # weight shifts move the feet with the same rhythm
    step = rng.uniform(0.12, 0.2)
    frames[:, 6, 1] += step * sweep
    frames[:, 7, 1] -= step * sweep
    # the upper body sways forward and back and bobs with the hands; the bob
    # balances the sway and the steps so the whole-body loop stays round
    frames[:, [0, 3], 1] += (0.15 * sweep)[:, None]
    bob = np.sqrt((2 * step**2 + 2 * 0.15**2) / 3)
    frames[:, [0, 1, 3], 2] += (bob * lift)[:, None]

    frames[1:] += rng.normal(0, noise, size=frames[1:].shape)
    return Movement(frames, FRAME_RATE, source_id, emotion, subject)


def synthetic_dataset(per_class: int = 20, seed: int = 0) -> LabeledDataset:
    """Balanced suite with ``per_class`` movements of each class."""
    rng = np.random.default_rng(seed)
    movements = []
    for emotion in CLASSES:
        for i in range(per_class):
            subject = f"s{i % 5}"
            movements.append(synth_movement(emotion, rng, f"{emotion}_{i:02d}", subject))
    return LabeledDataset(MARKER_SET, movements, tuple(CLASSES))
