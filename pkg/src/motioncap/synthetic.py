"""Procedural skeleton motions with templated captions and exact gold annotations.

Every sample holds one or two actions in known frame windows. Only the
joints of the acting parts move (plus i.i.d. Gaussian jitter on every
joint), so the gold body part, action center and motion-word labels are
known by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .skeleton import MotionSequence, PARTS, SkeletonLayout, default_layout, to_root_relative
from .supervision import Supervisor, default_supervisor
from .text import tokenize

ACTIONS = ("wave", "kick", "walk", "turn", "bow", "squat", "throw", "jump")

REST_POSE = {
    "pelvis": (0.0, 0.95, 0.0),
    "spine": (0.0, 1.10, 0.0),
    "chest": (0.0, 1.30, 0.0),
    "neck": (0.0, 1.50, 0.0),
    "head": (0.0, 1.65, 0.0),
    "l_elbow": (0.25, 1.15, 0.0),
    "l_wrist": (0.28, 0.90, 0.0),
    "r_elbow": (-0.25, 1.15, 0.0),
    "r_wrist": (-0.28, 0.90, 0.0),
    "l_knee": (0.10, 0.50, 0.0),
    "l_ankle": (0.10, 0.08, 0.0),
    "r_knee": (-0.10, 0.50, 0.0),
    "r_ankle": (-0.10, 0.08, 0.0),
}

LATERALITY = {
    "wave": ("left", "right", "both"),
    "throw": ("left", "right"),
    "kick": ("left", "right"),
    "walk": ("forward", "backward"),
    "turn": ("clockwise", "anticlockwise"),
    "bow": ("n.a.",),
    "squat": ("n.a.",),
    "jump": ("n.a.",),
}

TEMPLATES = {
    "wave": ("waves {arm}", "waves with {hand}", "waves {hand} in the air"),
    "throw": ("throws with {arm}", "throws a ball with {hand}", "throws something with {arm}"),
    "kick": ("kicks with {leg}", "kicks out with {foot}", "does a kick with {leg}"),
    "squat": ("squats down", "squats", "does a deep squat"),
    "bow": ("bows", "bows down", "takes a bow"),
    "walk": ("walks {dir}", "steps {dir}", "moves {dir} quickly"),
    "turn": ("turns {dir}", "turns around {dir}", "spins {dir}"),
    "jump": ("jumps", "jumps up", "jumps in place"),
}

SIDE_PHRASES = {
    "arm": {"left": "the left arm", "right": "the right arm", "both": "both arms"},
    "hand": {"left": "the left hand", "right": "the right hand", "both": "both hands"},
    "leg": {"left": "the left leg", "right": "the right leg"},
    "foot": {"left": "the left foot", "right": "the right foot"},
}


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class ActionSpec:
    name: str
    laterality: str
    onset: int
    offset: int
    amplitude: float
    frequency: float
    acting_parts: tuple[str, ...]

    @property
    def center(self) -> float:
        return (self.onset + self.offset) / 2.0

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "laterality": self.laterality,
            "onset": self.onset,
            "offset": self.offset,
            "amplitude": self.amplitude,
            "frequency": self.frequency,
            "acting_parts": list(self.acting_parts),
        }


def acting_parts(name: str, laterality: str) -> tuple[str, ...]:
    sides = {"left": ("Left",), "right": ("Right",), "both": ("Left", "Right")}
    if name in ("wave", "throw"):
        return tuple(f"{s}Arm" for s in sides[laterality])
    if name == "kick":
        return tuple(f"{s}Leg" for s in sides[laterality])
    if name == "squat":
        return ("LeftLeg", "RightLeg", "Root")
    if name == "bow":
        return ("Torso",)
    if name in ("walk", "turn"):
        return ("Root",)
    if name == "jump":
        return ("LeftLeg", "RightLeg", "Root")
    raise ValueError(f"unknown action {name!r}")


@dataclass
class SyntheticSample:
    id: str
    motion: MotionSequence
    caption: str
    actions: list[ActionSpec]
    noise_seed: int
    # token index ranges [start, end) of each action's verb phrase
    phrase_spans: list[tuple[int, int]] = field(default_factory=list)

    @property
    def tokens(self) -> list[str]:
        return tokenize(self.caption)


# --------------------------------------------------------------- trajectories


def _window(action: ActionSpec, t: int) -> tuple[np.ndarray, np.ndarray]:
    """Frame indices of the window and the progress ``u`` in [0, 1] over them."""
    k = np.arange(action.onset, action.offset + 1)
    u = (k - action.onset) / (action.offset - action.onset)
    return k, u


def _apply(pos: np.ndarray, layout: SkeletonLayout, action: ActionSpec) -> None:
    """Add the displacement of ``action`` to ``pos`` (T x J x 3) in place."""
    j = {n: i for i, n in enumerate(layout.joint_names)}
    k, u = _window(action, pos.shape[0])
    env = np.sin(np.pi * u)[:, None]
    a, f = action.amplitude, action.frequency
    sides = {"left": (("l", 1.0),), "right": (("r", -1.0),), "both": (("l", 1.0), ("r", -1.0))}

    if action.name == "wave":
        for s, sign in sides[action.laterality]:
            sway = 0.2 * np.sin(2 * np.pi * f * u)[:, None]
            pos[k, j[f"{s}_elbow"]] += a * env * np.array([0.05 * sign, 0.40, 0.0])
            pos[k, j[f"{s}_wrist"]] += a * (env * np.array([0.10 * sign, 0.85, 0.0]) + env * sway * np.array([1.0, 0.0, 0.0]))
    elif action.name == "throw":
        for s, _ in sides[action.laterality]:
            swing = np.sin(2 * np.pi * u)[:, None]
            pos[k, j[f"{s}_elbow"]] += a * (env * np.array([0.0, 0.30, 0.0]) + swing * np.array([0.0, 0.0, -0.25]))
            pos[k, j[f"{s}_wrist"]] += a * (env * np.array([0.0, 0.65, 0.0]) + swing * np.array([0.0, 0.0, -0.55]))
    elif action.name == "kick":
        for s, _ in sides[action.laterality]:
            pos[k, j[f"{s}_knee"]] += a * env * np.array([0.0, 0.30, 0.35])
            pos[k, j[f"{s}_ankle"]] += a * env * np.array([0.0, 0.45, 0.75])
    elif action.name == "squat":
        # the body drops while the feet stay planted, so the legs fold up relative to the root
        drop = a * env * np.array([0.0, -0.35, 0.0])
        pos[k] += drop[:, None, :]
        for s in ("l", "r"):
            pos[k, j[f"{s}_knee"]] += a * env * np.array([0.0, 0.25, 0.40])
            pos[k, j[f"{s}_ankle"]] += a * env * np.array([0.0, 0.35, 0.0])
    elif action.name == "bow":
        theta = 0.8 * a * env[:, 0]
        pelvis = pos[k, j["pelvis"]]
        for name in ("spine", "chest", "neck", "head"):
            rel = pos[k, j[name]] - pelvis
            y = rel[:, 1] * np.cos(theta) - rel[:, 2] * np.sin(theta)
            z = rel[:, 1] * np.sin(theta) + rel[:, 2] * np.cos(theta)
            pos[k, j[name], 1] = pelvis[:, 1] + y
            pos[k, j[name], 2] = pelvis[:, 2] + z
    elif action.name in ("walk", "turn"):
        n = len(k)
        if action.name == "walk":
            direction = 1.0 if action.laterality == "forward" else -1.0
            step = np.zeros((n, 3))
            step[:, 2] = direction * 0.09 * a * (k - action.onset)
            tail = step[-1]
        else:
            direction = 1.0 if action.laterality == "clockwise" else -1.0
            phi = direction * 2 * np.pi * u
            radius = 0.6 * a
            step = np.stack([radius * (np.cos(phi) - 1.0), np.zeros(n), radius * np.sin(phi)], axis=1)
            tail = np.zeros(3)
        # the whole body travels with the root; after the window it stays put
        pos[k] += step[:, None, :]
        pos[action.offset + 1 :] += tail
    elif action.name == "jump":
        hops = max(1, int(round(f)))
        lift = np.abs(np.sin(np.pi * hops * u))[:, None]
        up = a * lift * np.array([0.0, 0.35, 0.0])
        pos[k] += up[:, None, :]
        for s in ("l", "r"):
            pos[k, j[f"{s}_knee"]] += a * lift * np.array([0.0, 0.25, 0.30])
            pos[k, j[f"{s}_ankle"]] += a * lift * np.array([0.0, 0.50, 0.0])
    else:
        raise ValueError(f"unknown action {action.name!r}")


def render(actions: list[ActionSpec], n_frames: int, layout: SkeletonLayout, noise: float, rng) -> np.ndarray:
    rest = np.array([REST_POSE[n] for n in layout.joint_names])
    pos = np.repeat(rest[None], n_frames, axis=0)
    for action in actions:
        if not 0 <= action.onset < action.offset <= n_frames - 1:
            raise SpecError(f"action window [{action.onset}, {action.offset}] outside {n_frames} frames")
        _apply(pos, layout, action)
    return pos + rng.normal(0.0, noise, size=pos.shape)


# ------------------------------------------------------------------- captions


def _phrase(action: ActionSpec, variant: int) -> str:
    template = TEMPLATES[action.name][variant]
    lat = action.laterality
    fill = {key: table.get(lat, "") for key, table in SIDE_PHRASES.items()}
    fill["dir"] = lat
    return template.format(**fill)


def caption_for(actions: list[ActionSpec], variants: list[int]) -> tuple[str, list[tuple[int, int]]]:
    words = ["a", "person"]
    spans = []
    for i, (action, variant) in enumerate(zip(actions, variants)):
        if i:
            words.append("then")
        toks = _phrase(action, variant).split()
        spans.append((len(words), len(words) + len(toks)))
        words.extend(toks)
    return " ".join(words), spans


# ----------------------------------------------------------------- generation


def _sample_windows(n_frames: int, n_actions: int, rng, min_len: int = 10, max_len: int = 20, gap: int = 5):
    margin = 2
    room = n_frames - 1 - 2 * margin - gap * (n_actions - 1)
    longest = min(max_len, room // n_actions)
    if longest < min_len:
        raise SpecError(f"{n_frames} frames cannot hold {n_actions} action(s) of >= {min_len} frames")
    lengths = [int(rng.integers(min_len, longest + 1)) for _ in range(n_actions)]
    slack = room - sum(lengths)
    # split the slack into leading, between-action and trailing pieces
    cuts = np.sort(rng.integers(0, slack + 1, size=n_actions))
    windows, start = [], margin
    prev_cut = 0
    for i, length in enumerate(lengths):
        start += int(cuts[i] - prev_cut)
        prev_cut = int(cuts[i])
        windows.append((start, start + length))
        start += length + gap
    return windows


def make_sample(idx: int, seed_seq: np.random.SeedSequence, t_range=(40, 80), noise: float = 0.01,
                layout: SkeletonLayout | None = None, two_action_prob: float = 0.5) -> SyntheticSample:
    layout = layout or default_layout()
    rng = np.random.default_rng(seed_seq)
    n_frames = int(rng.integers(t_range[0], t_range[1] + 1))
    n_actions = 2 if rng.random() < two_action_prob else 1
    names = [str(x) for x in rng.choice(ACTIONS, size=n_actions, replace=False)]
    windows = _sample_windows(n_frames, n_actions, rng)
    actions, variants = [], []
    for name, (on, off) in zip(names, windows):
        lat = str(rng.choice(LATERALITY[name]))
        actions.append(
            ActionSpec(
                name=name,
                laterality=lat,
                onset=on,
                offset=off,
                amplitude=float(rng.uniform(0.8, 1.2)),
                frequency=float(rng.uniform(1.5, 3.0)),
                acting_parts=acting_parts(name, lat),
            )
        )
        variants.append(int(rng.integers(len(TEMPLATES[name]))))
    caption, spans = caption_for(actions, variants)
    noise_seed = int(rng.integers(2**31))
    positions = render(actions, n_frames, layout, noise, np.random.default_rng(noise_seed))
    motion = MotionSequence(positions, layout, frame_rate=20.0)
    return SyntheticSample(f"synth_{idx:05d}", motion, caption, actions, noise_seed, spans)


@dataclass
class SyntheticCorpus:
    train: list[SyntheticSample]
    val: list[SyntheticSample]
    test: list[SyntheticSample]
    seed: int

    @property
    def splits(self) -> dict[str, list[SyntheticSample]]:
        return {"train": self.train, "val": self.val, "test": self.test}

    def all(self) -> list[SyntheticSample]:
        return self.train + self.val + self.test


def split_sizes(n: int, ratios=(0.8, 0.1, 0.1)) -> tuple[int, int, int]:
    n_train = int(np.floor(ratios[0] * n))
    n_val = int(np.floor(ratios[1] * n))
    return n_train, n_val, n - n_train - n_val


def generate(n_samples: int, seed: int, t_range=(40, 80), noise: float = 0.01, ratios=(0.8, 0.1, 0.1),
             two_action_prob: float = 0.5) -> SyntheticCorpus:
    if n_samples < 10:
        raise SpecError("need at least 10 samples")
    if t_range[0] < 2 or t_range[0] > t_range[1]:
        raise SpecError(f"bad frame range {t_range}")
    layout = default_layout()
    seqs = np.random.SeedSequence(seed).spawn(n_samples)
    samples = [make_sample(i, s, t_range, noise, layout, two_action_prob) for i, s in enumerate(seqs)]
    n_train, n_val, _ = split_sizes(n_samples, ratios)
    return SyntheticCorpus(samples[:n_train], samples[n_train : n_train + n_val], samples[n_train + n_val :], seed)


# ----------------------------------------------------------------- annotation


def annotate(sample: SyntheticSample, supervisor: Supervisor | None = None) -> dict:
    """Gold record: per action and per motion word, the acting parts, center and span."""
    sup = supervisor or default_supervisor()
    tokens = sample.tokens
    flags = [int(sup.is_motion_word(t)) for t in tokens]
    token_action = [-1] * len(tokens)
    for a, (start, end) in enumerate(sample.phrase_spans):
        for i in range(start, end):
            token_action[i] = a
    words = []
    for i, tok in enumerate(tokens):
        a = token_action[i]
        if not flags[i] or a < 0:
            continue
        action = sample.actions[a]
        words.append(
            {
                "index": i,
                "word": tok,
                "action": a,
                "parts": list(action.acting_parts),
                "dictionary_parts": list(sup.dictionary.parts_for(tok)),
                "center": action.center,
                "span": [action.onset, action.offset],
            }
        )
    return {
        "id": sample.id,
        "n_frames": sample.motion.n_frames,
        "tokens": tokens,
        "motion_flags": flags,
        "token_action": token_action,
        "actions": [dict(a.to_dict(), center=a.center) for a in sample.actions],
        "motion_words": words,
    }


def part_energy(sample: SyntheticSample, action: ActionSpec) -> dict[str, float]:
    """Mean per-joint positional variance (root-relative) of each part over the action window."""
    rel = to_root_relative(sample.motion).positions[action.onset : action.offset + 1]
    layout = sample.motion.layout
    out = {}
    for part in PARTS:
        joints = layout.part_joints(part)
        out[part] = float(rel[:, joints, :].var(axis=0).sum(axis=-1).mean())
    return out
