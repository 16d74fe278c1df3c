"""Scene generators: structured collage (center-anchored leaves on a
phyllotaxis-style angle schedule) and random collage (uniform position,
scale, and rotation), plus the deterministic batch driver.

Randomness discipline: every scene draws from its own counter-based stream
keyed by (global_seed, image_index) — see ``rng``. Within a scene the draw
order is fixed and documented on each generator, so outputs depend only on
the key, the parameters, and the bank/background content, never on worker
count or scheduling.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataset_io, rng as rng_mod
from .errors import ConfigurationError, IngestionError, InvalidInputError
from .leafbank import LeafBank
from .raster import Placement, Scene, relabel_visible, composite_leaf


@dataclass(frozen=True)
class SubsetParams:
    """Structured-collage parameters for one training subset.

    Canvas sides must be multiples of 64 (downstream training memory
    alignment). The plant center is drawn uniformly from a delta_w x delta_h
    box around ``center``. Angle-schedule constants default to the standard
    schedule: consecutive leaves advance 127.5±12.5 degrees and the first
    leaf of triad t >= 2 instead advances 60±10 degrees, halving each triad.
    """

    train_w: int
    train_h: int
    center: tuple[float, float]
    center_delta_w: float
    center_delta_h: float
    leaves_min: int
    leaves_max: int
    within_triad_mean: float = 127.5
    within_triad_jitter: float = 12.5
    triad_offset_base: float = 60.0
    triad_offset_jitter_base: float = 10.0
    min_visible: int = 50
    order_by_area: bool = False

    def __post_init__(self):
        if self.train_w % 64 or self.train_h % 64 or self.train_w <= 0 or self.train_h <= 0:
            raise InvalidInputError(
                f"canvas {self.train_w}x{self.train_h} sides must be positive multiples of 64"
            )
        if not 0 <= self.leaves_min <= self.leaves_max:
            raise InvalidInputError(
                f"leaf count range [{self.leaves_min}, {self.leaves_max}] is invalid"
            )
        if min(self.within_triad_jitter, self.triad_offset_jitter_base) < 0:
            raise InvalidInputError("jitters must be nonnegative")
        if self.min_visible < 0:
            raise InvalidInputError("min_visible must be nonnegative")
        half_w = self.center_delta_w / 2.0
        half_h = self.center_delta_h / 2.0
        if not (
            0 <= self.center[0] - half_w
            and self.center[0] + half_w < self.train_w
            and 0 <= self.center[1] - half_h
            and self.center[1] + half_h < self.train_h
        ):
            raise InvalidInputError("plant-center delta box must lie inside the canvas")


PRESETS: dict[str, SubsetParams] = {
    "A1": SubsetParams(512, 512, (256.0, 256.0), 40.0, 40.0, 5, 25),
    "A2": SubsetParams(512, 512, (256.0, 256.0), 40.0, 40.0, 3, 25),
    "A3": SubsetParams(2048, 2048, (1024.0, 1024.0), 160.0, 160.0, 2, 15),
    "A4": SubsetParams(448, 448, (224.0, 224.0), 35.0, 35.0, 4, 30),
}


@dataclass(frozen=True)
class NaiveParams:
    """Random-collage parameters (canvas, leaf count, scale range)."""

    canvas_w: int = 1024
    canvas_h: int = 1024
    leaves_min: int = 10
    leaves_max: int = 40
    scale_min: float = 0.4
    scale_max: float = 1.1
    prescale_longest_dim: int = 600
    min_visible: int = 50

    def __post_init__(self):
        if self.canvas_w <= 0 or self.canvas_h <= 0:
            raise InvalidInputError("canvas dimensions must be positive")
        if not 0 <= self.leaves_min <= self.leaves_max:
            raise InvalidInputError(
                f"leaf count range [{self.leaves_min}, {self.leaves_max}] is invalid"
            )
        if not 0 < self.scale_min <= self.scale_max:
            raise InvalidInputError(
                f"scale range [{self.scale_min}, {self.scale_max}] is invalid"
            )
        if self.prescale_longest_dim <= 0 or self.min_visible < 0:
            raise InvalidInputError("prescale_longest_dim/min_visible out of range")


@dataclass
class SceneManifest:
    """Complete record of one generated scene, sufficient for exact replay."""

    image_id: str
    global_seed: int
    image_index: int
    kind: str
    background_id: str
    plant_center: tuple[float, float] | None
    placements: list[Placement]
    placed_count: int
    visible_count: int
    min_visible: int

    def __post_init__(self):
        if [p.z for p in self.placements] != list(range(1, len(self.placements) + 1)):
            raise InvalidInputError("manifest placements must be contiguous in z from 1")
        if self.placed_count != len(self.placements):
            raise InvalidInputError("placed_count must equal the number of placements")
        if not 0 <= self.visible_count <= self.placed_count:
            raise InvalidInputError("visible_count must lie in [0, placed_count]")
        if self.kind not in ("naive", "structured"):
            raise InvalidInputError(f"unknown scene kind {self.kind!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "SceneManifest":
        placements = [
            Placement(
                leaf_id=p["leaf_id"],
                position=(float(p["position"][0]), float(p["position"][1])),
                angle_deg=float(p["angle_deg"]),
                scale_x=float(p["scale_x"]),
                scale_y=float(p["scale_y"]),
                z=int(p["z"]),
            )
            for p in d["placements"]
        ]
        center = d.get("plant_center")
        return cls(
            image_id=d["image_id"],
            global_seed=int(d["global_seed"]),
            image_index=int(d["image_index"]),
            kind=d["kind"],
            background_id=d["background_id"],
            plant_center=None if center is None else (float(center[0]), float(center[1])),
            placements=placements,
            placed_count=int(d["placed_count"]),
            visible_count=int(d["visible_count"]),
            min_visible=int(d["min_visible"]),
        )


def angle_schedule(
    i: int,
    alpha_prev: float,
    rng: np.random.Generator,
    *,
    within_triad_mean: float = 127.5,
    within_triad_jitter: float = 12.5,
    triad_offset_base: float = 60.0,
    triad_offset_jitter_base: float = 10.0,
) -> float:
    """Angle of leaf ``i`` given leaf ``i-1``'s angle.

    Leaves count in triads of three starting at leaf 1. Within a triad each
    leaf advances by ``within_triad_mean ± within_triad_jitter``. The first
    leaf of triad t >= 2 advances instead by the triad offset, which starts
    at ``triad_offset_base ± triad_offset_jitter_base`` and halves with each
    later triad (60±10, 30±5, 15±2.5, ...). One uniform draw is consumed per
    call even with zero jitter, keeping the stream layout fixed.

    Args:
        i: 1-based leaf index; must be >= 2 (leaf 1 has no predecessor).
        alpha_prev: previous leaf's angle in degrees.
        rng: per-scene random stream.

    Returns:
        Angle in degrees, range [0, 360).
    """
    if i < 2:
        raise InvalidInputError("angle_schedule needs i >= 2; draw the first angle uniformly")
    if i % 3 == 1:
        triad = (i - 1) // 3 + 1
        halving = 2.0 ** (triad - 2)
        offset = triad_offset_base / halving
        jitter = triad_offset_jitter_base / halving
        step = float(rng.uniform(offset - jitter, offset + jitter))
    else:
        step = float(
            rng.uniform(within_triad_mean - within_triad_jitter, within_triad_mean + within_triad_jitter)
        )
    return (alpha_prev + step) % 360.0


def pick_plant_center(params: SubsetParams, rng: np.random.Generator) -> tuple[float, float]:
    """Uniform plant center inside the subset's delta box (x drawn, then y)."""
    x = params.center[0] + float(rng.uniform(-params.center_delta_w / 2.0, params.center_delta_w / 2.0))
    y = params.center[1] + float(rng.uniform(-params.center_delta_h / 2.0, params.center_delta_h / 2.0))
    return x, y


def _check_backgrounds(backgrounds: dataset_io.BackgroundSet, w: int, h: int) -> None:
    if len(backgrounds) == 0:
        raise ConfigurationError("background set is empty")
    for bg_id, img in zip(backgrounds.ids, backgrounds.images):
        if img.shape[:2] != (h, w):
            raise ConfigurationError(
                f"background {bg_id} is {img.shape[1]}x{img.shape[0]}, expected {w}x{h}"
            )


def generate_structured(
    params: SubsetParams,
    bank: LeafBank,
    backgrounds: dataset_io.BackgroundSet,
    global_seed: int,
    image_index: int,
) -> tuple[Scene, SceneManifest]:
    """Build one structured-collage scene.

    Draw order (fixed): background index, leaf count, plant-center x, plant-
    center y, then per leaf its bank index and its angle (uniform in [0, 360)
    for leaf 1, the schedule step otherwise). Every leaf is placed at native
    size with its anchor on the plant center; later leaves overwrite earlier
    ones. With ``order_by_area`` the drawn leaf choices are re-paired onto
    the placement slots in descending cutout-area order (angles keep their
    slots, so the schedule chain is unchanged).
    """
    if len(bank) == 0:
        raise ConfigurationError("leaf bank is empty")
    if bank.kind != "aligned":
        raise ConfigurationError(f"structured generation needs an aligned bank, got {bank.kind!r}")
    _check_backgrounds(backgrounds, params.train_w, params.train_h)

    rng = rng_mod.stream(global_seed, image_index)
    bg_i = int(rng.integers(0, len(backgrounds)))
    n = int(rng.integers(params.leaves_min, params.leaves_max, endpoint=True))
    center = pick_plant_center(params, rng)

    choices: list[int] = []
    angles: list[float] = []
    alpha = 0.0
    for i in range(1, n + 1):
        choices.append(int(rng.integers(0, len(bank))))
        if i == 1:
            alpha = float(rng.uniform(0.0, 360.0))
        else:
            alpha = angle_schedule(
                i,
                alpha,
                rng,
                within_triad_mean=params.within_triad_mean,
                within_triad_jitter=params.within_triad_jitter,
                triad_offset_base=params.triad_offset_base,
                triad_offset_jitter_base=params.triad_offset_jitter_base,
            )
        angles.append(alpha)
    if params.order_by_area:
        choices.sort(key=lambda idx: (-bank[idx].area_px, idx))

    scene = Scene.from_background(backgrounds.images[bg_i])
    placements: list[Placement] = []
    for z, (leaf_idx, angle) in enumerate(zip(choices, angles), start=1):
        placement = Placement(
            leaf_id=bank[leaf_idx].id, position=center, angle_deg=angle, z=z
        )
        composite_leaf(scene, bank[leaf_idx], placement)
        placements.append(placement)
    visible = relabel_visible(scene, params.min_visible)
    manifest = SceneManifest(
        image_id=f"{image_index:05d}",
        global_seed=global_seed,
        image_index=image_index,
        kind="structured",
        background_id=backgrounds.ids[bg_i],
        plant_center=center,
        placements=placements,
        placed_count=n,
        visible_count=visible,
        min_visible=params.min_visible,
    )
    return scene, manifest


def generate_naive(
    params: NaiveParams,
    bank: LeafBank,
    backgrounds: dataset_io.BackgroundSet,
    global_seed: int,
    image_index: int,
) -> tuple[Scene, SceneManifest]:
    """Build one random-collage scene.

    Draw order (fixed): background index, leaf count, then per leaf its bank
    index, scale_x, scale_y, rotation, position x, position y. Positions are
    uniform over the canvas, so each leaf's anchor (its alpha centroid after
    prescaling) always lands inside the image.
    """
    if len(bank) == 0:
        raise ConfigurationError("leaf bank is empty")
    if bank.kind != "prescaled":
        raise ConfigurationError(f"random-collage generation needs a prescaled bank, got {bank.kind!r}")
    for c in bank.cutouts:
        if max(c.pixels.shape[:2]) != params.prescale_longest_dim:
            raise ConfigurationError(
                f"bank leaf {c.id} longest side {max(c.pixels.shape[:2])} != "
                f"prescale_longest_dim {params.prescale_longest_dim}"
            )
    _check_backgrounds(backgrounds, params.canvas_w, params.canvas_h)

    rng = rng_mod.stream(global_seed, image_index)
    bg_i = int(rng.integers(0, len(backgrounds)))
    n = int(rng.integers(params.leaves_min, params.leaves_max, endpoint=True))

    scene = Scene.from_background(backgrounds.images[bg_i])
    placements: list[Placement] = []
    for z in range(1, n + 1):
        leaf_idx = int(rng.integers(0, len(bank)))
        sx = float(rng.uniform(params.scale_min, params.scale_max))
        sy = float(rng.uniform(params.scale_min, params.scale_max))
        angle = float(rng.uniform(0.0, 360.0))
        px = float(rng.uniform(0.0, params.canvas_w))
        py = float(rng.uniform(0.0, params.canvas_h))
        placement = Placement(
            leaf_id=bank[leaf_idx].id,
            position=(px, py),
            angle_deg=angle,
            scale_x=sx,
            scale_y=sy,
            z=z,
        )
        composite_leaf(scene, bank[leaf_idx], placement)
        placements.append(placement)
    visible = relabel_visible(scene, params.min_visible)
    manifest = SceneManifest(
        image_id=f"{image_index:05d}",
        global_seed=global_seed,
        image_index=image_index,
        kind="naive",
        background_id=backgrounds.ids[bg_i],
        plant_center=None,
        placements=placements,
        placed_count=n,
        visible_count=visible,
        min_visible=params.min_visible,
    )
    return scene, manifest


def replay_manifest(
    manifest: SceneManifest,
    bank: LeafBank,
    backgrounds: dataset_io.BackgroundSet,
) -> Scene:
    """Rebuild a scene from its manifest alone (no random draws).

    Replaying onto the same bank and backgrounds reproduces the generated
    pixels and labels byte for byte.
    """
    by_id = {c.id: c for c in bank.cutouts}
    try:
        bg = backgrounds.images[backgrounds.ids.index(manifest.background_id)]
    except ValueError:
        raise ConfigurationError(f"background {manifest.background_id!r} not in set") from None
    scene = Scene.from_background(bg)
    for placement in manifest.placements:
        try:
            cutout = by_id[placement.leaf_id]
        except KeyError:
            raise ConfigurationError(f"leaf {placement.leaf_id!r} not in bank") from None
        composite_leaf(scene, cutout, placement)
    relabel_visible(scene, manifest.min_visible)
    return scene


# ------------------------------------------------------------- batch driver

_WORKER_STATE: dict = {}


def _worker_init(kind: str, params, bank_dir: str, backgrounds_dir: str, global_seed: int, out_dir: str):
    bank = dataset_io.load_bank(bank_dir)
    backgrounds = dataset_io.load_backgrounds(backgrounds_dir, params)
    _WORKER_STATE.update(
        kind=kind,
        params=params,
        bank=bank,
        backgrounds=backgrounds,
        global_seed=global_seed,
        out_dir=out_dir,
    )


def _generate_one(index: int) -> tuple[int, str, int]:
    s = _WORKER_STATE
    generate = generate_structured if s["kind"] == "structured" else generate_naive
    scene, manifest = generate(s["params"], s["bank"], s["backgrounds"], s["global_seed"], index)
    dataset_io.write_scene(scene, manifest, s["out_dir"])
    return index, manifest.image_id, manifest.placed_count


def generate_batch(
    kind: str,
    count: int,
    params,
    bank_dir: str | Path,
    backgrounds_dir: str | Path,
    global_seed: int,
    out_dir: str | Path,
    workers: int = 1,
) -> Path:
    """Generate ``count`` scenes indexed 0..count-1 into ``out_dir``.

    Every image is produced independently from (global_seed, index), so the
    output tree is byte-identical for any worker count. Emits the per-scene
    files plus ``counts.csv`` (one row per image, count = leaves placed).
    """
    if kind not in ("naive", "structured"):
        raise ConfigurationError(f"unknown generation kind {kind!r}")
    if count < 1:
        raise InvalidInputError("count must be >= 1")
    if workers < 1:
        raise InvalidInputError("workers must be >= 1")
    expected = SubsetParams if kind == "structured" else NaiveParams
    if not isinstance(params, expected):
        raise ConfigurationError(
            f"{kind} generation takes {expected.__name__}, got {type(params).__name__}"
        )
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IngestionError(f"cannot create output directory {out_dir}: {exc}") from exc

    init_args = (kind, params, str(bank_dir), str(backgrounds_dir), global_seed, str(out_dir))
    results: list[tuple[int, str, int]] = []
    if workers == 1:
        _worker_init(*init_args)
        try:
            for index in range(count):
                results.append(_generate_one(index))
        finally:
            _WORKER_STATE.clear()
    else:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_worker_init, initargs=init_args
        ) as pool:
            results = list(pool.map(_generate_one, range(count)))
    results.sort()
    dataset_io.write_counts_csv(
        out_dir / "counts.csv", [(image_id, placed) for _, image_id, placed in results]
    )
    return out_dir
