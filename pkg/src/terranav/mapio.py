"""Terrain map file format.

Single binary file: magic ``TNAV``, uint32 little-endian header length, a
UTF-8 JSON header (resolution, origin, width, height, layer names, terrain
label table), then one row-major payload per layer in header order. Scalar
layers are float32; the terrain-type layer is uint8 label indices.
"""

import json
import struct

import numpy as np

from .terrain import GridMap2D, TerrainTypeMap, TraversabilityWeights
from .world import DisturbanceParams, Obstacle, TerrainWorld

MAGIC = b"TNAV"
TYPE_LAYER = "terrain_type"


def save_world(path, world: TerrainWorld) -> None:
    elev = world.elevation
    header = {
        "resolution": elev.resolution,
        "origin": list(elev.origin),
        "width": elev.width,
        "height": elev.height,
        "layers": ["elevation", "traversability", TYPE_LAYER],
        "labels": list(world.terrain_types.labels),
        "weights": {
            "w1": world.weights.w1, "w2": world.weights.w2, "w3": world.weights.w3,
            "t_max": world.weights.t_max, "max_slope": world.weights.max_slope,
            "max_roughness": world.weights.max_roughness, "max_step": world.weights.max_step,
        },
        "disturbances": {
            lbl: {"k_vy": d.k_vy, "k_vx": d.k_vx, "k_omega": d.k_omega,
                  "n_vx": d.n_vx, "n_vy": d.n_vy, "n_omega": d.n_omega}
            for lbl, d in sorted(world.disturbances.items())
        },
        "obstacles": [
            {"x": o.x, "y": o.y, "radius": o.radius, "height": o.height}
            for o in world.obstacles
        ],
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(hbytes)))
        f.write(hbytes)
        f.write(np.ascontiguousarray(elev.values, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(world.traversability.values, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(world.terrain_types.values, dtype=np.uint8).tobytes())


def load_world(path) -> TerrainWorld:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ValueError(f"{path}: not a terrain map file")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode())
        h, w = header["height"], header["width"]
        layers = {}
        for name in header["layers"]:
            if name == TYPE_LAYER:
                layers[name] = np.frombuffer(f.read(h * w), dtype=np.uint8).reshape(h, w)
            else:
                layers[name] = np.frombuffer(f.read(4 * h * w), dtype="<f4").reshape(h, w).astype(float)

    res = header["resolution"]
    origin = tuple(header["origin"])
    wcfg = header["weights"]
    weights = TraversabilityWeights(
        w1=wcfg["w1"], w2=wcfg["w2"], w3=wcfg["w3"], t_max=wcfg["t_max"],
        max_slope=wcfg["max_slope"], max_roughness=wcfg["max_roughness"],
        max_step=wcfg["max_step"],
    )
    return TerrainWorld(
        elevation=GridMap2D(res, origin, layers["elevation"]),
        terrain_types=TerrainTypeMap(res, origin, tuple(header["labels"]), layers[TYPE_LAYER]),
        traversability=GridMap2D(res, origin, layers["traversability"]),
        weights=weights,
        disturbances={
            lbl: DisturbanceParams(**d) for lbl, d in header["disturbances"].items()
        },
        obstacles=tuple(Obstacle(**o) for o in header["obstacles"]),
    )
