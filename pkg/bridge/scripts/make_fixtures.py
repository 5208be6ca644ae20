"""Regenerate the bridge test fixtures from the artwalk package.

Exports the tuned synthetic detector as a corrdet-v1 model file, renders one
synthetic scene as the fixture image, and records the first pedestrian's
center as the hand annotation. Run from the bridge/ directory:

    python scripts/make_fixtures.py
"""

import base64
import json
from pathlib import Path

import numpy as np

from artwalk.compose import compose_scene
from artwalk.detect import OBJECTNESS_FLOOR, tuned_detector_config
from artwalk.raster import save_image
from artwalk.scenegen import SceneGenConfig, generate_scene

OUT = Path(__file__).parent.parent / "fixtures"


def export_model(path: Path) -> None:
    cfg = tuned_detector_config()
    tpl = cfg.template.data
    sil = tpl[:, :, 3] > 0.5
    pad = tpl[:, :, :3][sil].mean(axis=0)
    doc = {
        "format": "corrdet-v1",
        "classes": ["person"],
        "window": list(cfg.window),
        "gain": cfg.gain,
        "threshold": cfg.threshold,
        "nms_iou": cfg.nms_iou,
        "var_floor": cfg.var_floor,
        "objectness_floor": OBJECTNESS_FLOOR,
        "template": {
            "width": cfg.template.width,
            "height": cfg.template.height,
            "rgb_b64": base64.b64encode(
                tpl[:, :, :3].astype("<f4").tobytes()
            ).decode("ascii"),
            "mask_b64": base64.b64encode(
                sil.astype(np.uint8).tobytes()
            ).decode("ascii"),
            "pad": [float(v) for v in pad],
        },
    }
    path.write_text(json.dumps(doc) + "\n")


def export_scene(image_path: Path, annotation_path: Path) -> None:
    gen = generate_scene(SceneGenConfig(seed=21, image_size=(192, 160), n_crosswalks=1), 0)
    scene = gen.scene
    image = compose_scene(scene.background, [], None, scene.foregrounds)
    save_image(image, image_path)
    box = scene.ground_truth[0]
    annotation_path.write_text(
        json.dumps({"center": [box.x + box.w / 2, box.y + box.h / 2]}) + "\n"
    )


if __name__ == "__main__":
    OUT.mkdir(exist_ok=True)
    export_model(OUT / "model.json")
    export_scene(OUT / "person.png", OUT / "person.json")
    print(f"fixtures written to {OUT}")
