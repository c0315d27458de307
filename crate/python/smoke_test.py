"""Smoke test for the dualseg Python extension.

Build and install first, e.g. `pip install ./crates/py` (needs maturin),
then run `python python/smoke_test.py`.
"""

import math
import tempfile

import dualseg


def main():
    scene = dualseg.generate_scene(0, 0)
    depth, labels = scene["depth"], scene["labels"]
    assert len(depth) == 64 and len(depth[0]) == 64

    contours = dualseg.contours(labels)
    instances = dualseg.masks(labels)
    assert instances, "scene has no instances"

    # a pixel away from every contour maps back to its own instance
    owner, mask = max(instances, key=lambda m: sum(map(sum, m[1])))
    r, c = next(
        (r, c)
        for r in range(64)
        for c in range(64)
        if mask[r][c] and contours[r][c] < 0.5
    )
    recovered = dualseg.mask_from_contours(contours, r, c)
    assert all(
        not recovered[i][j] or labels[i][j] == owner for i in range(64) for j in range(64)
    )

    loss = dualseg.logistic_loss(10.0, [[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]])
    assert abs(loss - 13 * math.log(2)) < 1e-9

    assert dualseg.iou([[True, True], [False, False]], [[False, True], [False, True]]) == 1 / 3
    assert abs(dualseg.gap(0.55, 0.73) - 0.18) < 1e-12

    rle = dualseg.rle_encode([[0, 0, 7], [7, 7, 255]])
    assert rle["runs"] == [0, 2, 7, 3, 255, 1]
    assert dualseg.rle_decode(rle["width"], rle["height"], rle["runs"]) == [[0, 0, 7], [7, 7, 255]]

    model = dualseg.Model.init(1)
    out = model.segment(depth, 32, 32, 0.5)
    assert out["empty"] == (not any(map(any, out["mask"])))
    print(model.architecture, model.num_parameters, "parameters")

    with tempfile.TemporaryDirectory() as tmp:
        assert dualseg.generate(tmp, 2, "mono", 3) == 2

    print("smoke test passed")


if __name__ == "__main__":
    main()
