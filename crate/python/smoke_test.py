#!/usr/bin/env python3
"""Smoke test for the licp_py extension module.

Builds a synthetic registration problem, runs the staged pipeline through
the Python bindings and checks that the template converged onto the target.

Usage:
    cargo build -p licp-py            # or --release
    python3 python/smoke_test.py
"""

import json
import math
import os
import shutil
import sys
import tempfile

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def import_licp_py():
    candidates = [
        os.path.join(REPO_ROOT, "target", profile, "liblicp_py.so")
        for profile in ("release", "debug")
    ]
    built = next((p for p in candidates if os.path.exists(p)), None)
    if built is None:
        sys.exit(
            "liblicp_py.so not found; run `cargo build -p licp-py` "
            "(or --release) first"
        )
    stage_dir = tempfile.mkdtemp(prefix="licp_py_")
    shutil.copy(built, os.path.join(stage_dir, "licp_py.so"))
    sys.path.insert(0, stage_dir)
    import licp_py

    return licp_py


def small_pipeline_config():
    """Two-set, three-stage recipe scaled to the unit-sphere fixture."""
    return {
        "sets": [
            {"name": "marks", "weight": 1.5, "pairing": "fixed", "complement": False},
            {"name": "region", "weight": 1.0, "pairing": "mnn", "complement": True},
        ],
        "stages": [
            {
                "name": "affine_init",
                "correspondence_sets": ["marks"],
                "matching": "mnn",
                "metric_normal_weight": 0.0,
                "deformation": "affine_oneshot",
                "t_s": 1e-10,
                "i_max": 1,
            },
            {
                "name": "laplacian_adapt",
                "deformation": "lb_free",
                "schedule": {"start": 50.0, "end": 0.5, "steps": 20},
                "i_max": 20,
            },
            {
                "name": "dense_refine",
                "correspondence_sets": ["marks", "region"],
                "deformation": "lb_free_refine",
                "schedule": {"start": 0.9, "end": 0.1, "steps": 8},
                "i_max": 8,
            },
        ],
        "deterministic": True,
        "pvac_gamma": 1.0,
    }


def main():
    licp_py = import_licp_py()

    template = licp_py.Mesh.icosphere(2)
    assert template.n_vertices == 162, template.n_vertices
    assert template.n_triangles == 320

    # normals of a unit sphere point radially outward
    worst = 0.0
    for v, n in zip(template.vertices(), template.normals()):
        dot = sum(vi * ni for vi, ni in zip(v, n))
        worst = max(worst, abs(1.0 - dot))
    assert worst < 0.01, f"normal deviation {worst}"

    hit = template.ray_intersect((0.0, 0.0, 5.0), (0.0, 0.0, -1.0))
    assert hit is not None
    point, triangle, distance = hit
    assert abs(distance - 4.0) < 0.05, distance
    assert triangle < template.n_triangles
    assert template.ray_intersect((0.0, 0.0, 5.0), (0.0, 0.0, 1.0)) is None

    # target: anisotropically scaled and translated copy of the template
    data = licp_py.Mesh(
        [
            (1.2 * x + 1.5, 0.8 * y - 0.4, 1.1 * z + 0.9)
            for (x, y, z) in template.vertices()
        ],
        template.triangles(),
    )

    sets_json = json.dumps(
        {
            "sets": [
                {
                    "name": "marks",
                    "template_indices": list(range(12)),
                    "data_indices": list(range(12)),
                }
            ]
        }
    )
    config_json = json.dumps(small_pipeline_config())

    before = licp_py.mean_nn_distance(template, data)
    registered, repositioned, trace = licp_py.register(
        template, data, sets_json, config_json
    )
    after = licp_py.mean_nn_distance(registered, repositioned)
    diag = repositioned.bbox_diagonal()
    assert after < 0.02 * diag, f"registration residual {after} vs diagonal {diag}"
    assert after < 0.25 * before, f"{before} -> {after}"

    records = [json.loads(line) for line in trace.splitlines()]
    assert records[0]["stage"] == "affine_init"
    assert {r["stage"] for r in records} == {
        "affine_init",
        "laplacian_adapt",
        "dense_refine",
    }
    assert all(math.isfinite(r["e_shp"]) for r in records)

    # the PVAC baseline runs behind the same interface
    registered_pvac, _, _ = licp_py.register(
        template, data, sets_json, config_json, solver="pvac"
    )
    assert registered_pvac.n_vertices == registered.n_vertices

    # bundled head preset parses and carries the published caps
    preset = json.loads(licp_py.head_preset_json())
    assert [s.get("i_max") for s in preset["stages"]] == [1, 15, 58, 31, 27]

    # metric plumbing: perfect transfers score 1.0 on both metrics
    hits = [[(3, "eyes"), (7, "mouth")], [(3, "eyes"), (7, "mouth")]]
    d, h = licp_py.transfer_metrics(template.n_vertices, hits)
    assert d == 1.0 and h == 1.0

    # meshes round-trip through PLY
    with tempfile.TemporaryDirectory() as out:
        path = os.path.join(out, "registered.ply")
        registered.save(path)
        back = licp_py.Mesh.load(path)
        assert back.vertices() == registered.vertices()

    print(
        "smoke test PASS: residual "
        f"{before:.4f} -> {after:.4f} over {len(records)} iterations"
    )


if __name__ == "__main__":
    main()
