"""Mine overlapping RGB-D frame pairs and score them with PointInfoNCE.

Features here are random unit vectors, so the loss values carry no
signal; the point is the plumbing from depth frames to matched pixels.
"""

import numpy as np

from geofloc.contrastive import point_info_nce
from geofloc.mining import find_correspondences, mine_pairs
from geofloc.sim import ScenarioSpec, gen_rgbd_sequence

spec = ScenarioSpec(seed=1, steps=12, image_width=32, image_height=24)
seq = gen_rgbd_sequence(spec)
K = seq.intrinsics

pairs = mine_pairs(seq.frames, K, min_ratio=0.2, pixel_stride=1)
print(f"{len(pairs)} of {len(seq.frames) * (len(seq.frames) - 1) // 2} frame pairs overlap by >= 20%")

rng = np.random.default_rng(0)
for (i, j), ratio in pairs[:5]:
    (Da, Pa), (Db, Pb) = seq.frames[i], seq.frames[j]
    corr = find_correspondences(Da, Db, K, Pa, Pb, frame_ids=(i, j))
    n = Da.size
    fa = rng.normal(size=(n, 16))
    fb = rng.normal(size=(n, 16))
    fa /= np.linalg.norm(fa, axis=1, keepdims=True)
    fb /= np.linalg.norm(fb, axis=1, keepdims=True)
    w = K.width
    matches = [(va * w + ua, vb * w + ub) for ua, va, ub, vb in corr.pairs]
    loss = point_info_nce(fa, fb, matches[:64])
    print(f"pair ({i:2d},{j:2d})  ratio {ratio:.2f}  matches {len(corr):4d}  loss {loss:.2f}")
