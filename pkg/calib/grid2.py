"""Does removing the direct size channel make the correlation regularizer pay off?"""
import itertools
import time

import numpy as np

import poseadapt.synth as synth
from poseadapt.losses import ObjectiveConfig, build_target_graph
from poseadapt.network import NetworkConfig, PoseNetwork
from poseadapt.synth import make_object, make_dataset, make_domain_config, evaluation_access
from poseadapt.geometry import AnchorSet, CameraIntrinsics
from poseadapt.selftrain import SelfTrainConfig, train_teacher
from poseadapt.experiment import evaluate_pose_net
from poseadapt.metrics import average_recall, predict_poses

# variant: no explicit apparent-size channel; z must come from keypoint spread
_orig_raw = synth.raw_observation

def raw_no_size(pose, model, cam):
    kp = model.points[synth.farthest_point_indices(model.points, synth.N_KEYPOINTS)]
    moved = kp @ pose.rotation.T + pose.translation
    u = cam.fx * moved[:, 0] / moved[:, 2] / synth._PIX_SCALE
    v = cam.fy * moved[:, 1] / moved[:, 2] / synth._PIX_SCALE
    return np.concatenate([u, v])

cam = CameraIntrinsics(600, 600, 320, 240)
anchors = AnchorSet.build(60, 20, 20, 40, seed=0)
tg = build_target_graph(anchors.bins_z, 0.0, 2.0)
stc = SelfTrainConfig(teacher_epochs=90)
out = open("calib/grid2_results.tsv", "w", buffering=1)
out.write("variant\tctc_w\tsrc_recall\ttgt_recall\tsrc_zerr\ttgt_zerr\n")

def median_z_err(net, samples, anchors):
    with evaluation_access():
        obs = np.stack([s.observation for s in samples])
        poses, _ = predict_poses(net, obs, anchors, cam)
        return float(np.median([abs(p.z - s.gt_pose.z) for p, s in zip(poses, samples)]))

for variant, raw_fn in (("nosize", raw_no_size), ("size", _orig_raw)):
    synth.raw_observation = raw_fn
    obj = make_object("box", seed=1, n_points=128)
    src = make_domain_config(0.0, 0.02, 0.0, seed=1)
    tgt = make_domain_config(0.8, 0.06, 0.02, seed=2)
    ds = make_dataset(660, 330, [obj], cam, src, tgt, seed=0)
    for w in (0.0, 0.01, 0.03, 0.1):
        netcfg = NetworkConfig(obs_dim=ds.obs_dim, n_rot=60, n_vx=20, n_vy=20, n_z=40)
        net = PoseNetwork(netcfg, seed=0)
        ocfg = ObjectiveConfig(target_graph=tg, ctc_weight=w)
        train_teacher(ds.source, net, anchors, obj, cam, ocfg, stc, seed=0)
        rs = average_recall(evaluate_pose_net(net, ds.source, obj, anchors, cam))
        rt = average_recall(evaluate_pose_net(net, ds.target, obj, anchors, cam))
        zs = median_z_err(net, ds.source, anchors)
        zt = median_z_err(net, ds.target, anchors)
        out.write(f"{variant}\t{w}\t{rs:.1f}\t{rt:.1f}\t{zs:.4f}\t{zt:.4f}\n")
synth.raw_observation = _orig_raw
out.close()
print("done")
