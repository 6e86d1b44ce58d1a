import itertools
import time

import numpy as np

from poseadapt.losses import ObjectiveConfig, build_target_graph
from poseadapt.network import NetworkConfig, PoseNetwork
from poseadapt.synth import make_object, make_dataset, make_domain_config
from poseadapt.geometry import AnchorSet, CameraIntrinsics
from poseadapt.selftrain import SelfTrainConfig, train_teacher
from poseadapt.experiment import evaluate_pose_net
from poseadapt.metrics import average_recall

cam = CameraIntrinsics(600, 600, 320, 240)
anchors = AnchorSet.build(60, 20, 20, 40, seed=0)
tg = build_target_graph(anchors.bins_z, 0.0, 2.0)
stc = SelfTrainConfig(teacher_epochs=90)

out = open("calib/grid1_results.tsv", "w", buffering=1)
out.write("kind\tsrc_noise\tsrc_drop\tctc_w\tsrc_recall\ttgt_recall\tsecs\n")

obj = make_object("box", seed=1, n_points=128)
for src_noise, src_drop, w in itertools.product((0.02, 0.05), (0.0, 0.03), (0.0, 0.03, 0.1)):
    src = make_domain_config(0.0, src_noise, src_drop, seed=1)
    tgt = make_domain_config(0.8, 0.06, 0.02, seed=2)
    ds = make_dataset(660, 330, [obj], cam, src, tgt, seed=0)
    netcfg = NetworkConfig(obs_dim=ds.obs_dim, n_rot=60, n_vx=20, n_vy=20, n_z=40)
    net = PoseNetwork(netcfg, seed=0)
    ocfg = ObjectiveConfig(target_graph=tg, ctc_weight=w)
    t0 = time.time()
    train_teacher(ds.source, net, anchors, obj, cam, ocfg, stc, seed=0)
    rs = average_recall(evaluate_pose_net(net, ds.source, obj, anchors, cam))
    rt = average_recall(evaluate_pose_net(net, ds.target, obj, anchors, cam))
    out.write(f"box\t{src_noise}\t{src_drop}\t{w}\t{rs:.1f}\t{rt:.1f}\t{time.time()-t0:.0f}\n")
out.close()
print("done")
