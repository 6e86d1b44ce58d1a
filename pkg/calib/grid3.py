"""Size-channel-targeted domain shift: teacher ablation + one student chain."""
import time

import numpy as np

from poseadapt.losses import ObjectiveConfig, build_target_graph
from poseadapt.network import NetworkConfig, PoseNetwork
from poseadapt.synth import make_object, make_dataset, make_domain_config, evaluation_access
from poseadapt.geometry import AnchorSet, CameraIntrinsics
from poseadapt.selftrain import SelfTrainConfig, train_teacher, train_student
from poseadapt.experiment import evaluate_pose_net
from poseadapt.metrics import average_recall

cam = CameraIntrinsics(600, 600, 320, 240)
anchors = AnchorSet.build(60, 20, 20, 40, seed=0)
tg = build_target_graph(anchors.bins_z, 0.0, 2.0)
out = open("calib/grid3_results.tsv", "w", buffering=1)
out.write("gen_off\tsize_off\tctc_w\tstage\tsrc\ttgt\n")

obj = make_object("box", seed=1, n_points=128)
src = make_domain_config(0.0, 0.02, 0.0, seed=1)

for gen_off, size_off in ((0.3, 1.5), (0.3, 3.0), (0.6, 2.0)):
    tgt = make_domain_config(gen_off, 0.06, 0.02, seed=2, size_offset=size_off)
    ds = make_dataset(660, 330, [obj], cam, src, tgt, seed=0)
    netcfg = NetworkConfig(obs_dim=ds.obs_dim, n_rot=60, n_vx=20, n_vy=20, n_z=40)
    for w in (0.0, 0.03):
        net = PoseNetwork(netcfg, seed=0)
        ocfg = ObjectiveConfig(target_graph=tg, ctc_weight=w)
        train_teacher(ds.source, net, anchors, obj, cam, ocfg,
                      SelfTrainConfig(teacher_epochs=90), seed=0)
        rs = average_recall(evaluate_pose_net(net, ds.source, obj, anchors, cam))
        rt = average_recall(evaluate_pose_net(net, ds.target, obj, anchors, cam))
        out.write(f"{gen_off}\t{size_off}\t{w}\tteacher\t{rs:.1f}\t{rt:.1f}\n")
        # student chain from this teacher
        stc = SelfTrainConfig(teacher_epochs=90, student_epochs=8, rounds=5,
                              lr_student=3e-5)
        student, rounds = train_student(net, ds.source, ds.target, anchors, obj,
                                        cam, ocfg, stc, seed=0)
        ss = average_recall(evaluate_pose_net(student, ds.source, obj, anchors, cam))
        st = average_recall(evaluate_pose_net(student, ds.target, obj, anchors, cam))
        sel = [r.n_selected for r in rounds]
        out.write(f"{gen_off}\t{size_off}\t{w}\tstudent\t{ss:.1f}\t{st:.1f}\t# sel={sel}\n")
out.close()
print("done")
