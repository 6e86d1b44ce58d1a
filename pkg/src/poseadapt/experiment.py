"""End-to-end experiment orchestration used by the command line.

A run directory is driven entirely by one RunConfig: dataset generation,
per-object teacher/student training (or the ablation variants), and
evaluation reports all derive their randomness from configured seeds.
"""

from __future__ import annotations

import os

import numpy as np

from .config import RunConfig, save_config
from .errors import DependencyError, InvalidArgumentError
from .geometry import AnchorSet, CameraIntrinsics, generate_translation_bins
from .losses import ObjectiveConfig, build_target_graph
from .metrics import average_recall, evaluate_pose, predict_poses, scalar_mae
from .network import NetworkConfig, PoseNetwork, load_checkpoint, save_checkpoint
from .reports import (
    ensure_dir,
    write_loss_curve,
    write_pseudo_cache,
    write_recall_table,
    write_round_stats,
    write_series,
    write_sweep,
)
from .selftrain import pseudo_label, train_student, train_teacher
from .synth import (
    SCALAR_RANGE,
    Dataset,
    evaluation_access,
    load_dataset,
    make_dataset,
    make_domain_config,
    make_object,
    make_scalar_task,
    save_dataset,
    ScalarShiftConfig,
)

STAGES = ("teacher", "student", "baseline-regression", "no-ctc")

_STAGE_PREFIX = {
    "teacher": "teacher",
    "no-ctc": "teacher-noctc",
    "baseline-regression": "baseline",
    "student": "student",
}


# ---------------------------------------------------------------------------
# assembly helpers


def build_camera(cfg: RunConfig) -> CameraIntrinsics:
    fx, fy, cx, cy = cfg.data.camera
    return CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy)


def build_anchors(cfg: RunConfig, scalar=False, single=False) -> AnchorSet:
    a = cfg.anchors
    if scalar:
        n_z = 1 if single else cfg.data.scalar_bins
        return AnchorSet(
            rotations=np.eye(3)[None],
            bins_vx=generate_translation_bins(-1.0, 1.0, 1),
            bins_vy=generate_translation_bins(-1.0, 1.0, 1),
            bins_z=generate_translation_bins(SCALAR_RANGE[0], SCALAR_RANGE[1], n_z),
            vx_range=(-1.0, 1.0), vy_range=(-1.0, 1.0), z_range=SCALAR_RANGE)
    if single:
        return AnchorSet.single(a.vx_range, a.vy_range, a.z_range)
    return AnchorSet.build(a.n_rot, a.n_vx, a.n_vy, a.n_z,
                           a.vx_range, a.vy_range, a.z_range, a.seed)


def build_network_config(cfg: RunConfig, obs_dim, anchors: AnchorSet,
                         scalar=False) -> NetworkConfig:
    n = cfg.network
    if scalar:
        return NetworkConfig(obs_dim=obs_dim, n_rot=0, n_vx=0, n_vy=0,
                             n_z=len(anchors.bins_z), feature_dim=n.feature_dim,
                             encoder_hidden=tuple(n.encoder_hidden),
                             head_hidden=n.head_hidden)
    return NetworkConfig(obs_dim=obs_dim, n_rot=anchors.n_rot,
                         n_vx=len(anchors.bins_vx), n_vy=len(anchors.bins_vy),
                         n_z=len(anchors.bins_z), feature_dim=n.feature_dim,
                         encoder_hidden=tuple(n.encoder_hidden), head_hidden=n.head_hidden)


def build_objective(cfg: RunConfig, anchors: AnchorSet, stage) -> ObjectiveConfig:
    use_cls = stage != "baseline-regression"
    use_ctc = cfg.train.use_ctc and stage not in ("baseline-regression", "no-ctc")
    k_rot, k_z, k_vxvy = cfg.scores.k_rot, cfg.scores.k_z, cfg.scores.k_vxvy
    if stage == "baseline-regression":
        k_rot = k_z = k_vxvy = 1
    else:
        k_rot = min(k_rot, anchors.n_rot)
        k_z = min(k_z, len(anchors.bins_z))
        k_vxvy = min(k_vxvy, len(anchors.bins_vx), len(anchors.bins_vy))
    tg = build_target_graph(anchors.bins_z, anchors.z_range[0], anchors.z_range[1])
    return ObjectiveConfig(labels=cfg.scores.label_config(), k_rot=k_rot, k_z=k_z,
                           k_vxvy=k_vxvy, use_cls=use_cls,
                           ctc_weight=cfg.train.ctc_weight if use_ctc else 0.0,
                           target_graph=tg)


# ---------------------------------------------------------------------------
# gen-data


def run_gen_data(cfg: RunConfig, log=print):
    """Generate and save the benchmark dataset; returns its path."""
    ensure_dir(cfg.out_dir)
    save_config(os.path.join(cfg.out_dir, "config.json"), cfg)
    d = cfg.data
    if cfg.scalar_task:
        shift = ScalarShiftConfig(
            source=make_domain_config(0.0, d.scalar_source_noise, 0.0, seed=cfg.seed + 11),
            target=make_domain_config(d.scalar_target_offset, d.scalar_target_noise, 0.0,
                                      seed=cfg.seed + 12))
        ds = make_scalar_task(d.n_source, d.n_target, shift, seed=cfg.seed)
    else:
        objects = [make_object(kind, seed=d.object_seed + i, n_points=d.n_points)
                   for i, kind in enumerate(d.object_kinds)]
        source_cfg = make_domain_config(d.source_offset, d.source_noise,
                                        d.source_dropout, seed=cfg.seed + 1)
        target_cfg = make_domain_config(d.target_offset, d.target_noise,
                                        d.target_dropout, seed=cfg.seed + 2)
        ds = make_dataset(d.n_source, d.n_target, objects, build_camera(cfg),
                          source_cfg, target_cfg, seed=cfg.seed,
                          object_kinds=list(d.object_kinds),
                          sample_ranges={"vx": d.vx_sample_range,
                                         "vy": d.vy_sample_range,
                                         "z": d.z_sample_range})
    path = cfg.dataset_path()
    ensure_dir(os.path.dirname(path) or ".")
    save_dataset(path, ds)
    log(f"dataset: {path} kind={ds.kind} source={d.n_source} target={d.n_target} "
        f"objects={len(ds.objects)} seed={cfg.seed}")
    return path


def load_dataset_or_fail(cfg: RunConfig) -> Dataset:
    path = cfg.dataset_path()
    if not os.path.exists(path):
        raise DependencyError(f"dataset {path} not found; run gen-data first")
    return load_dataset(path)


# ---------------------------------------------------------------------------
# evaluation helpers


def evaluate_pose_net(net, samples, model, anchors, cam):
    """EvalRecords for a network over samples of one object."""
    if not samples:
        return []
    obs = np.stack([s.observation for s in samples])
    poses, _ = predict_poses(net, obs, anchors, cam)
    with evaluation_access():
        return [evaluate_pose(poses[i], s.gt_pose, model, sample_id=s.id)
                for i, s in enumerate(samples)]


def recall_by_object(nets, ds: Dataset, anchors, cam, domain):
    """Per-object (name, count, recall) rows plus the record lists."""
    rows, all_records = [], {}
    for i, net in enumerate(nets):
        samples = ds.by_object(i, domain)
        records = evaluate_pose_net(net, samples, ds.objects[i], anchors, cam)
        name = ds.object_kinds[i] or f"object{i}"
        rows.append((f"{name}{i}", len(records),
                     average_recall(records) if records else None))
        all_records[i] = records
    return rows, all_records


def mean_recall(rows):
    vals = [r[2] for r in rows if r[2] is not None]
    return sum(vals) / len(vals) if vals else None


def scalar_predictions(net, samples, anchors, cam):
    obs = np.stack([s.observation for s in samples])
    poses, _ = predict_poses(net, obs, anchors, cam)
    predicted = [p.z for p in poses]
    with evaluation_access():
        actual = [s.gt_pose.z for s in samples]
    return predicted, actual


# ---------------------------------------------------------------------------
# train


def run_train(cfg: RunConfig, stage, log=print):
    """Run one training stage and write its reports; returns a summary."""
    if stage not in STAGES:
        raise InvalidArgumentError(f"unknown stage {stage!r}; choose from {STAGES}")
    ds = load_dataset_or_fail(cfg)
    ensure_dir(cfg.out_dir)
    save_config(os.path.join(cfg.out_dir, f"config_{stage}.json"), cfg)
    if ds.kind == "scalar":
        return _train_scalar(cfg, ds, stage, log)
    return _train_pose(cfg, ds, stage, log)


def _teacher_stage_for_student(cfg: RunConfig):
    return "teacher" if cfg.train.use_ctc else "no-ctc"


def _ckpt_path(out_dir, stage, obj_id):
    return os.path.join(out_dir, f"{_STAGE_PREFIX[stage]}_obj{obj_id}.ckpt")


def _train_pose(cfg: RunConfig, ds: Dataset, stage, log):
    scalar = False
    single = stage == "baseline-regression"
    anchors = build_anchors(cfg, scalar=scalar, single=single)
    cam = ds.cam
    objective = build_objective(cfg, anchors, stage)
    st_cfg = cfg.train.selftrain_config()
    nets, checkpoints, round_stats = [], [], {}
    for i, model in enumerate(ds.objects):
        source = ds.by_object(i, "source")
        target = ds.by_object(i, "target")
        net_cfg = build_network_config(cfg, ds.obs_dim, anchors, scalar=scalar)
        if stage == "student":
            teacher_stage = _teacher_stage_for_student(cfg)
            tpath = _ckpt_path(cfg.out_dir, teacher_stage, i)
            if not os.path.exists(tpath):
                raise DependencyError(
                    f"student stage needs {tpath}; run --stage {teacher_stage} first")
            teacher, _, _, _ = load_checkpoint(tpath, expected_config=net_cfg)

            def sink(r, labels, _i=i):
                write_pseudo_cache(
                    os.path.join(cfg.out_dir, f"pseudo_student_obj{_i}_round{r}.tsv"),
                    labels, r)

            student, rounds = train_student(
                teacher, source, target, anchors, model, cam, objective, st_cfg,
                seed=cfg.seed + 100 + i, label_sink=sink)
            nets.append(student)
            round_stats[i] = rounds
            stats = None
        else:
            net = PoseNetwork(net_cfg, seed=cfg.network.seed + i)
            stats = train_teacher(source, net, anchors, model, cam, objective,
                                  st_cfg, seed=cfg.seed + 10 + i)
            nets.append(net)
            write_loss_curve(os.path.join(cfg.out_dir, f"loss_{_STAGE_PREFIX[stage]}_obj{i}.tsv"),
                             stats)
        path = _ckpt_path(cfg.out_dir, stage, i)
        save_checkpoint(path, nets[-1], meta={"stage": stage, "object_id": i,
                                              "kind": "pose"})
        checkpoints.append(path)
        log(f"{stage}: object {i} trained"
            + (f", final loss {stats.final_loss:.4f}" if stats and stats.final_loss is not None else ""))

    summary = {"stage": stage, "checkpoints": checkpoints, "recall": {}}
    for domain in ("source", "target"):
        rows, records = recall_by_object(nets, ds, anchors, cam, domain)
        write_recall_table(os.path.join(cfg.out_dir, f"recall_{_STAGE_PREFIX[stage]}_{domain}.tsv"),
                           rows)
        summary["recall"][domain] = mean_recall(rows)
        log(f"{stage}: {domain} mean recall "
            + (f"{summary['recall'][domain]:.2f}%" if summary["recall"][domain] is not None else "n/a"))
    if stage == "student":
        _write_student_round_reports(cfg, ds, anchors, cam, round_stats)
        summary["rounds"] = round_stats
    return summary


def _write_student_round_reports(cfg, ds, anchors, cam, round_stats):
    """Per-round selection statistics with the selected subset's recall."""
    for i, rounds in round_stats.items():
        model = ds.objects[i]
        rows = []
        with evaluation_access():
            gt = {s.id: s.gt_pose for s in ds.by_object(i, "target")}
        for r in rounds:
            recall = None
            if r.n_selected > 0:
                cache = os.path.join(cfg.out_dir, f"pseudo_student_obj{i}_round{r.round_index}.tsv")
                poses = _read_pseudo_poses(cache)
                records = [evaluate_pose(poses[sid], gt[sid], model, sample_id=sid)
                           for sid in r.selected_ids]
                recall = average_recall(records)
            rows.append((r.round_index, r.tau, r.n_candidates, r.n_selected, recall))
        write_round_stats(os.path.join(cfg.out_dir, f"rounds_student_obj{i}.tsv"), rows)


def _read_pseudo_poses(path):
    from .geometry import Pose
    poses = {}
    with open(path) as f:
        lines = f.read().splitlines()[1:]
    for line in lines:
        parts = line.split("\t")
        sid = parts[0]
        vals = [float(v) for v in parts[1:14]]
        poses[sid] = Pose(np.array(vals[:9]).reshape(3, 3), np.array(vals[9:12]))
    return poses


def _train_scalar(cfg: RunConfig, ds: Dataset, stage, log):
    single = stage == "baseline-regression"
    anchors = build_anchors(cfg, scalar=True, single=single)
    cam = ds.cam
    objective = build_objective(cfg, anchors, stage)
    st_cfg = cfg.train.selftrain_config()
    model = ds.objects[0]
    source, target = ds.source, ds.target
    net_cfg = build_network_config(cfg, ds.obs_dim, anchors, scalar=True)
    if stage == "student":
        teacher_stage = _teacher_stage_for_student(cfg)
        tpath = _ckpt_path(cfg.out_dir, teacher_stage, 0)
        if not os.path.exists(tpath):
            raise DependencyError(
                f"student stage needs {tpath}; run --stage {teacher_stage} first")
        teacher, _, _, _ = load_checkpoint(tpath, expected_config=net_cfg)

        def sink(r, labels):
            write_pseudo_cache(os.path.join(cfg.out_dir, f"pseudo_student_obj0_round{r}.tsv"),
                               labels, r)

        net, rounds = train_student(teacher, source, target, anchors, model, cam,
                                    objective, st_cfg, seed=cfg.seed + 100,
                                    label_sink=sink)
    else:
        net = PoseNetwork(net_cfg, seed=cfg.network.seed)
        stats = train_teacher(source, net, anchors, model, cam, objective, st_cfg,
                              seed=cfg.seed + 10)
        write_loss_curve(os.path.join(cfg.out_dir, f"loss_{_STAGE_PREFIX[stage]}_obj0.tsv"),
                         stats)
    path = _ckpt_path(cfg.out_dir, stage, 0)
    save_checkpoint(path, net, meta={"stage": stage, "object_id": 0, "kind": "scalar"})
    summary = {"stage": stage, "checkpoints": [path], "mae": {}}
    rows = []
    for domain in ("source", "target"):
        samples = ds.split(domain)
        predicted, actual = scalar_predictions(net, samples, anchors, cam)
        mae = scalar_mae(predicted, actual)
        summary["mae"][domain] = mae
        rows.append((domain, len(samples), mae))
        log(f"{stage}: {domain} MAE {mae:.4f}")
    from .reports import _write_rows
    _write_rows(os.path.join(cfg.out_dir, f"mae_{_STAGE_PREFIX[stage]}.tsv"),
                ("domain", "count", "mae"), rows)
    return summary


# ---------------------------------------------------------------------------
# eval


def run_eval(cfg: RunConfig, checkpoint, log=print):
    """Evaluation-only pass of one checkpoint over the configured dataset."""
    ds = load_dataset_or_fail(cfg)
    if not os.path.exists(checkpoint):
        raise DependencyError(f"checkpoint {checkpoint} not found")
    scalar = ds.kind == "scalar"
    net, _, _, meta = load_checkpoint(checkpoint)
    stage = meta.get("stage", "teacher")
    single = stage == "baseline-regression"
    anchors = build_anchors(cfg, scalar=scalar, single=single)
    expected = build_network_config(cfg, ds.obs_dim, anchors, scalar=scalar)
    if net.config != expected:
        from .errors import CheckpointIncompatibleError
        raise CheckpointIncompatibleError(
            f"checkpoint network {net.config} does not match config-derived {expected}")
    ensure_dir(cfg.out_dir)
    obj = int(meta.get("object_id", 0))
    cam = ds.cam
    summary = {"checkpoint": checkpoint, "object_id": obj}
    if scalar:
        rows = []
        for domain in ("source", "target"):
            predicted, actual = scalar_predictions(net, ds.split(domain), anchors, cam)
            rows.append((domain, len(predicted), scalar_mae(predicted, actual)))
        from .reports import _write_rows
        _write_rows(os.path.join(cfg.out_dir, "mae_eval.tsv"), ("domain", "count", "mae"), rows)
        summary["mae"] = {r[0]: r[2] for r in rows}
        log(f"eval: MAE source {rows[0][2]:.4f} target {rows[1][2]:.4f}")
        return summary
    model = ds.objects[obj]
    summary["recall"] = {}
    for domain in ("source", "target"):
        samples = ds.by_object(obj, domain)
        records = evaluate_pose_net(net, samples, model, anchors, cam)
        rec = average_recall(records) if records else None
        name = ds.object_kinds[obj] or f"object{obj}"
        write_recall_table(os.path.join(cfg.out_dir, f"recall_eval_{domain}.tsv"),
                           [(f"{name}{obj}", len(records), rec)])
        summary["recall"][domain] = rec
        log(f"eval: {domain} recall " + (f"{rec:.2f}%" if rec is not None else "n/a"))
    return summary


# ---------------------------------------------------------------------------
# threshold sweep


def run_sweep(cfg: RunConfig, log=print, taus=None, stage="teacher"):
    """Sweep the selection threshold over teacher pseudo labels.

    For each confidence source (per-branch max probability) and each tau,
    report the pooled recall of ADD(-S) hits among selected samples.
    """
    ds = load_dataset_or_fail(cfg)
    if ds.kind == "scalar":
        raise InvalidArgumentError("threshold sweep expects a pose dataset")
    anchors = build_anchors(cfg)
    cam = ds.cam
    taus = list(taus if taus is not None else np.round(np.linspace(0.0, 0.95, 20), 6))
    ensure_dir(cfg.out_dir)
    # confidence + hit per target sample, pooled over objects
    per_branch_conf = {}
    hits = []
    for i, model in enumerate(ds.objects):
        tpath = _ckpt_path(cfg.out_dir, stage, i)
        if not os.path.exists(tpath):
            raise DependencyError(f"sweep needs {tpath}; run --stage {stage} first")
        net, _, _, _ = load_checkpoint(tpath)
        samples = ds.by_object(i, "target")
        if not samples:
            continue
        obs = np.stack([s.observation for s in samples])
        poses, out = predict_poses(net, obs, anchors, cam)
        from .metrics import confidence_scores
        conf = confidence_scores(out)
        with evaluation_access():
            for j, s in enumerate(samples):
                rec = evaluate_pose(poses[j], s.gt_pose, model, sample_id=s.id)
                hits.append(rec.hit)
        for branch, values in conf.items():
            per_branch_conf.setdefault(branch, []).extend(values.tolist())
    hits = np.array(hits, dtype=bool)
    curves = {}
    for branch, values in per_branch_conf.items():
        values = np.array(values)
        rows = []
        for tau in taus:
            sel = values > tau
            n = int(sel.sum())
            recall = float(100.0 * hits[sel].mean()) if n else None
            rows.append((float(tau), n, recall))
        write_sweep(os.path.join(cfg.out_dir, f"sweep_{branch}.tsv"), rows)
        pairs = [(r[0], r[2]) for r in rows if r[2] is not None]
        write_series(os.path.join(cfg.out_dir, f"sweep_{branch}_curve.tsv"), pairs,
                     x_name="tau", y_name="recall_pct")
        curves[branch] = rows
        log(f"sweep: {branch}: {sum(1 for r in rows if r[2] is not None)} nonempty taus")
    return curves
