"""Command-line pipeline: simulate, fit, calibrate, detect, eval, sweep, spectrum.

A typical desk-scale run:

    pda simulate --preset default --out-dir work/
    pda fit --in work/reference.pdaf --out work/model.pdam --seed 7
    pda calibrate --pseudo work/calib.pdaf --model work/model.pdam \
        --ref work/model.pdam --k 20 --q 95 --out work/pipeline.pdam
    pda detect --in work/test_raw.pdaf --pipeline work/pipeline.pdam \
        --regen "pda regen-lookup --raw work/test_raw.pdaf --regen work/test_regen.pdaf {in} {out}" \
        --report work/report.tsv
    pda eval --report work/report.tsv --labels work/labels.tsv --out-dir work/eval

Report paths render matplotlib figures next to the delimited output unless
--no-figures is given.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import container
from .calibration import calibrate_threshold
from .detector import Pipeline, command_regenerator, detect_batch, paired_regenerator
from .featstore import PairedSet, load_feature_file, save_feature_file
from .harness import (
    PipelineSettings,
    SweepSpec,
    average_fourier_spectrum,
    evaluate,
    read_pgm,
    read_report,
    run_sweep,
    write_eval_table,
    write_histogram_data,
    write_matrix,
    write_report,
    write_scatter_data,
    write_sweep_table,
)
from .knnindex import KnnConfig, ReferenceSet
from .pruning import PruneConfig
from .reduction import TsneConfig, fit_pca, fit_tsne
from .simulator import (
    config_from_json,
    config_to_json,
    default_world_config,
    outlier_world_config,
    sample_world,
    wukong_world_config,
)

_PRESETS = {
    "default": default_world_config,
    "wukong": wukong_world_config,
    "outlier": outlier_world_config,
}


def _add_figures_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")


def _parse_prune(args) -> PruneConfig | None:
    if getattr(args, "no_prune", False):
        return None
    return PruneConfig(args.prune_p)


def _tsne_config(args) -> TsneConfig:
    return TsneConfig(
        perplexity=args.perplexity,
        iterations=args.tsne_iters,
        exaggeration_factor=args.exaggeration,
        exaggeration_iters=args.exaggeration_iters,
        learning_rate=args.learning_rate,
        seed=args.seed,
        standardize=not args.no_standardize,
    )


def _add_reduction_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--reduce", choices=("tsne", "pca"), default="tsne")
    p.add_argument("--prune-p", type=float, default=90.0, help="pruning percentile")
    p.add_argument("--no-prune", action="store_true", help="disable activation pruning")
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--tsne-iters", type=int, default=1000)
    p.add_argument("--exaggeration", type=float, default=12.0)
    p.add_argument("--exaggeration-iters", type=int, default=250)
    p.add_argument("--learning-rate", type=float, default=200.0)
    p.add_argument("--no-standardize", action="store_true")
    p.add_argument("--seed", type=int, default=0)


def _cmd_simulate(args) -> int:
    if args.preset:
        cfg = _PRESETS[args.preset]()
    else:
        cfg = config_from_json(Path(args.config))
    world = sample_world(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(config_to_json(cfg), encoding="utf-8")
    save_feature_file(world.reference_pool, out / "reference.pdaf")
    save_feature_file(world.calibration_pseudo, out / "calib.pdaf")
    save_feature_file(world.calibration_reals, out / "calib_raw.pdaf")
    save_feature_file(world.test.raw, out / "test_raw.pdaf")
    save_feature_file(world.test.regenerated, out / "test_regen.pdaf")
    lines = ["id\tlabel"] + [f"{i}\t{lab}" for i, lab in enumerate(world.test_labels)]
    (out / "labels.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"world written to {out} (reference {len(world.reference_pool)}, "
          f"calibration {len(world.calibration_pseudo)}, test {len(world.test)})")
    return 0


def _cmd_fit(args) -> int:
    fset = load_feature_file(args.infile)
    prune = _parse_prune(args)
    inputs = fset
    if prune is not None:
        from .pruning import prune_set

        inputs = prune_set(fset, prune)
    if args.reduce == "tsne":
        model = fit_tsne(inputs, _tsne_config(args))
    else:
        model = fit_pca(inputs, standardize=not args.no_standardize)
    ref = ReferenceSet(model.fitted_points, origin=fset.source)
    container.save_fit_bundle(args.out, model, ref, prune)
    extra = ""
    if model.kl_trace is not None:
        extra = f", KL {model.kl_trace[0]:.4f} -> {model.kl_trace[-1]:.4f}"
    print(f"fitted {args.reduce} model on {len(fset)} x {fset.dim} -> {args.out}{extra}")
    return 0


def _cmd_calibrate(args) -> int:
    pseudo = load_feature_file(args.pseudo)
    model = container.load_model(args.model)
    ref = container.load_reference(args.ref)
    prune, _ = container.load_pipe_settings(args.model)
    knn = KnnConfig(args.k)
    threshold = calibrate_threshold(pseudo, model, ref, knn, args.q, prune)
    pipeline = Pipeline(prune=prune, model=model, ref=ref, knn=knn, threshold=threshold)
    container.save_pipeline(args.out, pipeline)
    print(f"tau = {threshold.tau:.6g} (q={args.q}, m={threshold.m}, k={args.k}) -> {args.out}")
    return 0


def _cmd_detect(args) -> int:
    fset = load_feature_file(args.infile)
    pipeline = container.load_pipeline(args.pipeline)
    regen = command_regenerator(args.regen, timeout=args.regen_timeout)
    batch = detect_batch(fset, pipeline, regen)
    write_report(args.report, batch.verdicts, errors=batch.errors)
    n_ok = sum(v is not None for v in batch.verdicts)
    stage1 = sum(1 for v in batch.verdicts if v is not None and v.stage == 1)
    print(f"detected {n_ok}/{len(fset)} samples ({stage1} at stage 1, "
          f"{len(batch.errors)} errors) -> {args.report}")
    if not args.no_figures and n_ok:
        from . import plots

        d_raw = {"all samples": np.array([v.d_raw for v in batch.verdicts if v])}
        d2 = [v.d_regen for v in batch.verdicts if v and v.d_regen is not None]
        if d2:
            d_raw["regenerated (stage 2)"] = np.array(d2)
        fig_path = Path(args.report).with_suffix(".png")
        plots.distance_histogram(fig_path, d_raw, tau=pipeline.threshold.tau)
        print(f"figure -> {fig_path}")
    return 0


def _cmd_regen_lookup(args) -> int:
    pairs = PairedSet(
        raw=load_feature_file(args.raw), regenerated=load_feature_file(args.regen)
    )
    regen = paired_regenerator(pairs)
    batch = load_feature_file(args.infile)
    out = regen.regen_batch(batch)
    save_feature_file(out, args.outfile)
    return 0


def _read_labels(path: str | Path) -> dict[str, str]:
    labels: dict[str, str] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#") or line == "id\tlabel":
            continue
        sid, lab = line.split("\t")
        labels[sid] = lab
    return labels


def _cmd_eval(args) -> int:
    ids, verdicts = read_report(args.report)
    label_map = _read_labels(args.labels)
    try:
        labels = [label_map[i] for i in ids]
    except KeyError as exc:
        print(f"error: report id {exc} missing from {args.labels}", file=sys.stderr)
        return 1
    result = evaluate(verdicts, labels)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_eval_table(out / "eval.tsv", result)

    truths = ["real" if lab == "real" else "fake" for lab in labels]
    raw_groups = {
        t: np.array([v.d_raw for v, tt in zip(verdicts, truths) if tt == t])
        for t in ("real", "fake")
    }
    tau = verdicts[0].tau if verdicts else None
    write_histogram_data(out / "hist_d_raw.tsv", raw_groups, tau=tau)
    regen_groups = {
        t: np.array(
            [v.d_regen for v, tt in zip(verdicts, truths) if tt == t and v.d_regen is not None]
        )
        for t in ("real", "fake")
    }
    regen_groups = {t: v for t, v in regen_groups.items() if v.size}
    if regen_groups:
        write_histogram_data(out / "hist_d_regen.tsv", regen_groups, tau=tau)

    scatter = None
    if args.pipeline and args.infile:
        from .calibration import pipeline_embed

        pipeline = container.load_pipeline(args.pipeline)
        fset = load_feature_file(args.infile)
        matrix = fset.as_float64()
        scatter = np.array(
            [pipeline_embed(matrix[i], pipeline.prune, pipeline.model) for i in range(len(fset))]
        )
        write_scatter_data(out / "scatter.tsv", scatter, labels)

    print(f"accuracy {result.acc:.2f}% "
          f"(stage1 {result.n_correct_stage1}, stage2 {result.n_correct_stage2}, "
          f"n {result.n_total}) -> {out}")
    if not args.no_figures:
        from . import plots

        plots.distance_histogram(out / "hist_d_raw.png", raw_groups, tau=tau,
                                 title="raw-space kNN distances")
        if regen_groups:
            plots.distance_histogram(out / "hist_d_regen.png", regen_groups, tau=tau,
                                     title="regenerated-space kNN distances")
        if scatter is not None:
            pipeline = container.load_pipeline(args.pipeline)
            plots.embedding_scatter(out / "scatter.png", scatter, labels,
                                    ref_points=pipeline.ref.points)
    return 0


def _parse_sweep_values(axis: str, raw: str) -> tuple:
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if axis == "k":
        return tuple(int(p) for p in parts)
    if axis == "q":
        return tuple(float(p) for p in parts)
    if axis == "prune":
        out = []
        for p in parts:
            low = p.lower()
            if low in ("on", "true", "yes"):
                out.append(True)
            elif low in ("off", "false", "no", "none"):
                out.append(False)
            else:
                out.append(float(p))
        return tuple(out)
    return tuple(parts)


def _cmd_sweep(args) -> int:
    if args.preset:
        cfg = _PRESETS[args.preset]()
    else:
        cfg = config_from_json(Path(args.world_config))
    world = sample_world(cfg)
    base = PipelineSettings(
        prune_p=None if args.no_prune else args.prune_p,
        reduce=args.reduce,
        tsne=_tsne_config(args),
        k=args.k,
        q=args.q,
        reembed_joint=args.reembed_joint,
    )
    spec = SweepSpec(axis=args.axis, values=_parse_sweep_values(args.axis, args.values), base=base)
    cells = run_sweep(spec, world)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_sweep_table(out / "sweep.tsv", args.axis, cells)
    for c in cells:
        summary = f"acc {c.result.acc:.2f}% tau {c.tau:.4g}" if c.result else f"error: {c.error}"
        print(f"{args.axis} = {c.value}: {summary}")
    if not args.no_figures:
        from . import plots

        plots.sweep_curve(out / "sweep.png", args.axis, cells)
    print(f"sweep table -> {out / 'sweep.tsv'}")
    return 0


def _cmd_spectrum(args) -> int:
    in_dir = Path(args.indir)
    paths = sorted(in_dir.glob("*.pgm"))
    if not paths:
        print(f"error: no PGM (P5) images in {in_dir}", file=sys.stderr)
        return 1
    images = [read_pgm(p) for p in paths]
    spectrum = average_fourier_spectrum(images)
    write_matrix(args.out, spectrum)
    print(f"averaged {len(images)} spectra ({images[0].shape[0]}x{images[0].shape[1]}) "
          f"-> {args.out}")
    if not args.no_figures:
        from . import plots

        fig_path = Path(args.fig) if args.fig else Path(args.out).with_suffix(".png")
        plots.spectrum_heatmap(fig_path, spectrum)
        print(f"figure -> {fig_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pda",
        description="real-vs-generated detection via kNN distance to a known-fake "
                    "reference, before and after regeneration",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="sample a synthetic feature-space world")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="world config JSON document")
    src.add_argument("--preset", choices=sorted(_PRESETS))
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", help="fit the reduction on a reference feature file")
    p.add_argument("--in", dest="infile", required=True, metavar="PDAF")
    p.add_argument("--out", required=True, metavar="PDAM")
    _add_reduction_flags(p)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("calibrate", help="derive tau from pseudo-fake features")
    p.add_argument("--pseudo", required=True, metavar="PDAF")
    p.add_argument("--model", required=True, metavar="PDAM")
    p.add_argument("--ref", required=True, metavar="PDAM")
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--q", type=float, default=95.0)
    p.add_argument("--out", required=True, metavar="PDAM")
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("detect", help="classify a feature file with a pipeline bundle")
    p.add_argument("--in", dest="infile", required=True, metavar="PDAF")
    p.add_argument("--pipeline", required=True, metavar="PDAM")
    p.add_argument("--regen", required=True,
                   help='regeneration command template, e.g. "cmd {in} {out}"')
    p.add_argument("--report", required=True)
    p.add_argument("--regen-timeout", type=float, default=600.0)
    _add_figures_flag(p)
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("regen-lookup",
                       help="paired-lookup regenerator (for simulated worlds)")
    p.add_argument("--raw", required=True, metavar="PDAF")
    p.add_argument("--regen", required=True, metavar="PDAF")
    p.add_argument("infile", metavar="IN.pdaf")
    p.add_argument("outfile", metavar="OUT.pdaf")
    p.set_defaults(func=_cmd_regen_lookup)

    p = sub.add_parser("eval", help="score a detection report against labels")
    p.add_argument("--report", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--pipeline", help="pipeline bundle, enables embedding scatter")
    p.add_argument("--in", dest="infile", help="raw features for the scatter")
    _add_figures_flag(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="ablation sweep over k, q, prune, or reduce")
    p.add_argument("--axis", choices=("k", "q", "prune", "reduce"), required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--world-config", help="world config JSON document")
    src.add_argument("--preset", choices=sorted(_PRESETS))
    p.add_argument("--out-dir", required=True)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--q", type=float, default=95.0)
    p.add_argument("--reembed-joint", action="store_true",
                   help="diagnostic: transductive refit per batch instead of "
                        "out-of-sample embedding (excluded from acceptance)")
    _add_reduction_flags(p)
    _add_figures_flag(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("spectrum", help="average Fourier spectrum of PGM images")
    p.add_argument("--in", dest="indir", required=True)
    p.add_argument("--out", required=True, help="output matrix TSV")
    p.add_argument("--fig", help="figure path (default: alongside --out)")
    _add_figures_flag(p)
    p.set_defaults(func=_cmd_spectrum)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
