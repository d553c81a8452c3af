"""Typer commands with Rich output."""

from __future__ import annotations

from collections.abc import Iterator
from contextlib import contextmanager
from pathlib import Path
from typing import Optional

import typer
from rich.console import Console
from rich.table import Table

from ctscroll import __version__
from ctscroll.config import configure_logging, get_settings
from ctscroll.errors import CTScrollError, ConfigError, VolumeIOError

app = typer.Typer(
    name="ctscroll",
    help="🩻  CT-Scroll: slice-sequence transformers for multi-label CT classification.",
    add_completion=False,
    no_args_is_help=True,
)
console = Console()

ConfigOption = typer.Option(None, "--config", "-c", help="Run-config JSON (toy defaults when omitted)")
VerboseOption = typer.Option(False, "--verbose", "-v", help="Verbose output")


def version_callback(value: bool) -> None:
    if value:
        typer.echo(f"ctscroll {__version__}")
        raise typer.Exit()


@app.callback()
def main(
    version: bool = typer.Option(False, "--version", "-V", callback=version_callback, is_eager=True),
) -> None:
    """CT-Scroll: read a CT volume as a scroll of slices, globally then locally."""


@contextmanager
def _guard() -> Iterator[None]:
    """Print library failures and exit with their code."""
    try:
        yield
    except CTScrollError as exc:
        console.print(f"❌ [red]{exc}[/red]")
        raise typer.Exit(exc.exit_code) from exc


def _setup(verbose: bool) -> None:
    configure_logging("DEBUG" if verbose else get_settings().log_level)


@app.command()
def synth(
    out: Path = typer.Option(..., "--out", "-o", help="Dataset directory"),
    config: Optional[Path] = ConfigOption,
    n: Optional[int] = typer.Option(None, "--n", help="Phantoms per split (overrides synth.n_per_split)"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Overrides synth.seed"),
    verbose: bool = VerboseOption,
) -> None:
    """Generate train/val/test phantom splits with RVOL volumes and JSON manifests."""
    _setup(verbose)
    from ctscroll.harness.dataset import make_dataset, read_manifest, validate_manifest
    from ctscroll.harness.runconfig import load_run_config

    with _guard():
        run = load_run_config(config)
        section = run.synth
        paths = make_dataset(
            out,
            n if n is not None else section.n_per_split,
            seed if seed is not None else section.seed,
            grid=section.grid,
            long_range_distance=section.long_range_distance,
        )
        table = Table(title="Phantom dataset")
        table.add_column("Split", style="cyan")
        table.add_column("Samples", justify="right")
        for name in ("Manifest", *run.model.names):
            table.add_column(name, justify="right" if name != "Manifest" else "left")
        for split, path in paths.items():
            manifest = read_manifest(path)
            labels = manifest.label_matrix()
            table.add_row(split.value, str(len(manifest.entries)), str(path),
                          *(str(int(c)) for c in labels.sum(axis=0)))
            result = validate_manifest(manifest, out)
            for err in result.errors:
                console.print(f"❌ [red]{split.value}: {err}[/red]")
            for warn in result.warnings:
                console.print(f"⚠️  [yellow]{split.value}: {warn}[/yellow]")
        console.print(table)


def _parse_shape(text: str) -> tuple[int, int, int]:
    try:
        shape = tuple(int(part) for part in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"Target shape must be three integers like 240,480,480, got '{text}'") from exc
    if len(shape) != 3:
        raise ConfigError(f"Target shape needs three sizes (z,y,x), got {len(shape)}")
    return shape  # type: ignore[return-value]


@app.command()
def preprocess(
    source: Path = typer.Option(..., "--in", "--volume", help="RVOL manifest (.json)"),
    out: Path = typer.Option(..., "--out", "-o", help="Canonical float32 dump (.f32)"),
    target_shape: Optional[str] = typer.Option(None, "--target-shape",
                                               help="z,y,x grid (overrides preprocess.target_shape)"),
    config: Optional[Path] = ConfigOption,
    verbose: bool = VerboseOption,
) -> None:
    """Resample, window, crop/pad and normalize one volume onto the canonical grid."""
    _setup(verbose)
    from pydantic import ValidationError

    from ctscroll.harness.runconfig import load_run_config
    from ctscroll.preprocess.io import read_rvol, write_canonical
    from ctscroll.preprocess.pipeline import PreprocessConfig, to_canonical
    from ctscroll.preprocess.volume import group_triplets

    with _guard():
        run = load_run_config(config)
        settings = run.preprocess
        if target_shape is not None:
            try:
                settings = PreprocessConfig.model_validate(
                    {**settings.model_dump(), "target_shape": _parse_shape(target_shape)}
                )
            except ValidationError as exc:
                raise ConfigError(f"Invalid target shape {target_shape}: {exc}") from exc
        raw = read_rvol(source)
        canonical = to_canonical(raw, settings)
        path = write_canonical(canonical, out)
        stack = group_triplets(canonical)
    console.print(f"✓ {raw.shape} @ {raw.spacing} mm → {canonical.shape} "
                  f"({stack.n_triplets} triplets) saved to [bold]{path}[/bold]")


@app.command()
def train(
    data: Path = typer.Option(..., "--data", "-d", help="Dataset directory or a split manifest"),
    out: Path = typer.Option(..., "--out", "-o", help="Run directory for checkpoints and loss trace"),
    config: Optional[Path] = ConfigOption,
    steps: Optional[int] = typer.Option(None, "--steps", help="Overrides train.steps"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Overrides train.seed"),
    init_from: Optional[Path] = typer.Option(None, "--init-from", help="Checkpoint to take backbone weights from"),
    verbose: bool = VerboseOption,
) -> None:
    """Train one model on the train split."""
    _setup(verbose)
    from ctscroll.harness.dataset import load_dataset
    from ctscroll.harness.runconfig import load_run_config
    from ctscroll.model.checkpoint import import_backbone_weights
    from ctscroll.model.network import CTScroll
    from ctscroll.training.data import ShuffledBatches
    from ctscroll.training.loop import train_loop

    with _guard():
        run = load_run_config(config)
        updates = {k: v for k, v in {"steps": steps, "seed": seed}.items() if v is not None}
        train_cfg = run.train.model_copy(update=updates)
        dataset, _ = load_dataset(data if data.is_file() else data / "train.json", run.preprocess)
        model = None
        if init_from is not None:
            model = CTScroll(run.model, seed=train_cfg.seed, dtype=get_settings().precision.value)
            import_backbone_weights(model, init_from)
        source = ShuffledBatches(dataset, train_cfg.batch_size, train_cfg.seed)
        console.print(f"\n🏋️  Training {run.model.reduction.value}/{run.model.interactions.value} "
                      f"for {train_cfg.steps} steps on {len(dataset)} volumes...")
        result = train_loop(run.model, source, train_cfg, out, model=model)
    last = f"{result.losses[-1]:.5f}" if result.losses else "n/a"
    console.print(f"✓ Final loss {last}; checkpoint saved to [bold]{result.checkpoint}[/bold]")


def _make_parent(path: Path) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise VolumeIOError(f"Cannot create {path.parent}: {exc}") from exc


def _metrics_table(report) -> Table:
    table = Table(title=f"Test metrics ({report.n_samples} volumes)")
    table.add_column("Label", style="cyan")
    for col in ("AUROC", "F1", "Precision", "Recall", "Accuracy", "Threshold", "Positives"):
        table.add_column(col, justify="right")
    for m in report.per_label:
        auc = f"{m.auroc:.4f}" if m.auroc_defined else "undefined"
        table.add_row(m.name, auc, f"{m.f1:.4f}", f"{m.precision:.4f}", f"{m.recall:.4f}",
                      f"{m.accuracy:.4f}", f"{m.threshold:.4f}", str(m.positive_count))
    macro = report.macro
    table.add_row("[bold]macro[/bold]", f"{macro['auroc']:.4f}", f"{macro['f1']:.4f}",
                  f"{macro['precision']:.4f}", f"{macro['recall']:.4f}", f"{macro['accuracy']:.4f}", "", "")
    return table


@app.command("eval")
def evaluate_cmd(
    out: Path = typer.Option(..., "--out", "-o", help="Report JSON; CSV, thresholds and predictions go beside it"),
    checkpoint: Optional[Path] = typer.Option(None, "--ckpt", "--checkpoint", "-k", help="CKPT manifest (.json)"),
    data: Optional[Path] = typer.Option(None, "--data", "-d", help="Dataset directory"),
    preds: Optional[Path] = typer.Option(None, "--preds", help="Test predictions CSV (skips the model)"),
    thresholds: Optional[Path] = typer.Option(None, "--thresholds", help="Thresholds JSON for --preds"),
    config: Optional[Path] = ConfigOption,
    verbose: bool = VerboseOption,
) -> None:
    """Report test metrics, from a checkpoint (thresholds picked on val) or from saved predictions."""
    _setup(verbose)
    from ctscroll.evaluation.predictions import read_predictions
    from ctscroll.evaluation.report import evaluate
    from ctscroll.evaluation.thresholds import read_thresholds
    from ctscroll.harness.experiment import load_experiment_data, score_model
    from ctscroll.harness.runconfig import load_run_config
    from ctscroll.model.checkpoint import load_checkpoint

    with _guard():
        if preds is not None:
            if thresholds is None:
                raise ConfigError("--preds needs --thresholds")
            chosen = read_thresholds(thresholds)
            report = evaluate(read_predictions(preds, chosen.label_names), chosen.thresholds)
            _make_parent(out)
            report.to_json(out)
            step = None
        elif checkpoint is not None and data is not None:
            run = load_run_config(config)
            model, step = load_checkpoint(checkpoint)
            report, _ = score_model(model, load_experiment_data(data, run.preprocess), out.parent, out.name)
        else:
            raise ConfigError("Give either --ckpt with --data, or --preds with --thresholds")
        report.to_csv(out.with_suffix(".csv"))
    console.print(_metrics_table(report))
    latency = f" │ {report.latency_ms:.1f} ms/volume" if report.latency_ms is not None else ""
    origin = f" │ checkpoint step {step}" if step is not None else ""
    console.print(f"Weighted F1 {report.weighted_f1:.4f}{latency}{origin}")
    console.print(f"✓ Report saved to [bold]{out}[/bold]")


@app.command()
def gradcam(
    checkpoint: Path = typer.Option(..., "--ckpt", "--checkpoint", "-k", help="CKPT manifest (.json)"),
    out: Path = typer.Option(..., "--out", "-o", help="Output directory for PGM maps"),
    volume: Optional[Path] = typer.Option(None, "--input", help="RVOL manifest of the volume to explain"),
    manifest: Optional[Path] = typer.Option(None, "--manifest", "-m", help="Split manifest holding the volume"),
    index: int = typer.Option(0, "--index", "-i", help="Entry of --manifest to explain"),
    label: Optional[list[int]] = typer.Option(None, "--label", "-l", help="Label index (repeatable)"),
    config: Optional[Path] = ConfigOption,
    verbose: bool = VerboseOption,
) -> None:
    """Per-triplet Grad-CAM heatmaps for one volume."""
    _setup(verbose)
    from ctscroll.errors import ShapeError
    from ctscroll.evaluation.gradcam import export_gradcam, grad_cam
    from ctscroll.harness.dataset import read_manifest
    from ctscroll.harness.runconfig import load_run_config
    from ctscroll.model.checkpoint import load_checkpoint
    from ctscroll.preprocess.io import read_rvol
    from ctscroll.preprocess.pipeline import preprocess_volume

    with _guard():
        if (volume is None) == (manifest is None):
            raise ConfigError("Give exactly one of --input or --manifest")
        run = load_run_config(config)
        model, _ = load_checkpoint(checkpoint)
        truth: list[int] | None = None
        if manifest is not None:
            split = read_manifest(manifest)
            if not 0 <= index < len(split.entries):
                raise ShapeError(f"Index {index} out of range for {len(split.entries)} entries")
            entry = split.entries[index]
            volume, title, truth = manifest.parent / entry.volume_path, entry.id, entry.labels
        else:
            title = volume.stem
        stack = preprocess_volume(read_rvol(volume), run.preprocess)
        labels = label or run.eval.gradcam_labels
        table = Table(title=f"Grad-CAM: {title}")
        table.add_column("Label", style="cyan")
        table.add_column("Truth", justify="right")
        table.add_column("Hottest triplet", justify="right")
        table.add_column("Index file")
        for k in labels:
            heatmaps = grad_cam(model, stack, k)
            name = model.cfg.names[k]
            index_path = export_gradcam(heatmaps, out, k, name, run.eval.render_size)
            hottest = int(heatmaps.reshape(len(heatmaps), -1).max(axis=1).argmax())
            table.add_row(name, "-" if truth is None else str(truth[k]), str(hottest), str(index_path))
    console.print(table)


@app.command()
def masks(
    kind: str = typer.Option("swa_cau_cra", "--kind", help="global | causal | swa_cau_cra | swa_cra_cau | swa_symmetric"),
    n: int = typer.Option(5, "--n", help="Number of tokens"),
    q: int = typer.Option(3, "--q", help="Window size"),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Write the 0/1 grid to this file"),
) -> None:
    """Dump an attention mask as a 0/1 text grid."""
    from ctscroll.errors import MaskError
    from ctscroll.nn.masks import MaskKind, make_mask

    with _guard():
        try:
            mask_kind = MaskKind(kind)
        except ValueError as exc:
            raise MaskError(f"Unknown mask kind '{kind}'") from exc
        grid = make_mask(mask_kind, n, q).to_text()
        if out is None:
            typer.echo(grid)
            return
        try:
            out.write_text(grid + "\n")
        except OSError as exc:
            raise VolumeIOError(f"Cannot write mask to {out}: {exc}") from exc
    console.print(f"✓ {kind} mask (n={n}, q={q}) saved to [bold]{out}[/bold]")


@app.command()
def params(
    config: Optional[Path] = ConfigOption,
    full_scale: bool = typer.Option(True, "--full-scale/--from-config",
                                    help="Count the full-scale ablation variants or the config's model"),
) -> None:
    """Trainable-parameter breakdown per component."""
    from ctscroll.harness.runconfig import load_run_config
    from ctscroll.model.config import CTScrollConfig, Interactions, Reduction
    from ctscroll.model.params import param_count

    with _guard():
        if full_scale:
            base = CTScrollConfig.full_scale()
            variants = {
                "conv3d": base.variant(reduction=Reduction.CONV3D, interactions=Interactions.NONE),
                "linear_proj": base.variant(reduction=Reduction.LINEAR_PROJ, interactions=Interactions.NONE),
                "gap": base.variant(interactions=Interactions.NONE),
                "gap + scrolling_block": base,
            }
        else:
            model_cfg = load_run_config(config).model
            variants = {f"{model_cfg.reduction.value} + {model_cfg.interactions.value}": model_cfg}

    table = Table(title="Trainable parameters")
    table.add_column("Variant", style="cyan")
    for col in ("Backbone", "Reduction", "Pos. embed", "Interactions", "Head", "Total", "Δ ref (M)"):
        table.add_column(col, justify="right")
    for name, cfg in variants.items():
        breakdown = param_count(cfg)
        c = breakdown.components
        delta = breakdown.reference_delta(cfg)
        table.add_row(
            name, f"{c['backbone']:,}", f"{c['reduction']:,}", f"{c['pos_embed']:,}",
            f"{c['interactions']:,}", f"{c['head']:,}", f"[bold]{breakdown.total:,}[/bold]",
            f"{delta:+.2f}" if delta is not None else "",
        )
    console.print(table)


@app.command()
def experiment(
    data: Path = typer.Option(..., "--data", "-d", help="Dataset directory"),
    out: Path = typer.Option(..., "--out", "-o", help="Experiment directory"),
    config: Optional[Path] = ConfigOption,
    sweep: bool = typer.Option(False, "--sweep", help="Window-size sweep over experiment.window_sizes"),
    verbose: bool = VerboseOption,
) -> None:
    """Seeded runs of every configured variant, summarised as mean ± std with paired t-tests."""
    _setup(verbose)
    from ctscroll.harness.experiment import format_summary, load_experiment_data, run_experiment, window_sweep
    from ctscroll.harness.runconfig import load_run_config

    with _guard():
        run = load_run_config(config)
        section = run.experiment
        experiment_data = load_experiment_data(data, run.preprocess)
        if sweep:
            result = window_sweep(run.model, section.window_sizes, experiment_data, section.seeds,
                                  run.train, out, workers=section.workers)
        else:
            result = run_experiment(run.variant_configs(), experiment_data, section.seeds, run.train, out,
                                    include_random_baseline=section.random_baseline, workers=section.workers)

    summary = format_summary(result.summary)
    table = Table(title=f"Summary over {len(section.seeds)} seed(s)")
    for col in summary.columns:
        table.add_column(col, style="cyan" if col == "model" else None, justify="left" if col == "model" else "right")
    for row in summary.itertuples(index=False):
        table.add_row(*map(str, row))
    console.print(table)
    if not result.significance.empty:
        auroc = result.significance[result.significance["metric"] == "AUROC"]
        for row in auroc.itertuples(index=False):
            console.print(f"   [dim]AUROC {row.model_a} vs {row.model_b}:[/dim] p = {row.p_value:.4f}")
    console.print(f"✓ Tables saved to [bold]{out}[/bold]")


@app.command()
def gradcheck(
    case: Optional[list[str]] = typer.Option(None, "--case", "--op", help="Case name (repeatable); all when omitted"),
    max_entries: int = typer.Option(24, "--max-entries", help="Coordinates checked per input"),
    seed: int = typer.Option(0, "--seed"),
    verbose: bool = VerboseOption,
) -> None:
    """Central finite-difference gradient checks in double precision."""
    _setup(verbose)
    from ctscroll.harness.diagnostics import run_gradchecks

    with _guard():
        results = run_gradchecks(case or None, seed=seed, max_entries=max_entries)
    table = Table(title="Gradient checks (float64)")
    table.add_column("Case", style="cyan")
    table.add_column("Entries", justify="right")
    table.add_column("Max rel. error", justify="right")
    table.add_column("Status")
    for name, res in results.items():
        status = "[green]✓ pass[/green]" if res.passed else "[red]✗ fail[/red]"
        table.add_row(name, str(res.checked_entries), f"{res.max_rel_error:.2e}", status)
    console.print(table)
    if not all(r.passed for r in results.values()):
        raise typer.Exit(3)


if __name__ == "__main__":
    app()
