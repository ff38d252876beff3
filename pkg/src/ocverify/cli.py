"""``ocverify`` command line.

Exit codes: 0 success or accepted, 1 operational error, 2 negative verdict
(forged image, rejected pair, duplicate found).
"""
import functools
import json
import logging
import os
import sys
from typing import List, Optional, Tuple

import click

from ocverify import __version__
from ocverify.config import RunConfig, parse_assignment
from ocverify.database import EmbeddingDatabase, record_to_dict
from ocverify.dataset import (
    ManifestRow,
    expand_with_augmentations,
    load_manifest_items,
    make_eval_pairs,
    parse_image_name,
    read_manifest,
    split_identities,
    write_manifest,
)
from ocverify.exceptions import DatasetError, OcverifyError
from ocverify.forensics import check_image_forgery, report_to_json
from ocverify.helpers import file_checksum
from ocverify.imaging import load_image, save_image
from ocverify.neuralnet import MODEL_SUFFIX, load_network, save_network
from ocverify.pipeline import (
    ModelSet,
    check_duplicates,
    duplicates_to_dict,
    verdict_to_json,
    verify_pair,
)
from ocverify.preprocess import augment_many, remove_background
from ocverify.structures import ModelTag, Phase
from ocverify.synthdata import write_forgery_corpus, write_synthetic_dataset
from ocverify.trainer import (
    evaluate as evaluate_pairs,
    pair_distances,
    sweep_distances,
    train as train_model,
    write_loss_curve_csv,
    write_metrics_csv,
    write_sweep_csv,
)

logger = logging.getLogger(__name__)

EXIT_NEGATIVE = 2

_IMAGE_SUFFIXES = (".jpg", ".jpeg", ".pgm", ".ppm", ".pnm")
_LOG_LEVELS = (logging.WARNING, logging.INFO, logging.DEBUG)


_handler: Optional[logging.Handler] = None


def _configure_logging(verbose: int) -> None:
    global _handler
    root = logging.getLogger("ocverify")
    if _handler is not None:
        root.removeHandler(_handler)
    _handler = logging.StreamHandler(sys.stderr)
    _handler.setFormatter(
        logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s")
    )
    root.addHandler(_handler)
    root.setLevel(_LOG_LEVELS[min(verbose, len(_LOG_LEVELS) - 1)])


def _reports_errors(func):
    """Turn library errors into exit code 1 with the message on stderr."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except OcverifyError as err:
            raise click.ClickException(err.message)
        except OSError as err:
            raise click.ClickException(str(err))

    return wrapper


def _model_path(model_dir: str, tag: ModelTag) -> str:
    return os.path.join(model_dir, tag.value + MODEL_SUFFIX)


def _tag(value: str) -> ModelTag:
    try:
        return ModelTag.parse(value)
    except ValueError as err:
        raise click.BadParameter(str(err), param_hint="--variant")


def _variants(value: str) -> List[ModelTag]:
    if value.lower() == "all":
        return list(ModelTag)
    return [_tag(value)]


@click.group()
@click.version_option(__version__)
@click.option(
    "--config",
    "config_file",
    type=click.Path(dir_okay=False),
    default=None,
    help="key=value configuration file.",
)
@click.option(
    "--set",
    "assignments",
    multiple=True,
    metavar="KEY=VALUE",
    help="Override a key.",
)
@click.option("-v", "--verbose", count=True, help="-v for INFO, -vv for DEBUG.")
@click.pass_context
def cli(ctx, config_file, assignments, verbose):
    """One-shot face verification and JPEG forgery screening."""
    _configure_logging(verbose)
    try:
        overrides = dict(parse_assignment(a) for a in assignments)
        ctx.obj = RunConfig(overrides=overrides, config_file=config_file)
    except OcverifyError as err:
        raise click.ClickException(err.message)


@cli.command()
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option(
    "--forgeries", default=0, show_default=True, help="Forgery fixture pairs to add."
)
@click.pass_obj
@_reports_errors
def synth(cfg: RunConfig, out_dir, forgeries):
    """Write synthetic <identity>_<PRE|POST>.jpg photographs."""
    paths = write_synthetic_dataset(
        out_dir, cfg["synth_count"], cfg["synth_seed"], cfg["synth_canvas"]
    )
    click.echo("wrote %d images to %s" % (len(paths), out_dir))
    if forgeries:
        corpus_dir = os.path.join(out_dir, "forensics")
        write_forgery_corpus(corpus_dir, forgeries, cfg["synth_seed"])
        click.echo("wrote %d forgery fixtures to %s" % (forgeries, corpus_dir))


@cli.command()
@click.argument("in_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.pass_obj
@_reports_errors
def preprocess(cfg: RunConfig, in_dir, out_dir):
    """Remove backgrounds and write a manifest."""
    os.makedirs(out_dir, exist_ok=True)
    canny, dilate_k = cfg.canny_params(), cfg["dilate_k"]
    enabled = cfg["background_removal"]

    rows: List[ManifestRow] = []
    failures = 0
    for name in sorted(os.listdir(in_dir)):
        if not name.lower().endswith(_IMAGE_SUFFIXES):
            continue
        try:
            identity, phase = parse_image_name(name)
            img = remove_background(
                load_image(os.path.join(in_dir, name)), canny, dilate_k, enabled=enabled
            )
            out_name = "%s_%s.jpg" % (identity, phase.value)
            out_path = os.path.join(out_dir, out_name)
            save_image(img, out_path)
        except (OcverifyError, OSError) as err:
            failures += 1
            click.echo("%s: %s" % (name, getattr(err, "message", err)), err=True)
            continue
        sha1 = file_checksum(out_path).hexdigest()
        rows.append(ManifestRow(identity, phase, out_name, sha1))

    rows.sort(key=lambda row: (row.identity, row.phase.value))
    write_manifest(os.path.join(out_dir, "manifest.csv"), rows, cfg.to_text())
    click.echo("processed %d images, %d failed" % (len(rows), failures))
    if failures:
        sys.exit(1)


@cli.command()
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--manifest", default=None, help="Manifest to read (default: config).")
@click.option(
    "--copies", default=None, type=int, help="Copies per image (default: config)."
)
@click.pass_obj
@_reports_errors
def augment(cfg: RunConfig, out_dir, manifest, copies):
    """Write augmented copies of every manifest image."""
    manifest = manifest or cfg["manifest"]
    copies = cfg["augment_copies"] if copies is None else copies
    aug_cfg = cfg.augment_config()
    os.makedirs(out_dir, exist_ok=True)

    items = load_manifest_items(manifest)
    written = 0
    for index, item in enumerate(items):
        for k, img in enumerate(augment_many(item.image, aug_cfg, copies, index)):
            name = "%s_aug%02d.jpg" % (item.item_id, k + 1)
            save_image(img, os.path.join(out_dir, name))
            written += 1
    click.echo("wrote %d augmented images to %s" % (written, out_dir))


def _split(cfg: RunConfig, manifest: str) -> Tuple[List[str], List[str]]:
    identities = [row.identity for row in read_manifest(manifest)]
    return split_identities(identities, cfg["test_fraction"], cfg["seed"])


@cli.command()
@click.option("--manifest", default=None, help="Manifest to read (default: config).")
@click.option("--model-dir", default=None, help="Output directory (default: config).")
@click.option("--variant", default=None, help="PRE-PRE, POST-POST, PRE-POST or all.")
@click.pass_obj
@_reports_errors
def train(cfg: RunConfig, manifest, model_dir, variant):
    """Train model variants on the training identities."""
    manifest = manifest or cfg["manifest"]
    model_dir = model_dir or cfg["model_dir"]
    os.makedirs(model_dir, exist_ok=True)

    train_ids, _ = _split(cfg, manifest)
    items = load_manifest_items(manifest, identities=train_ids)

    for tag in _variants(variant or cfg["variant"]):
        result = train_model(items, cfg.train_config(tag))
        save_network(result.network, _model_path(model_dir, tag))
        curve_path = os.path.join(model_dir, tag.value + ".loss.csv")
        write_loss_curve_csv(curve_path, result.loss_curve, cfg.to_text())
        phases = ",".join(p.value for p in result.phases_seen)
        click.echo(
            "%s: final loss %.6f, phases %s"
            % (tag.value, result.loss_curve[-1], phases)
        )


def _eval_pairs(cfg: RunConfig, manifest: str, tag: ModelTag):
    _, test_ids = _split(cfg, manifest)
    items = load_manifest_items(manifest, identities=test_ids)
    items = expand_with_augmentations(
        items, cfg.augment_config(), cfg["eval_augment_copies"]
    )
    return make_eval_pairs(items, tag, cfg["seed"])


@cli.command()
@click.option("--manifest", default=None, help="Manifest to read (default: config).")
@click.option("--model-dir", default=None, help="Model directory (default: config).")
@click.option("--variant", default=None, help="Model to evaluate (default: config).")
@click.option(
    "--out", default=None, type=click.Path(dir_okay=False), help="Metrics CSV."
)
@click.pass_obj
@_reports_errors
def evaluate(cfg: RunConfig, manifest, model_dir, variant, out):
    """Accuracy, false acceptance and false rejection on held-out identities."""
    manifest = manifest or cfg["manifest"]
    tag = _tag(variant or cfg["variant"])
    net = load_network(_model_path(model_dir or cfg["model_dir"], tag))

    genuine, impostor = _eval_pairs(cfg, manifest, tag)
    metrics = evaluate_pairs(net, genuine, impostor, cfg.theta_for(tag))
    click.echo(
        "theta=%.6f accuracy=%.6f false_acceptance=%.6f false_rejection=%.6f"
        % (
            metrics.threshold_used,
            metrics.accuracy,
            metrics.false_acceptance,
            metrics.false_rejection,
        )
    )
    if out:
        write_metrics_csv(out, [metrics], cfg.to_text())


@cli.command()
@click.option("--manifest", default=None, help="Manifest to read (default: config).")
@click.option("--model-dir", default=None, help="Model directory (default: config).")
@click.option("--variant", default=None, help="Model to sweep (default: config).")
@click.option("--out", default=None, type=click.Path(dir_okay=False), help="Sweep CSV.")
@click.pass_obj
@_reports_errors
def sweep(cfg: RunConfig, manifest, model_dir, variant, out):
    """Metrics over the threshold grid and the equal-error threshold."""
    manifest = manifest or cfg["manifest"]
    tag = _tag(variant or cfg["variant"])
    net = load_network(_model_path(model_dir or cfg["model_dir"], tag))

    genuine, impostor = _eval_pairs(cfg, manifest, tag)
    result = sweep_distances(
        pair_distances(net, genuine), pair_distances(net, impostor), cfg.theta_grid()
    )
    if out:
        write_sweep_csv(out, result, cfg.to_text())
    click.echo("theta_eer=%.6f" % result.theta_eer)


@cli.command()
@click.argument("image", type=click.Path(dir_okay=False))
@click.option("--out-dir", default=None, help="Where to write <name>.ela.jpg.")
@click.pass_obj
@click.pass_context
@_reports_errors
def ela(ctx, cfg: RunConfig, image, out_dir):
    """Error level analysis of one JPEG; exit 2 when forged."""
    with open(image, "rb") as fh:
        data = fh.read()

    report = check_image_forgery(data, cfg.ela_config())
    stem = os.path.splitext(os.path.basename(image))[0]
    target_dir = out_dir or os.path.dirname(os.path.abspath(image))
    os.makedirs(target_dir, exist_ok=True)
    save_image(report.ela_image, os.path.join(target_dir, stem + ".ela.jpg"))

    click.echo(report_to_json(report))
    if report.forged:
        ctx.exit(EXIT_NEGATIVE)


def _read_bytes(path: str) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


@cli.command()
@click.argument("pre", type=click.Path(dir_okay=False))
@click.argument("post", type=click.Path(dir_okay=False))
@click.option("--model-dir", default=None, help="Model directory (default: config).")
@click.option(
    "--db", "db_path", default=None, help="Embedding database (default: config)."
)
@click.pass_obj
@click.pass_context
@_reports_errors
def verify(ctx, cfg: RunConfig, pre, post, model_dir, db_path):
    """Verify a pre/post pair and look both photographs up for duplicates."""
    models = ModelSet.load(model_dir or cfg["model_dir"])
    db = EmbeddingDatabase.open(db_path or cfg["db_path"], create=False)
    hints = (os.path.basename(pre), os.path.basename(post))

    verdict = verify_pair(
        _read_bytes(pre), _read_bytes(post), models, cfg.pipeline_config(), db, hints
    )
    click.echo(verdict_to_json(verdict))

    if not verdict.accepted:
        ctx.exit(EXIT_NEGATIVE)


@cli.command()
@click.argument("images", nargs=-1, type=click.Path(dir_okay=False))
@click.option("--phase", default=None, help="PRE or POST (default: from file name).")
@click.option("--model-dir", default=None, help="Model directory (default: config).")
@click.option(
    "--db", "db_path", default=None, help="Embedding database (default: config)."
)
@click.pass_obj
@click.pass_context
@_reports_errors
def dedupe(ctx, cfg: RunConfig, images, phase, model_dir, db_path):
    """Look photographs up in the database and store them.

    Exits 2 when any duplicate is found. Forged photographs are reported
    and skipped.
    """
    models = ModelSet.load(model_dir or cfg["model_dir"])
    pipeline_cfg = cfg.pipeline_config()
    db = EmbeddingDatabase.open(db_path or cfg["db_path"])

    found = False
    for path in images:
        data = _read_bytes(path)
        if phase:
            try:
                image_phase = Phase(phase.strip().upper())
            except ValueError:
                raise click.BadParameter("expected PRE or POST", param_hint="--phase")
        else:
            try:
                _, image_phase = parse_image_name(path)
            except DatasetError as err:
                raise click.ClickException(err.message + " Pass --phase.")

        ela_report = check_image_forgery(data, pipeline_cfg.ela)
        if ela_report.forged:
            click.echo(json.dumps({"image": path, "forged": True}, sort_keys=True))
            continue

        hint = os.path.basename(path)
        report = check_duplicates(
            data, image_phase, models, db, pipeline_cfg, identity_hint=hint
        )
        found = found or bool(report.duplicates)
        payload = duplicates_to_dict(report)
        payload["image"] = path
        click.echo(json.dumps(payload, sort_keys=True))

    if found:
        ctx.exit(EXIT_NEGATIVE)


@cli.command("db-dump")
@click.option(
    "--db", "db_path", default=None, help="Embedding database (default: config)."
)
@click.pass_obj
@_reports_errors
def db_dump(cfg: RunConfig, db_path):
    """Print every stored record as one JSON line."""
    db = EmbeddingDatabase.load(db_path or cfg["db_path"])
    for record in db:
        click.echo(json.dumps(record_to_dict(record), sort_keys=True))


def main() -> None:
    cli(prog_name="ocverify")


if __name__ == "__main__":
    main()
