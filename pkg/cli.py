"""### Ligne de commande

```
python cli.py phantom gen --seed 7 --out donnees/
python cli.py train --data donnees/ --out essai/
python cli.py eval sweep --checkpoint essai/model.tard --data donnees/ --out essai/
python cli.py export-latents --checkpoint essai/model.tard --data donnees/ --out essai/latents.csv --weight-maps
python cli.py selftest
```

Codes de sortie : 0 succès, 1 usage, 2 erreur d'exécution.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from configuration import TardisConfig, load_config
from evaluation import (
    export_latents,
    fit_probe_on_studies,
    parse_subset,
    sweep_eval,
    write_sweep_report,
    write_weight_maps,
)
from model import load_checkpoint
from phantom import gen_dataset, load_manifest, load_studies
from selftest import run_selftest
from trainer import train, training_summary

logger = logging.getLogger("tardis")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    """Arguments de ligne de commande invalides."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.format_usage()}{self.prog} : erreur : {message}")


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="Fichier JSON de configuration.")
    common.add_argument("--seed", type=int, help="Graine (entier non signé 64 bits).")
    common.add_argument("--out", type=Path, help="Répertoire ou fichier de sortie.")
    common.add_argument("--verbose", action="store_true", help="Journalisation détaillée (DEBUG).")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="tardis", description="Désintrication des phases de scanner multiphasique incomplet.")
    commands = parser.add_subparsers(dest="command", parser_class=_Parser)

    phantom = commands.add_parser("phantom", help="Jeu de fantômes synthétiques.")
    phantom_commands = phantom.add_subparsers(dest="action", parser_class=_Parser)
    phantom_commands.add_parser("gen", parents=[common], help="Générer le jeu de données.")

    training = commands.add_parser("train", parents=[common], help="Entraîner le réseau.")
    training.add_argument("--data", type=Path, required=True, help="Répertoire du jeu de données.")

    evaluate = commands.add_parser("eval", help="Évaluation.")
    eval_commands = evaluate.add_subparsers(dest="action", parser_class=_Parser)
    sweep = eval_commands.add_parser("sweep", parents=[common], help="Balayage des sous-ensembles de phases.")
    sweep.add_argument("--checkpoint", type=Path, required=True)
    sweep.add_argument("--data", type=Path, required=True)
    sweep.add_argument("--subsets", nargs="+", help="Sous-ensembles, par exemple NAV N AV.")
    sweep.add_argument("--split", choices=("train", "val", "test"))
    sweep.add_argument("--samples", type=int, help="Tirages a priori moyennés (0 : déterministe).")

    latents = commands.add_parser("export-latents", parents=[common], help="Exporter les vecteurs latents.")
    latents.add_argument("--checkpoint", type=Path, required=True)
    latents.add_argument("--data", type=Path, required=True)
    latents.add_argument("--split", choices=("train", "val", "test"), default="test")
    latents.add_argument(
        "--weight-maps", action="store_true", help="Écrire aussi les cartes d'assemblage α dans <sortie>/alpha/."
    )

    commands.add_parser("selftest", parents=[common], help="Suite d'invariants embarquée.")
    return parser


def _configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s : %(message)s",
        force=True,
    )


def _check_seed(seed: Optional[int]) -> Optional[int]:
    if seed is not None and not 0 <= seed < 2**64:
        raise UsageError(f"--seed doit être un entier non signé 64 bits, reçu {seed}.")
    return seed


def _require_out(args: argparse.Namespace) -> Path:
    if args.out is None:
        raise UsageError(f"--out est obligatoire pour « {args.command} ».")
    return args.out


def _run_phantom(args: argparse.Namespace, config: TardisConfig) -> int:
    seed = args.seed if args.seed is not None else config.train.seed
    manifest = gen_dataset(config.phantom, seed, _require_out(args))
    print(manifest.dataset_hash)
    return EXIT_OK


def _run_train(args: argparse.Namespace, config: TardisConfig) -> int:
    manifest = load_manifest(args.data)
    result = train(manifest, config, _require_out(args), seed=args.seed)
    print(json.dumps(training_summary(result.history), indent=2))
    print(result.checkpoint)
    return EXIT_OK


def _run_sweep(args: argparse.Namespace, config: Optional[TardisConfig]) -> int:
    model, header = load_checkpoint(args.checkpoint)
    evaluation = (config or model.config).evaluation
    if args.subsets:
        evaluation = replace(evaluation, subsets=tuple(parse_subset(subset) for subset in args.subsets))
    if args.split:
        evaluation = replace(evaluation, split=args.split)
    if args.samples is not None:
        evaluation = replace(evaluation, stochastic_samples=args.samples)
    evaluation.validate()

    manifest = load_manifest(args.data)
    probe = fit_probe_on_studies(model, load_studies(manifest, "train"))
    report = sweep_eval(
        model,
        load_studies(manifest, evaluation.split),
        subsets=evaluation.subsets or None,
        probe=probe,
        n_samples=evaluation.stochastic_samples,
        noise_seed=args.seed or 0,
        metadata={
            "checkpoint": header.get("config_hash", "")[:12],
            "dataset": manifest.dataset_hash[:12],
            "split": evaluation.split,
        },
    )
    paths = write_sweep_report(report, _require_out(args))
    print(report.to_text(), end="")
    print(paths["csv"])
    return EXIT_OK


def _run_latents(args: argparse.Namespace) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.data)
    out = _require_out(args)
    if out.suffix != ".csv":
        out = out / "latents.csv"
    studies = load_studies(manifest, args.split)
    export = export_latents(model, studies, out, seed=args.seed or 0)
    if args.weight_maps:
        print(write_weight_maps(model, studies, out.parent / "alpha"))
    print(json.dumps(export.summary, indent=2, sort_keys=True))
    return EXIT_OK


def _run_selftest(args: argparse.Namespace) -> int:
    report = run_selftest(seed=args.seed or 0)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_RUNTIME


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        if not argv:
            raise UsageError(parser.format_usage().rstrip())
        args = parser.parse_args(argv)
        if args.command is None or getattr(args, "action", "") is None:
            raise UsageError(parser.format_usage().rstrip())
        _check_seed(args.seed)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE

    _configure_logging(args.verbose)
    try:
        config = load_config(args.config) if args.config else None
        if args.command == "phantom":
            return _run_phantom(args, config or load_config())
        if args.command == "train":
            return _run_train(args, config or load_config())
        if args.command == "eval":
            return _run_sweep(args, config)
        if args.command == "export-latents":
            return _run_latents(args)
        return _run_selftest(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        logger.debug("Trace complète :", exc_info=True)
        print(f"tardis : {type(exc).__name__} : {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
