"""
Application principale CSNet
Point d'entrée en ligne de commande: entraînement, élagage, affinage,
évaluation, analyse de complexité, mesure de latence et campagne d'acceptation
"""

import os

# Un seul thread de calcul, fixé avant l'import de numpy
for _var in ('OMP_NUM_THREADS', 'MKL_NUM_THREADS', 'OPENBLAS_NUM_THREADS'):
    os.environ.setdefault(_var, '1')

import json  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402
import time  # noqa: E402
from pathlib import Path  # noqa: E402
from typing import Any, Dict, List, Optional, Sequence, Tuple  # noqa: E402

import click  # noqa: E402
import numpy as np  # noqa: E402
from pydantic import ValidationError  # noqa: E402

from . import __version__  # noqa: E402
from .analysis.complexity import analyze, format_table, sweep, write_json  # noqa: E402
from .analysis import experiments  # noqa: E402
from .config.config_manager import ConfigManager, RunConfig, apply_overrides, resolved_dict  # noqa: E402
from .core.checkpoint import load_checkpoint, save_checkpoint  # noqa: E402
from .core.exceptions import ConfigurationError, DataError, NumericError  # noqa: E402
from .core.tensor import Tensor, no_grad  # noqa: E402
from .data.datasets import SaliencySample, load_folder, resize_sample, split_dataset, synth_dataset  # noqa: E402
from .model.csnet import CSNet, TOTAL_STRIDE  # noqa: E402
from .optim.trainer import TrainConfig, evaluate, finetune, train  # noqa: E402
from .prune import prune_pipeline  # noqa: E402

logger = logging.getLogger(__name__)

WARMUP_RUNS = 2

# Option CLI -> clé 'section.champ' de la configuration
OVERRIDE_KEYS = {
    'seed': 'seed',
    'out': 'out_dir',
    'synth': 'data.synth',
    'size': 'data.size',
    'images': 'data.images_dir',
    'masks': 'data.masks_dir',
    'epochs': 'train.epochs',
    'lr': 'train.lr',
    'lambda_std': 'decay.lambda_std',
    'lambda_dyn': 'decay.lambda_dyn',
    'decay_coupling': 'decay.coupling',
    'criterion': 'prune.criterion',
    'tau': 'prune.tau',
    'ratio': 'prune.ratio',
    'finetune_epochs': 'prune.finetune_epochs',
    'split': 'model.split',
    'width_mult': 'model.width_multiplier',
    'input_size': 'analysis.input_size',
    'flops_convention': 'analysis.flops_convention',
    'seeds': 'experiment.seeds',
    'prune_ratio': 'experiment.prune_ratio',
    'include_elementwise': 'analysis.include_elementwise',
    'log_level': 'logging.level',
}


def setup_logging(level: str = "INFO", log_file: Optional[str] = None) -> None:
    """
    Configure le système de logging
    """
    log_format = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format=log_format,
        handlers=handlers,
        force=True,
    )

    # Réduire le niveau de logging pour certains modules externes
    logging.getLogger("PIL").setLevel(logging.WARNING)


class CSNetApplication:
    """
    Application CSNet
    Résout la configuration, prépare les données et les modèles, écrit les artefacts
    """

    def __init__(self, command: str):
        self.logger = logging.getLogger(__name__)
        self.command = command
        self.config_manager = ConfigManager()
        self.config: Optional[RunConfig] = None

    @property
    def out_dir(self) -> Path:
        return Path(self.config.out_dir)

    def initialize(self, config_path: Optional[str], options: Dict[str, Any]) -> RunConfig:
        """
        Charge la configuration, applique les options puis écrit le manifeste

        Args:
            config_path: Fichier YAML/JSON (None: valeurs par défaut)
            options: Options de la ligne de commande
        """
        if config_path:
            config = self.config_manager.load_config(config_path)
        else:
            config = self.config_manager.default_config()
        overrides = {OVERRIDE_KEYS[k]: v for k, v in options.items() if k in OVERRIDE_KEYS}
        self.config = apply_overrides(config, overrides)

        setup_logging(self.config.logging.level, str(self.out_dir / self.config.logging.file))
        self.logger.info(f"=== CSNet {__version__}: commande {self.command} ===")
        self.write_manifest()
        return self.config

    def write_manifest(self) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / 'manifest.json'
        manifest = {'command': self.command, 'version': __version__, 'config': resolved_dict(self.config)}
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(manifest, f, indent=2)
        return path

    # ------------------------------------------------------------------
    # Données et modèles
    # ------------------------------------------------------------------

    def load_samples(self, for_training: bool = True) -> List[SaliencySample]:
        data = self.config.data
        if data.images_dir is not None:
            if for_training:
                return load_folder(data.images_dir, data.masks_dir, size=(data.size, data.size))
            return [self._fit_stride(s) for s in load_folder(data.images_dir, data.masks_dir)]
        if data.synth is not None:
            return synth_dataset(data.synth, data.size, self.config.seed)
        raise click.UsageError("Aucune source de données: utilisez --synth N ou --images/--masks")

    def _fit_stride(self, sample: SaliencySample) -> SaliencySample:
        h, w = sample.size
        if h % TOTAL_STRIDE == 0 and w % TOTAL_STRIDE == 0:
            return sample
        target = tuple(max(TOTAL_STRIDE, int(round(d / TOTAL_STRIDE)) * TOTAL_STRIDE) for d in (h, w))
        self.logger.warning(f"{sample.name}: {h}x{w} non divisible par {TOTAL_STRIDE}, redimensionnée en {target}")
        return resize_sample(sample, target)

    def load_split(self) -> Tuple[List[SaliencySample], List[SaliencySample]]:
        samples = self.load_samples()
        return split_dataset(samples, self.config.data.holdout, self.config.seed)

    def train_config(self) -> TrainConfig:
        return self.config.effective_train().model_copy(update={'augment': self.config.data.augment})

    def build_model(self) -> CSNet:
        model = CSNet(self.config.model, seed=self.config.seed)
        self.logger.info(f"Modèle construit: {model.num_parameters()} paramètres")
        return model

    def load_model(self, checkpoint: Optional[str]) -> CSNet:
        if checkpoint is None:
            return self.build_model()
        state, metadata = load_checkpoint(checkpoint)
        if 'layout' not in metadata:
            raise ConfigurationError(f"Checkpoint sans description de structure: {checkpoint}")
        model = CSNet.from_layout(metadata['layout'])
        model.load_state_dict(state)
        self.logger.info(f"Checkpoint chargé: {checkpoint} ({model.num_parameters()} paramètres)")
        return model

    def save_model(self, model: CSNet, name: str, **extra: Any) -> Path:
        metadata = {'layout': model.layout(), 'command': self.command, **extra}
        return save_checkpoint(str(self.out_dir / name), model.state_dict(), metadata)

    # ------------------------------------------------------------------
    # Commandes
    # ------------------------------------------------------------------

    def run_train(self) -> Path:
        train_set, holdout = self.load_split()
        model = self.build_model()
        result = train(model, train_set, self.train_config(), self.config.decay, holdout, str(self.out_dir))
        self.logger.info(f"Perte finale: {result.final_loss:.10f}")
        return self.save_model(model, 'model', final_loss=result.final_loss)

    def run_prune(self, checkpoint: Optional[str]) -> Dict[str, Any]:
        train_set, holdout = self.load_split()
        model = self.load_model(checkpoint)
        prune = self.config.prune
        compact, report = prune_pipeline(
            model, train_set, self.train_config(), self.config.decay,
            criterion=prune.criterion, tau=prune.tau, ratio=prune.ratio,
            holdout=holdout, out_dir=str(self.out_dir),
            train_first=checkpoint is None, input_size=self.config.analysis.input_size,
            fold_threshold=prune.fold_beta_threshold,
        )
        self.save_model(compact, 'pruned', prune_criterion=prune.criterion, tau=prune.tau)
        return report.to_dict()

    def run_finetune(self, checkpoint: str) -> Path:
        train_set, holdout = self.load_split()
        model = self.load_model(checkpoint)
        result = finetune(model, train_set, self.train_config(), self.config.decay, holdout, str(self.out_dir))
        self.logger.info(f"Perte finale d'affinage: {result.final_loss:.10f}")
        return self.save_model(model, 'finetuned', final_loss=result.final_loss)

    def run_eval(self, checkpoint: str) -> Dict[str, Any]:
        model = self.load_model(checkpoint)
        samples = self.load_samples(for_training=False)
        if not samples:
            raise DataError("Jeu d'évaluation vide")

        results: Dict[str, Any] = {}
        if self.config.data.synth is not None:
            train_set, holdout = split_dataset(samples, self.config.data.holdout, self.config.seed)
            results['train'] = evaluate(model, train_set).to_dict(curve=False)
            if holdout:
                results['holdout'] = evaluate(model, holdout).to_dict(curve=False)
        else:
            results['dataset'] = evaluate(model, samples, batch_size=1).to_dict(curve=False)

        write_json(results, self.out_dir / 'metrics.json')
        return results

    def run_analyze(self, method: str, sweep_axis: Optional[str], checkpoint: Optional[str]) -> str:
        analysis = self.config.analysis
        if sweep_axis:
            table = sweep(self.config.model, sweep_axis, input_size=analysis.input_size, scope=method,
                          convention=analysis.flops_convention, include_elementwise=analysis.include_elementwise)
            rows, payload = table.rows, table.to_dict()
        else:
            report = analyze(self.load_model(checkpoint), analysis.input_size, method,
                             analysis.flops_convention, analysis.include_elementwise)
            rows, payload = [report], report.to_dict()
        write_json(payload, self.out_dir / 'complexity.json')
        return format_table(rows)

    def run_experiment(self) -> Dict[str, Any]:
        train_set, holdout = self.load_split()
        report = experiments.run_experiment(
            self.config.model, self.train_config(), self.config.decay, train_set, holdout,
            self.config.experiment, str(self.out_dir), input_size=self.config.data.size,
        )
        return report.to_dict()

    def run_bench(self, checkpoint: Optional[str], repeats: int) -> Dict[str, Any]:
        model = self.load_model(checkpoint).eval()
        size = self.config.analysis.input_size
        image = Tensor(np.random.default_rng(self.config.seed).normal(size=(1, 3, size, size)))

        samples = []
        with no_grad():
            for _ in range(WARMUP_RUNS):
                model(image)
            for _ in range(repeats):
                start = time.perf_counter()
                model(image)
                samples.append((time.perf_counter() - start) * 1000.0)

        result = {
            'min_ms': float(np.min(samples)),
            'median_ms': float(np.median(samples)),
            'mean_ms': float(np.mean(samples)),
            'input': [1, 3, size, size],
            'threads': 1,
            'samples_ms': samples,
        }
        write_json(result, self.out_dir / 'bench.json')
        return result


# =====================================
# LIGNE DE COMMANDE
# =====================================

def common_options(func):
    """Options partagées par toutes les commandes"""
    options = [
        click.option('--config', 'config_path', type=click.Path(dir_okay=False), help="Fichier YAML ou JSON"),
        click.option('--seed', type=int, help="Graine unique de l'exécution"),
        click.option('--out', type=click.Path(file_okay=False), help="Dossier de sortie"),
        click.option('--log-level', type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR'], case_sensitive=False)),
        click.option('--split', help="Répartition haute/basse résolution, ex. 1/1"),
        click.option('--width-mult', type=float, help="Multiplicateur de largeur (>= 1)"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def data_options(func):
    options = [
        click.option('--synth', type=int, help="Nombre d'échantillons synthétiques"),
        click.option('--size', type=int, help="Taille des images (multiple de 32)"),
        click.option('--images', type=click.Path(file_okay=False), help="Dossier des images"),
        click.option('--masks', type=click.Path(file_okay=False), help="Dossier des masques"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def train_options(func):
    options = [
        click.option('--epochs', type=int, help="Époques (calendrier réduit proportionnellement)"),
        click.option('--lr', type=float, help="Taux d'apprentissage initial"),
        click.option('--lambda-std', type=float, help="λ de la décroissance standard"),
        click.option('--lambda-dyn', type=float, help="λ_d de la décroissance dynamique"),
        click.option('--decay-coupling', type=click.Choice(['lr', 'step', 'grad']),
                     help="Décroissance multipliée par le lr, appliquée par pas ou ajoutée au gradient"),
        click.option('--finetune-epochs', type=int, help="Époques d'affinage"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _start(command: str, options: Dict[str, Any]) -> CSNetApplication:
    app = CSNetApplication(command)
    app.initialize(options.pop('config_path', None), options)
    return app


@click.group()
@click.version_option(__version__, prog_name='csnet')
def cli():
    """CSNet: détection d'objets saillants ultra-légère"""


@cli.command('train')
@common_options
@data_options
@train_options
def train_command(**options):
    """Entraîne un CSNet avec décroissance dynamique"""
    app = _start('train', options)
    path = app.run_train()
    click.echo(f"Checkpoint: {path}")


@cli.command('prune')
@common_options
@data_options
@train_options
@click.option('--checkpoint', type=click.Path(), help="Modèle entraîné (sinon entraînement préalable)")
@click.option('--criterion', type=click.Choice(['bn_gamma', 'l1_norm', 'geometric_median']))
@click.option('--tau', type=float, help="Seuil d'importance (> 0)")
@click.option('--ratio', type=float, help="Fraction de canaux retirés par couche (remplace le seuil)")
@click.option('--input-size', type=int, help="Taille d'entrée du comptage des FLOPs")
def prune_command(checkpoint, **options):
    """Élague les canaux puis affine le modèle compact"""
    app = _start('prune', options)
    report = app.run_prune(checkpoint)
    click.echo(json.dumps({k: report[k] for k in (
        'params_before', 'params_after', 'flops_before', 'flops_after', 'params_pruning_rate', 'flagged'
    )}, indent=2))


@cli.command('finetune')
@common_options
@data_options
@train_options
@click.option('--checkpoint', type=click.Path(), required=True)
def finetune_command(checkpoint, **options):
    """Affine un modèle au lr final, décroissance dynamique désactivée"""
    app = _start('finetune', options)
    path = app.run_finetune(checkpoint)
    click.echo(f"Checkpoint: {path}")


@cli.command('eval')
@common_options
@data_options
@click.option('--checkpoint', type=click.Path(), required=True)
def eval_command(checkpoint, **options):
    """F-mesure maximale et MAE d'un checkpoint"""
    app = _start('eval', options)
    click.echo(json.dumps(app.run_eval(checkpoint), indent=2))


@cli.command('analyze')
@common_options
@click.option('--checkpoint', type=click.Path(), help="Analyse un modèle enregistré (élagué par ex.)")
@click.option('--input-size', type=int)
@click.option('--sweep', 'sweep_axis', type=click.Choice(['split', 'width']))
@click.option('--method', type=click.Choice(['csnet', 'extractor']), default='csnet', show_default=True)
@click.option('--flops-convention', type=click.Choice(['macs', '2macs']))
@click.option('--elementwise/--macs-only', 'include_elementwise', default=None,
              help="Compte BN, PReLU, rééchantillonnages et sommes dans le total")
def analyze_command(checkpoint, sweep_axis, method, **options):
    """Paramètres et FLOPs (tableau texte + JSON)"""
    app = _start('analyze', options)
    click.echo(app.run_analyze(method, sweep_axis, checkpoint))


@cli.command('bench')
@common_options
@click.option('--checkpoint', type=click.Path())
@click.option('--input-size', type=int)
@click.option('--repeats', type=click.IntRange(min=3), default=10, show_default=True)
def bench_command(checkpoint, repeats, **options):
    """Latence d'inférence sur un seul thread"""
    app = _start('bench', options)
    click.echo(json.dumps(app.run_bench(checkpoint, repeats), indent=2))


def _parse_seeds(ctx, param, value: Optional[str]) -> Optional[List[int]]:
    if value is None:
        return None
    try:
        return [int(part) for part in value.split(',') if part.strip()]
    except ValueError as e:
        raise click.BadParameter(f"Graines attendues sous la forme 7,8,9: {value}") from e


@cli.command('experiment')
@common_options
@data_options
@train_options
@click.option('--seeds', callback=_parse_seeds, help="Graines de la campagne, ex. 7,8,9")
@click.option('--prune-ratio', type=float, help="Ratio d'élagage de la comparaison des critères")
def experiment_command(**options):
    """Campagne d'acceptation: parcimonie, stabilité, fidélité de l'élagage, critères"""
    app = _start('experiment', options)
    result = app.run_experiment()
    click.echo(json.dumps({name: c['passed'] for name, c in result['criteria'].items()}, indent=2))


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Point d'entrée pour la ligne de commande

    Codes de sortie: 0 succès, 1 erreur d'usage ou de configuration,
    2 erreur numérique ou d'exécution
    """
    try:
        cli.main(args=list(argv) if argv is not None else None, prog_name='csnet', standalone_mode=False)
        return 0
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.ClickException as e:
        e.show()
        return 1
    except click.Abort:
        click.echo("Arrêt demandé par l'utilisateur", err=True)
        return 1
    except (ConfigurationError, ValidationError, FileNotFoundError) as e:
        logger.error(f"Erreur de configuration: {e}", exc_info=True)
        click.echo(f"Erreur de configuration: {e}", err=True)
        return 1
    except (NumericError, DataError) as e:
        logger.error(f"Erreur d'exécution: {e}", exc_info=True)
        click.echo(f"Erreur d'exécution: {e}", err=True)
        return 2
    except Exception as e:
        logger.error(f"Erreur fatale: {e}", exc_info=True)
        click.echo(f"Erreur fatale: {e}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(cli_main())
