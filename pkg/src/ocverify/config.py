"""Flat ``key=value`` run configuration.

Values come from, in order of precedence, command-line overrides, the
configuration file and the built-in defaults. The defaults are read off
the dataclasses that consume them, so a key's default always equals the
library default.

.. code-block:: text

    # run.conf
    canny_sigma=1.4
    loss=triplet
    epochs=100
    theta=0.9
"""
import logging
from collections import OrderedDict
from typing import Any, Callable, Dict, Mapping, Optional, Tuple

import inflection
from prettyconf import Configuration
from prettyconf.exceptions import InvalidConfiguration
from prettyconf.parsers import EnvFileParser

from ocverify import messages
from ocverify.base import LossConfig
from ocverify.exceptions import ConfigurationError
from ocverify.forensics import ElaConfig
from ocverify.neuralnet.network import ArchConfig, format_conv_blocks, parse_conv_blocks
from ocverify.pipeline import PipelineConfig
from ocverify.preprocess import DEFAULT_DILATE_K, AugmentConfig, CannyParams
from ocverify.structures import MiningStrategy, ModelTag
from ocverify.trainer import TrainConfig, parse_theta_grid
from ocverify.typed import PathLike

__all__ = ["RunConfig", "normalize_key", "parse_assignment"]

logger = logging.getLogger(__name__)

_boolean = Configuration.boolean


def _optional_float(value):
    if value is None or str(value).strip() == "":
        return None
    return float(value)


def _tag(value) -> str:
    return ModelTag.parse(value).value


def _strategy(value) -> str:
    return MiningStrategy.parse(value).value


def _blocks(value) -> str:
    return format_conv_blocks(parse_conv_blocks(value))


def _grid(value) -> str:
    parse_theta_grid(value)
    return str(value).strip()


_canny = CannyParams()
_augment = AugmentConfig()
_train = TrainConfig()
_arch = ArchConfig()
_ela = ElaConfig()
_loss = LossConfig()

#: key -> (default, cast)
DEFAULTS: "OrderedDict[str, Tuple[Any, Callable]]" = OrderedDict(
    [
        # preprocessing
        ("canny_sigma", (_canny.gaussian_sigma, float)),
        ("canny_low", (_canny.low_threshold, float)),
        ("canny_high", (_canny.high_threshold, float)),
        ("dilate_k", (DEFAULT_DILATE_K, int)),
        ("background_removal", (True, _boolean)),
        # augmentation
        ("aug_flip_lr_prob", (_augment.flip_lr_prob, float)),
        ("aug_rotate_prob", (_augment.rotate_prob, float)),
        ("aug_rotate_max_left", (_augment.rotate_max_left_deg, float)),
        ("aug_rotate_max_right", (_augment.rotate_max_right_deg, float)),
        ("aug_zoom_prob", (_augment.zoom_prob, float)),
        ("aug_zoom_min", (_augment.zoom_min_factor, float)),
        ("aug_zoom_max", (_augment.zoom_max_factor, float)),
        ("aug_distort_prob", (_augment.distort_prob, float)),
        ("aug_distort_grid_w", (_augment.distort_grid_w, int)),
        ("aug_distort_grid_h", (_augment.distort_grid_h, int)),
        ("aug_distort_magnitude", (_augment.distort_magnitude, float)),
        ("aug_seed", (_augment.seed, int)),
        # training
        ("variant", (_train.variant.value, _tag)),
        ("loss", (_train.loss, str)),
        ("mining", (_train.mining.value, _strategy)),
        ("hard_fraction", (_train.hard_fraction, float)),
        ("epochs", (_train.epochs, int)),
        ("batch_size", (_loss.batch_size, int)),
        ("lr", (_train.lr, float)),
        ("momentum", (_train.momentum, float)),
        ("augment_copies", (_train.augment_copies, int)),
        ("eval_augment_copies", (4, int)),
        ("seed", (_train.seed, int)),
        ("margin", (_loss.m, float)),
        ("alpha", (_loss.alpha, float)),
        ("test_fraction", (0.2, float)),
        # architecture
        ("input_side", (_arch.input_side, int)),
        ("embedding_dim", (_arch.embedding_dim, int)),
        ("conv_blocks", (format_conv_blocks(_arch.conv_blocks), _blocks)),
        ("normalize_embeddings", (_arch.normalize_embeddings, _boolean)),
        # forensics
        ("ela_quality", (_ela.requality, int)),
        ("ela_k", (_ela.outlier_factor, float)),
        ("ela_floor", (_ela.absolute_floor, float)),
        ("ela_min_region", (_ela.min_region, int)),
        ("ela_gain", (_ela.gain, float)),
        # thresholds
        ("theta", (PipelineConfig().theta, float)),
        ("theta_pre_pre", (None, _optional_float)),
        ("theta_post_post", (None, _optional_float)),
        ("theta_pre_post", (None, _optional_float)),
        ("theta_grid", ("0:4:0.05", _grid)),
        # synthetic data
        ("synth_count", (20, int)),
        ("synth_canvas", (128, int)),
        ("synth_seed", (0, int)),
        # paths
        ("manifest", ("manifest.csv", str)),
        ("model_dir", ("models", str)),
        ("db_path", ("embeddings.ocdb", str)),
    ]
)

_THETA_KEYS = {
    ModelTag.PRE_PRE: "theta_pre_pre",
    ModelTag.POST_POST: "theta_post_post",
    ModelTag.PRE_POST: "theta_pre_post",
}


def normalize_key(key: str) -> str:
    """``canny-sigma``, ``CANNY_SIGMA`` and ``cannySigma`` all map to
    ``canny_sigma``.
    """
    return inflection.underscore(str(key).strip()).replace("-", "_")


def parse_assignment(text: str) -> Tuple[str, str]:
    """Split ``KEY=VALUE``.

    :raises ConfigurationError: If there is no ``=``.
    """
    key, sep, value = str(text).partition("=")
    if not sep or not key.strip():
        raise ConfigurationError("Expected KEY=VALUE, got '%s'." % text)
    return normalize_key(key), value.strip()


def _normalized(values: Mapping[str, Any], source: str) -> Dict[str, Any]:
    result = {}
    for key, value in values.items():
        name = normalize_key(key)
        if name not in DEFAULTS:
            raise ConfigurationError(
                messages.CONFIG_UNKNOWN_KEY % key + " (%s)" % source
            )
        result[name] = value
    return result


def read_config_file(path: PathLike) -> Dict[str, str]:
    """Parse a ``key=value`` file.

    :raises ConfigurationError: If the file cannot be read or holds an
      unknown key.
    """
    try:
        with open(path) as fh:
            values = dict(EnvFileParser(fh).parse_config())
    except OSError as err:
        raise ConfigurationError("Cannot read config file '%s': %s" % (path, err))
    return _normalized(values, str(path))


class RunConfig:
    """Effective configuration of one command.

    .. code-block:: python

        cfg = RunConfig(overrides={'epochs': '20'}, config_file='run.conf')
        cfg['epochs']
        # 20
        cfg.train_config().epochs
        # 20

    :param overrides: (optional) Highest-precedence values, usually from
      ``--set KEY=VALUE``.
    :type overrides: dict or None

    :param config_file: (optional) ``key=value`` file.
    :type config_file: str or Path or None

    :raises ConfigurationError: On unknown keys or values that do not cast.
    """

    def __init__(
        self,
        overrides: Optional[Mapping[str, Any]] = None,
        config_file: Optional[PathLike] = None,
    ) -> None:
        file_values = read_config_file(config_file) if config_file else {}
        override_values = _normalized(overrides or {}, "overrides")
        self._config = Configuration(loaders=[override_values, file_values])

        self._values: "OrderedDict[str, Any]" = OrderedDict()
        for key, (default, cast) in DEFAULTS.items():
            try:
                self._values[key] = self._config(key, default=default, cast=cast)
            except (ValueError, TypeError, InvalidConfiguration):
                raw = override_values.get(key, file_values.get(key))
                raise ConfigurationError(messages.CONFIG_BAD_VALUE % (raw, key))

        # Build every typed view once so bad combinations fail early.
        self.canny_params()
        self.augment_config()
        self.arch_config()
        self.ela_config()
        self.train_config()

    def __getitem__(self, key: str) -> Any:
        return self._values[normalize_key(key)]

    def to_text(self) -> str:
        """Sorted ``key=value`` lines of the effective configuration."""
        lines = []
        for key in sorted(self._values):
            value = self._values[key]
            if value is None:
                value = ""
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append("%s=%s" % (key, value))
        return "\n".join(lines)

    def canny_params(self) -> CannyParams:
        return CannyParams(
            gaussian_sigma=self["canny_sigma"],
            low_threshold=self["canny_low"],
            high_threshold=self["canny_high"],
        )

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(
            flip_lr_prob=self["aug_flip_lr_prob"],
            rotate_prob=self["aug_rotate_prob"],
            rotate_max_left_deg=self["aug_rotate_max_left"],
            rotate_max_right_deg=self["aug_rotate_max_right"],
            zoom_prob=self["aug_zoom_prob"],
            zoom_min_factor=self["aug_zoom_min"],
            zoom_max_factor=self["aug_zoom_max"],
            distort_prob=self["aug_distort_prob"],
            distort_grid_w=self["aug_distort_grid_w"],
            distort_grid_h=self["aug_distort_grid_h"],
            distort_magnitude=self["aug_distort_magnitude"],
            seed=self["aug_seed"],
        )

    def loss_config(self) -> LossConfig:
        return LossConfig(
            m=self["margin"], alpha=self["alpha"], batch_size=self["batch_size"]
        )

    def arch_config(self) -> ArchConfig:
        return ArchConfig(
            input_side=self["input_side"],
            conv_blocks=parse_conv_blocks(self["conv_blocks"]),
            embedding_dim=self["embedding_dim"],
            normalize_embeddings=self["normalize_embeddings"],
        )

    def train_config(self, variant=None) -> TrainConfig:
        return TrainConfig(
            variant=ModelTag.parse(variant or self["variant"]),
            loss=self["loss"],
            epochs=self["epochs"],
            batch_size=self["batch_size"],
            lr=self["lr"],
            momentum=self["momentum"],
            augment=self.augment_config(),
            augment_copies=self["augment_copies"],
            seed=self["seed"],
            mining=self["mining"],
            hard_fraction=self["hard_fraction"],
            margin=self["margin"],
            alpha=self["alpha"],
            arch=self.arch_config(),
        )

    def ela_config(self) -> ElaConfig:
        return ElaConfig(
            requality=self["ela_quality"],
            outlier_factor=self["ela_k"],
            absolute_floor=self["ela_floor"],
            min_region=self["ela_min_region"],
            gain=self["ela_gain"],
        )

    def theta_for(self, tag) -> float:
        override = self[_THETA_KEYS[ModelTag.parse(tag)]]
        return self["theta"] if override is None else override

    def theta_grid(self):
        return parse_theta_grid(self["theta_grid"])

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(
            theta=self["theta"],
            theta_overrides={
                tag: self[key]
                for tag, key in _THETA_KEYS.items()
                if self[key] is not None
            },
            ela=self.ela_config(),
            canny=self.canny_params(),
            dilate_k=self["dilate_k"],
            background_removal=self["background_removal"],
        )

    def __repr__(self) -> str:
        return "<RunConfig %d keys>" % len(self._values)
