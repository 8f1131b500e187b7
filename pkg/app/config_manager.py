import os
import copy
import logging
from dataclasses import dataclass, field, asdict, fields

import yaml

logger = logging.getLogger(__name__)


REPRESENTATIONS = ("pianoroll", "midilike", "midilike_mono", "notetuple", "signallike")
WINDOW_ALIASES = {"rectangular": "boxcar", "rect": "boxcar"}


class ConfigError(ValueError):
    """配置值不满足约束"""


@dataclass(frozen=True)
class SpectralConfig:
    """信号化编码的频谱参数

    默认参数为不重叠、整周期的矩形窗分帧，此时分析与合成互为精确逆运算。
    """
    n_fft: int = 4128
    win_length: int = 4128
    hop: int = 4128
    window: str = "boxcar"
    detection_threshold: float = 0.5
    prime_start: int = 43
    prime_end: int = 2063
    min_gap: int = 3

    def __post_init__(self):
        window = WINDOW_ALIASES.get(self.window, self.window)
        object.__setattr__(self, "window", window)
        if self.n_fft <= 0 or self.n_fft % 2:
            raise ConfigError(f"n_fft 必须为正偶数: {self.n_fft}")
        if not 0 < self.win_length <= self.n_fft:
            raise ConfigError(f"win_length 必须在 (0, n_fft] 内: {self.win_length}")
        if self.hop < 1:
            raise ConfigError(f"hop 必须 >= 1: {self.hop}")
        if not 0.0 < self.detection_threshold < 1.0:
            raise ConfigError(f"detection_threshold 必须在 (0, 1) 内: {self.detection_threshold}")
        if self.prime_start < 2 or self.prime_end <= self.prime_start:
            raise ConfigError(f"素数区间无效: [{self.prime_start}, {self.prime_end}]")
        if self.prime_end >= self.n_fft // 2:
            # 最高素数频点必须低于奈奎斯特频点，否则共轭镜像会发生混叠
            raise ConfigError(f"prime_end={self.prime_end} 超出 n_fft={self.n_fft} 的单边频点范围")
        if self.min_gap < 1:
            raise ConfigError(f"min_gap 必须 >= 1: {self.min_gap}")

    @property
    def n_bins(self):
        return self.n_fft // 2 + 1

    def signal_length(self, n_frames):
        return self.win_length + (n_frames - 1) * self.hop

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known - {"preset"}
        if unknown:
            raise ConfigError(f"未知的频谱参数: {sorted(unknown)}")
        return cls(**{k: v for k, v in data.items() if k in known})


SPECTRAL_PRESETS = {
    "default": SpectralConfig(),
    # 原始的短窗口、逐样本跳步参数：编码可用，解码不保证精确
    "short_window": SpectralConfig(n_fft=4128, win_length=2048, hop=1, window="boxcar"),
}


@dataclass(frozen=True)
class PipelineConfig:
    """数据集构建流程的参数"""
    representation: str = "signallike"
    steps_per_bar: int = 16
    max_events: int = 64
    max_tuples: int = 16
    velocity_bins: int = 1
    augment: bool = False
    split_ratio: float = 0.8
    seed: int = 0
    workers: int = 1
    spectral: SpectralConfig = field(default_factory=SpectralConfig)

    def __post_init__(self):
        if self.representation not in REPRESENTATIONS:
            raise ConfigError(f"未知的表示: {self.representation}，可选 {', '.join(REPRESENTATIONS)}")
        if self.steps_per_bar < 1:
            raise ConfigError(f"steps_per_bar 必须 >= 1: {self.steps_per_bar}")
        if self.max_events < 1 or self.max_tuples < 1:
            raise ConfigError("max_events 与 max_tuples 必须 >= 1")
        if not 1 <= self.velocity_bins <= 32:
            raise ConfigError(f"velocity_bins 必须在 [1, 32] 内: {self.velocity_bins}")
        if not 0.0 < self.split_ratio <= 1.0:
            raise ConfigError(f"split_ratio 必须在 (0, 1] 内: {self.split_ratio}")
        if self.workers < 1:
            raise ConfigError(f"workers 必须 >= 1: {self.workers}")

    def to_dict(self):
        return asdict(self)


class ConfigManager:
    """配置管理器，负责默认配置、用户配置文件与命令行覆盖项的合并"""

    def __init__(self, config_file=None, config_dir=None):
        if config_dir is None:
            if os.name == 'nt':  # Windows
                config_dir = os.path.join(os.path.expanduser('~'), 'AppData', 'Local', 'SignalLike', 'config')
            else:  # macOS, Linux
                config_dir = os.path.join(os.path.expanduser('~'), '.config', 'SignalLike')
        self.config_dir = config_dir
        self.config_file = config_file
        self.main_config = self._load_main_config()
        # 先校验一次，坏配置尽早报错
        self.get_pipeline_config()

    @classmethod
    def from_dict(cls, config):
        """由已保存的配置字典（如数据集清单中的 config）重建"""
        manager = cls()
        manager.main_config = manager._merge_configs(manager.main_config, config)
        manager.get_pipeline_config()
        return manager

    def effective_config(self):
        """解析预设之后的 pipeline 与 spectral 配置，可直接交给 from_dict

        workers 只影响执行方式，不写入，保证不同线程数得到相同的清单。
        """
        pipeline = self.get_pipeline_config().to_dict()
        pipeline.pop('workers')
        spectral = pipeline.pop('spectral')
        spectral['preset'] = 'default'
        return {'pipeline': pipeline, 'spectral': spectral}

    def _default_config(self):
        return {
            'pipeline': {
                'representation': 'signallike',
                'steps_per_bar': 16,
                'max_events': 64,
                'max_tuples': 16,
                'velocity_bins': 1,
                'augment': False,
                'split_ratio': 0.8,
                'seed': 0,
                'workers': 1,
            },
            # 其余频谱键只来自用户配置，逐项覆盖所选预设
            'spectral': {'preset': 'default'},
            'export': {
                'sample_rate': 8192,
            },
            'logging': {
                'level': 'INFO',
                'log_dir': self.config_dir,
            },
        }

    def _load_main_config(self):
        """加载默认配置并合并用户配置文件"""
        default_config = self._default_config()
        if not self.config_file:
            return default_config

        if not os.path.exists(self.config_file):
            raise FileNotFoundError(f"配置文件不存在: {self.config_file}")
        try:
            with open(self.config_file, 'r', encoding='utf-8') as f:
                config = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"解析配置文件失败: {e}") from e
        if config is None:
            logger.warning(f"配置文件为空，使用默认配置: {self.config_file}")
            return default_config
        if not isinstance(config, dict):
            raise ConfigError(f"配置文件顶层必须是对象: {self.config_file}")
        logger.info(f"已加载配置文件 {self.config_file}")
        return self._merge_configs(default_config, config)

    def _merge_configs(self, default, custom):
        """合并配置字典"""
        if not isinstance(custom, dict):
            return default

        result = copy.deepcopy(default)
        for key, value in custom.items():
            if key in result and isinstance(result[key], dict) and isinstance(value, dict):
                result[key] = self._merge_configs(result[key], value)
            else:
                result[key] = value
        return result

    def save_main_config(self, path):
        """保存当前生效的配置"""
        try:
            with open(path, 'w', encoding='utf-8') as f:
                yaml.safe_dump(self.main_config, f, default_flow_style=False, allow_unicode=True, sort_keys=False)
            logger.info(f"配置已保存到 {path}")
        except OSError as e:
            logger.error(f"保存配置文件失败: {str(e)}")
            raise

    def apply_overrides(self, section='pipeline', **values):
        """应用命令行覆盖项，值为 None 的项视为未指定"""
        given = {k: v for k, v in values.items() if v is not None}
        if not given:
            return
        self.main_config[section] = self._merge_configs(self.main_config.get(section, {}), given)
        self.get_pipeline_config()

    def get_spectral_config(self):
        spectral = dict(self.main_config.get('spectral', {}))
        preset = spectral.pop('preset', 'default')
        if preset not in SPECTRAL_PRESETS:
            raise ConfigError(f"未知的频谱预设: {preset}")
        base = SPECTRAL_PRESETS[preset].to_dict()
        base.update(spectral)
        try:
            return SpectralConfig.from_dict(base)
        except TypeError as e:
            raise ConfigError(f"频谱参数类型错误: {e}") from e

    def get_pipeline_config(self):
        pipeline = dict(self.main_config.get('pipeline', {}))
        try:
            return PipelineConfig(spectral=self.get_spectral_config(), **pipeline)
        except TypeError as e:
            raise ConfigError(f"流程参数无效: {e}") from e

    def get_sample_rate(self):
        return int(self.main_config.get('export', {}).get('sample_rate', 8192))

    def get_logging_config(self):
        return self.main_config.get('logging', {})
