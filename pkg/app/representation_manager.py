import os
import sys
import json
import logging
import importlib.util
from abc import ABC, abstractmethod

from app.core_model import DEFAULT_QUANTUM, bar_to_pianoroll

logger = logging.getLogger(__name__)


class BaseRepresentation(ABC):
    """表示插件基类，所有音乐表示都必须继承此类"""

    dtype = "f32"
    # 往返校验的比较粒度: "notes" 比较音符，"roll" 比较钢琴卷帘
    fidelity = "notes"

    def __init__(self, representation_id, config_manager=None):
        self.representation_id = representation_id
        self.config_manager = config_manager
        self.descriptor = {}
        self.parameters_values = {k: v.get("value") for k, v in self.parameters.items()}

    @property
    @abstractmethod
    def name(self):
        """表示名称"""
        pass

    @property
    @abstractmethod
    def description(self):
        """表示描述"""
        pass

    @property
    def parameters(self):
        """表示参数定义

        返回参数定义字典，格式如下：
        {
            "param_name": {
                "type": "integer|float|boolean|select|string",
                "label": "参数显示名称",
                "description": "参数描述",
                "value": 默认值,
                "min": 最小值(可选),
                "max": 最大值(可选),
                "options": 选项列表(select类型时使用)
            }
        }
        """
        return {}

    def pipeline_config(self):
        if self.config_manager is None:
            from app.config_manager import PipelineConfig
            return PipelineConfig()
        return self.config_manager.get_pipeline_config()

    def validate_parameters(self, values):
        """按参数定义检查取值，返回 (成功, 消息)"""
        definitions = self.parameters
        for key, value in values.items():
            spec = definitions.get(key)
            if spec is None:
                return False, f"未知参数: {key}"
            kind = spec.get("type")
            if kind == "integer" and (not isinstance(value, int) or isinstance(value, bool)):
                return False, f"参数 {key} 必须是整数"
            if kind == "float" and not isinstance(value, (int, float)):
                return False, f"参数 {key} 必须是数值"
            if kind == "boolean" and not isinstance(value, bool):
                return False, f"参数 {key} 必须是布尔值"
            if "min" in spec and value < spec["min"]:
                return False, f"参数 {key}={value} 小于最小值 {spec['min']}"
            if "max" in spec and value > spec["max"]:
                return False, f"参数 {key}={value} 大于最大值 {spec['max']}"
            if kind == "select" and value not in [opt[0] for opt in spec.get("options", [])]:
                return False, f"参数 {key}={value} 不在可选项内"
        return True, "参数有效"

    def set_parameters(self, values):
        ok, message = self.validate_parameters(values)
        if not ok:
            raise ValueError(message)
        self.parameters_values.update(values)

    def prepare(self, bar):
        """编码前对小节的归约，默认不变"""
        return bar

    @abstractmethod
    def encode(self, bar):
        """把小节编码为 numpy 数组"""
        pass

    @abstractmethod
    def decode(self, array, quantum=DEFAULT_QUANTUM, index=0):
        """把数组解码回小节"""
        pass

    def decode_with_report(self, array, quantum=DEFAULT_QUANTUM, index=0):
        """解码并返回 (Bar, 结构问题列表)，默认没有结构问题"""
        return self.decode(array, quantum=quantum, index=index), []

    def compare(self, source, decoded):
        """按 fidelity 比较，返回 (音符一致, 卷帘一致)"""
        notes_match = _note_multiset(source) == _note_multiset(decoded)
        roll_match = bar_to_pianoroll(source) == bar_to_pianoroll(decoded)
        return notes_match, roll_match


def _note_multiset(bar):
    return sorted((pitch, start, end) for pitch, start, end, _v, _voice in bar.note_columns())


class RepresentationManager:
    """表示插件管理器，负责加载和查找表示插件"""

    def __init__(self, plugins_dir, config_manager=None):
        self.plugins_dir = plugins_dir
        self.config_manager = config_manager
        self.representations = {}

    def load_representations(self):
        """加载所有表示插件"""
        logger.info(f"开始加载表示插件，插件目录: {self.plugins_dir}")

        plugin_dirs = []
        for item in sorted(os.listdir(self.plugins_dir)):
            item_path = os.path.join(self.plugins_dir, item)
            if os.path.isdir(item_path) and not item.startswith('__'):
                plugin_dirs.append((item, item_path))

        loaded_count = 0
        for plugin_name, plugin_path in plugin_dirs:
            try:
                representation = self._load_representation(plugin_name, plugin_path)
                if representation:
                    self.representations[representation.representation_id] = representation
                    loaded_count += 1
                    logger.info(f"成功加载表示: {representation.name} (ID: {representation.representation_id})")
            except Exception as e:
                logger.error(f"加载表示插件 {plugin_name} 失败: {str(e)}")

        logger.info(f"表示插件加载完成，共加载 {loaded_count} 个")
        return loaded_count

    def _load_representation(self, plugin_name, plugin_path):
        """加载单个表示插件"""
        init_file = os.path.join(plugin_path, '__init__.py')
        if not os.path.exists(init_file):
            logger.warning(f"表示插件 {plugin_name} 缺少__init__.py文件")
            return None

        descriptor = {}
        config_file = os.path.join(plugin_path, 'config.json')
        if os.path.exists(config_file):
            with open(config_file, 'r', encoding='utf-8') as f:
                descriptor = json.load(f)

        module_name = f"plugins.{plugin_name}"
        spec = importlib.util.spec_from_file_location(module_name, init_file)
        if spec is None:
            logger.warning(f"无法为表示插件 {plugin_name} 创建模块规范")
            return None
        module = importlib.util.module_from_spec(spec)
        sys.modules[module_name] = module
        spec.loader.exec_module(module)

        representation_class = None
        for _, obj in module.__dict__.items():
            if isinstance(obj, type) and issubclass(obj, BaseRepresentation) and obj is not BaseRepresentation:
                representation_class = obj
                break
        if representation_class is None:
            logger.warning(f"表示插件 {plugin_name} 中没有找到 BaseRepresentation 子类")
            return None

        representation_id = descriptor.get('representation_id', plugin_name)
        representation = representation_class(representation_id, self.config_manager)
        representation.descriptor = descriptor
        representation.dtype = descriptor.get('dtype', representation.dtype)
        representation.fidelity = descriptor.get('fidelity', representation.fidelity)
        overrides = descriptor.get('parameters') or {}
        if overrides:
            representation.set_parameters(overrides)
        return representation

    def get_representation(self, representation_id):
        if representation_id not in self.representations:
            raise KeyError(f"未知的表示: {representation_id}，已加载 {', '.join(self.representation_ids())}")
        return self.representations[representation_id]

    def get_all_representations(self):
        return list(self.representations.values())

    def representation_ids(self):
        return sorted(self.representations)


def default_plugins_dir():
    return os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "plugins")
