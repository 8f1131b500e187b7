import sys
import os
import json
import logging
import argparse
import traceback

from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

# 添加项目根目录到系统路径
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from app.config_manager import ConfigManager
from app.representation_manager import RepresentationManager, default_plugins_dir

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_USAGE = 64

console = Console()


def default_log_dir():
    if os.name == 'nt':  # Windows
        return os.path.join(os.path.expanduser('~'), 'AppData', 'Local', 'SignalLike', 'config')
    return os.path.join(os.path.expanduser('~'), '.config', 'SignalLike')


def setup_logging(level='INFO', log_dir=None):
    """文件日志沿用固定格式，控制台日志交给 rich"""
    handlers = [RichHandler(console=Console(stderr=True), show_path=False)]
    log_dir = log_dir or default_log_dir()
    file_error = None
    try:
        # 创建日志目录（如果不存在）
        os.makedirs(log_dir, exist_ok=True)
        file_handler = logging.FileHandler(os.path.join(log_dir, 'app.log'), encoding='utf-8')
        file_handler.setFormatter(logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s'))
        handlers.append(file_handler)
    except OSError as e:
        file_error = e
    logging.basicConfig(level=level.upper(), format='%(message)s', handlers=handlers, force=True)
    if file_error:
        logger.warning(f"无法写入日志目录 {log_dir}，仅输出到控制台: {file_error}")


class UsageArgumentParser(argparse.ArgumentParser):
    """参数错误时打印用法并以 64 退出"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: 错误: {message}\n")


def nht_range(text):
    try:
        lo, hi = (int(part) for part in text.split('..'))
    except ValueError:
        raise argparse.ArgumentTypeError(f"非和弦音范围格式应为 lo..hi: {text}")
    if lo < 0 or hi < lo:
        raise argparse.ArgumentTypeError(f"非和弦音范围无效: {text}")
    return lo, hi


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, help='随机种子')
    common.add_argument('--config', help='YAML/JSON 配置文件')
    common.add_argument('--out', help='输出目录')
    common.add_argument('--workers', type=int, help='并行线程数')
    common.add_argument('--log-level', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'], help='日志级别')
    common.add_argument('--save-config', help='把合并后的配置写入该 YAML 文件')

    parser = UsageArgumentParser(prog='signallike', description='符号音乐表示的编码、数据集构建与评估工具')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('convert', parents=[common], help='把一个 MIDI 文件按小节编码为张量文件')
    p.add_argument('input', help='MIDI 文件')
    p.add_argument('--rep', help='表示 ID')

    p = sub.add_parser('build-dataset', parents=[common], help='由 MIDI 语料构建数据集')
    p.add_argument('corpus', help='语料目录')
    p.add_argument('--rep', help='表示 ID')
    p.add_argument('--augment', action='store_true', default=None, help='启用移调增强')
    p.add_argument('--max-events', type=int, help='MIDI 式事件预算')
    p.add_argument('--split-ratio', type=float, help='训练集作品比例')

    p = sub.add_parser('roundtrip', parents=[common], help='校验数据集的解码往返')
    p.add_argument('dataset', help='数据集目录')
    p.add_argument('--limit', type=int, default=20, help='最多显示的不一致项')

    p = sub.add_parser('gen-chorales', parents=[common], help='生成合成四部和声评估语料')
    p.add_argument('--skeletons', type=int, required=True, help='骨架数')
    p.add_argument('--per', type=int, required=True, help='每个骨架的实现数')
    p.add_argument('--nht', type=nht_range, default=(0, 8), help='非和弦音数量范围 lo..hi')

    p = sub.add_parser('eval', parents=[common], help='计算嵌入距离曲线、线性度与调性轮廓系数')
    p.add_argument('--embeddings', help='嵌入张量文件（第 i 行对应 meta 第 i 行）')
    p.add_argument('--meta', help='meta.jsonl，默认取 <corpus>/meta.jsonl')
    p.add_argument('--corpus', help='评估语料目录，未给出嵌入时用原始表示作为嵌入')
    p.add_argument('--rep', help='原始嵌入使用的表示 ID')

    p = sub.add_parser('export-wav', parents=[common], help='把每个小节的信号化表示导出为 WAV')
    p.add_argument('input', help='MIDI 文件')
    p.add_argument('--sample-rate', type=int, help='采样率')

    sub.add_parser('representations', parents=[common], help='列出已加载的表示插件')
    return parser


def _require_out(args):
    if not args.out:
        raise ValueError(f"{args.command} 需要 --out")
    return args.out


def cmd_convert(args, config_manager):
    from app.dataset_pipeline import convert_file
    from app.status_monitor import StatusMonitor
    monitor = StatusMonitor("转换结果")
    written = convert_file(args.input, _require_out(args), config_manager, monitor=monitor)
    console.print(monitor.render_table())
    console.print(f"已写出 {len(written)} 个文件到 {args.out}")
    return EXIT_OK


def cmd_build_dataset(args, config_manager):
    from app.dataset_pipeline import build_dataset, render_manifest_table
    from app.status_monitor import StatusMonitor
    monitor = StatusMonitor("语料解析")
    manifest = build_dataset(args.corpus, _require_out(args), config_manager, monitor=monitor)
    console.print(monitor.render_table())
    console.print(render_manifest_table(manifest))
    console.print(f"保留率: {manifest['totals']['retention']:.2%}")
    return EXIT_OK


def cmd_roundtrip(args, config_manager):
    from app.dataset_pipeline import render_roundtrip_table, roundtrip_check
    report = roundtrip_check(args.dataset)
    summary, detail = render_roundtrip_table(report, args.limit)
    console.print(summary)
    if report.mismatches:
        console.print(detail)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, 'roundtrip_report.json'), 'w', encoding='utf-8') as f:
            json.dump(report.to_dict(), f, indent=2, sort_keys=True, ensure_ascii=False)
    return EXIT_OK if report.exact_matches == report.total else EXIT_VALIDATION


def cmd_gen_chorales(args, config_manager):
    from app.chorale_gen import build_eval_corpus
    cfg = config_manager.get_pipeline_config()
    lines = build_eval_corpus(_require_out(args), args.skeletons, args.per, args.nht, seed=cfg.seed,
                              workers=cfg.workers)
    console.print(f"已生成 {args.skeletons} 个骨架、{lines - args.skeletons} 个实现，写入 {args.out}")
    return EXIT_OK


def cmd_eval(args, config_manager):
    from app.chorale_gen import load_meta
    from app.dataset_pipeline import load_representation
    from app.eval_metrics import (distance_profile, embed_corpus, kindwise_profile, linearity_score,
                                  load_embeddings, tonality_silhouette, write_report)
    from app.tensor_file import load_tensor

    meta_path = args.meta or (os.path.join(args.corpus, 'meta.jsonl') if args.corpus else None)
    if meta_path is None:
        raise ValueError("eval 需要 --meta 或 --corpus")
    meta = load_meta(meta_path)
    if args.embeddings:
        matrix = load_tensor(args.embeddings)
    elif args.corpus:
        representation = load_representation(config_manager, args.rep or 'signallike')
        matrix = embed_corpus(args.corpus, meta, representation)
    else:
        raise ValueError("eval 需要 --embeddings 或 --corpus")

    table = load_embeddings(matrix, meta)
    profile = distance_profile(table)
    linearity = None
    if len(profile.counts()) >= 3:
        linearity = linearity_score(profile)
    else:
        logger.warning("非和弦音数量分组少于 3 个，跳过线性度")
    try:
        silhouette = tonality_silhouette(table)
    except ValueError as e:
        logger.warning(f"跳过调性轮廓系数: {e}")
        silhouette = None
    kindwise = kindwise_profile(table)
    write_report(_require_out(args), profile, linearity, silhouette, kindwise)

    result = Table(title="嵌入距离曲线")
    result.add_column("非和弦音数", justify="right")
    result.add_column("平均距离", justify="right")
    result.add_column("样本数", justify="right")
    result.add_column("归一化", justify="right")
    for count in profile.counts():
        bucket = profile.buckets[count]
        result.add_row(str(count), f"{bucket.mean:.6f}", str(bucket.count), f"{bucket.normalized:.4f}")
    console.print(result)
    if linearity:
        console.print(f"Pearson r = {linearity.pearson_r:.4f}, Spearman rho = {linearity.spearman_rho:.4f}")
    if silhouette is not None:
        console.print(f"调性轮廓系数 = {silhouette:.4f}")
    return EXIT_OK


def cmd_export_wav(args, config_manager):
    from app.dataset_pipeline import export_wav_files
    if args.sample_rate is not None:
        config_manager.apply_overrides('export', sample_rate=args.sample_rate)
    written = export_wav_files(args.input, _require_out(args), config_manager)
    console.print(f"已导出 {len(written)} 个 WAV 文件到 {args.out}")
    return EXIT_OK


def cmd_representations(args, config_manager):
    manager = RepresentationManager(default_plugins_dir(), config_manager)
    manager.load_representations()
    table = Table(title="表示插件")
    table.add_column("ID", style="bold")
    table.add_column("名称")
    table.add_column("类型")
    table.add_column("比较粒度")
    table.add_column("描述")
    for representation in manager.get_all_representations():
        table.add_row(representation.representation_id, representation.name, representation.dtype,
                      representation.fidelity, representation.description)
    console.print(table)
    return EXIT_OK


COMMANDS = {
    'convert': cmd_convert,
    'build-dataset': cmd_build_dataset,
    'roundtrip': cmd_roundtrip,
    'gen-chorales': cmd_gen_chorales,
    'eval': cmd_eval,
    'export-wav': cmd_export_wav,
    'representations': cmd_representations,
}


def main(argv=None):
    """主程序入口，返回退出码"""
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level or 'INFO')
    try:
        config_manager = ConfigManager(config_file=args.config)
        logging_config = config_manager.get_logging_config()
        if args.config:
            # 配置文件可能改动日志目录与级别，重新安装处理器
            setup_logging(args.log_level or logging_config.get('level', 'INFO'), logging_config.get('log_dir'))
        config_manager.apply_overrides(
            representation=getattr(args, 'rep', None),
            seed=args.seed,
            workers=args.workers,
            augment=getattr(args, 'augment', None),
            max_events=getattr(args, 'max_events', None),
            split_ratio=getattr(args, 'split_ratio', None),
        )
        if args.save_config:
            config_manager.save_main_config(args.save_config)
        return COMMANDS[args.command](args, config_manager)
    except OSError as e:
        logger.error(f"读写文件失败: {str(e)}")
        return EXIT_IO
    except (ValueError, KeyError) as e:
        logger.error(f"{args.command} 失败: {str(e)}")
        logger.debug(traceback.format_exc())
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
