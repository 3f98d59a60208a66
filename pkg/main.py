"""
Главный модуль: интерфейс командной строки для решателя упругости
методом виртуальных элементов.

Подкоманды: study (исследование сходимости), solve (одно решение),
mesh (генерация сетки), check (наборы проверок инвариантов).
"""

import os
import sys
import json
import logging
import argparse
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml
from dotenv import load_dotenv

# Создание необходимых директорий
os.makedirs("logs", exist_ok=True)

from checks import DEFAULT_CHECK_CELLS, run_checks
from geometry import load_mesh, mesh_metrics, save_mesh
from study import (
    StudyConfig,
    StudyTableWriter,
    error_norms,
    locking_sweep,
    projected_samples,
    run_study,
    solve_level,
    study_mesh,
)
from vem_local import Material

# Настройка логирования
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.FileHandler("logs/main.log"),
        logging.StreamHandler()
    ]
)
logger = logging.getLogger("main")

DOMAIN_NAMES = {"square": "unit_square", "lshape": "lshape"}
MESH_NAMES = {
    "triangles": "triangles",
    "tri-mid": "deformed_triangles_midpoints",
    "dsquares": "deformed_squares",
    "squares": "squares",
    "voronoi": "voronoi",
    "gvoronoi": "glued_voronoi",
    "mixed": "mixed",
}

# Значения по умолчанию, если config.yaml отсутствует
BUILTIN_DEFAULTS: Dict[str, Any] = {
    "domain": "square",
    "mesh": "squares",
    "k": 1,
    "nu": [0.35],
    "young": 1.0,
    "rho": 1.0,
    "stab": "dofi",
    "levels": [8, 16, 32],
    "level": 8,
    "solution": "sine",
    "seed": 0,
    "out": None,
    "small_edges": False,
    "edge_fraction": 1.0 / 50.0,
    "mesh_file": None,
    "cells": DEFAULT_CHECK_CELLS,
    "method": "direct",
}
OPTION_KEYS = tuple(BUILTIN_DEFAULTS)


class ConfigError(ValueError):
    """Ошибка файла конфигурации или значения параметра."""


class CliParser(argparse.ArgumentParser):
    """Парсер, завершающийся с кодом 1 при неверных аргументах."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: ошибка: {message}\n")
        raise SystemExit(1)


def _float_list(value) -> List[float]:
    if isinstance(value, (list, tuple)):
        return [float(v) for v in value]
    if isinstance(value, (int, float)):
        return [float(value)]
    try:
        return [float(v) for v in str(value).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"Ожидался список чисел через запятую, получено '{value}'")


def _int_list(value) -> List[int]:
    if isinstance(value, (list, tuple)):
        return [int(v) for v in value]
    if isinstance(value, int):
        return [value]
    try:
        return [int(v) for v in str(value).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"Ожидался список целых через запятую, получено '{value}'")


def load_flat_config(path: str) -> Dict[str, Any]:
    """
    Чтение плоского YAML-файла, ключи которого совпадают с флагами.

    Raises:
        ConfigError: Файл не читается, не является плоским словарем или
            содержит неизвестный ключ.
    """
    try:
        with open(path, 'r', encoding='utf-8') as file:
            data = yaml.safe_load(file) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"Не удалось прочитать конфигурацию {path}: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"Конфигурация {path} должна быть словарем ключ: значение")
    out = {}
    for key, value in data.items():
        name = str(key).replace("-", "_")
        if name not in OPTION_KEYS:
            raise ConfigError(f"Неизвестный ключ '{key}' в {path}")
        if isinstance(value, dict):
            raise ConfigError(f"Ключ '{key}' в {path} должен быть скаляром или списком")
        out[name] = value
    return out


def build_parser() -> CliParser:
    """Парсер аргументов со всеми подкомандами."""
    common = CliParser(add_help=False)
    common.add_argument('--config', type=str, help='Плоский YAML с теми же ключами, что и флаги')
    common.add_argument('--domain', choices=sorted(DOMAIN_NAMES), help='Область')
    common.add_argument('--mesh', choices=list(MESH_NAMES), help='Семейство сеток')
    common.add_argument('--small-edges', dest='small_edges', action='store_true', default=None,
                        help='Разбить каждое ребро в доле 1/50 (малые ребра)')
    common.add_argument('--edge-fraction', dest='edge_fraction', type=float, help='Доля разбиения ребра')
    common.add_argument('--k', type=int, help='Степень элемента (1 или 2)')
    common.add_argument('--nu', type=str, help='Коэффициент Пуассона или список через запятую')
    common.add_argument('--young', type=float, help='Модуль Юнга')
    common.add_argument('--rho', type=float, help='Плотность')
    common.add_argument('--stab', choices=['dofi', 'dtangent'], help='Стабилизация')
    common.add_argument('--levels', type=str, help='Уровни сетки через запятую')
    common.add_argument('--level', type=int, help='Уровень сетки для solve и mesh')
    common.add_argument('--solution', choices=['sine', 'poly3', 'patch1', 'patch2'],
                        help='Аналитическое решение')
    common.add_argument('--seed', type=int, help='Зерно случайных сеток')
    common.add_argument('--out', type=str, help='Выходной файл')
    common.add_argument('--mesh-file', dest='mesh_file', type=str, help='Сетка из файла (solve)')
    common.add_argument('--cells', type=int, help='Число случайных ячеек (check)')
    common.add_argument('--method', choices=['direct', 'cg'], help='Метод решения')
    common.add_argument('--quiet', action='store_true', help='Только предупреждения и ошибки')

    parser = CliParser(description="Метод виртуальных элементов для плоской линейной упругости")
    commands = parser.add_subparsers(dest='command', required=True)
    commands.add_parser('study', parents=[common], help='Исследование сходимости')
    commands.add_parser('solve', parents=[common], help='Решение на одном уровне')
    commands.add_parser('mesh', parents=[common], help='Генерация и запись сетки')
    commands.add_parser('check', parents=[common], help='Проверки инвариантов')
    return parser


class ElasticityApp:
    """Разрешение конфигурации и выполнение подкоманд."""

    def __init__(self, config_path="config.yaml"):
        """
        Args:
            config_path (str): Файл настроек по умолчанию (материал, допуски, папки).
        """
        # Загрузка переменных окружения
        load_dotenv()

        self.config: Dict[str, Any] = {}
        if os.path.exists(config_path):
            with open(config_path, 'r', encoding='utf-8') as file:
                self.config = yaml.safe_load(file) or {}

        self.tolerances = self.config.get('tolerances', {})
        self.files_config = self.config.get('files', {})
        self.output_folder = Path(self.files_config.get('output_folder', 'output/'))
        self.writer = StudyTableWriter()

    def defaults(self) -> Dict[str, Any]:
        defaults = dict(BUILTIN_DEFAULTS)
        material = self.config.get('material', {})
        study = self.config.get('study', {})
        defaults.update({
            "young": material.get('young', defaults["young"]),
            "rho": material.get('density', defaults["rho"]),
            "nu": material.get('poisson', defaults["nu"]),
        })
        for key in ("domain", "mesh", "k", "levels", "level", "solution", "stab", "seed",
                    "small_edges", "edge_fraction", "cells", "method"):
            if key in study:
                defaults[key] = study[key]
        return defaults

    def resolve(self, args: argparse.Namespace) -> Dict[str, Any]:
        """
        Итоговая конфигурация: config.yaml, затем --config, затем явные флаги.

        Raises:
            ConfigError: Неверное значение параметра.
        """
        resolved = self.defaults()
        if args.config:
            resolved.update(load_flat_config(args.config))
        for key in OPTION_KEYS:
            value = getattr(args, key, None)
            if value is not None:
                resolved[key] = value
        resolved["nu"] = _float_list(resolved["nu"])
        resolved["levels"] = _int_list(resolved["levels"])
        if resolved["domain"] not in DOMAIN_NAMES:
            raise ConfigError(f"Неизвестная область '{resolved['domain']}'")
        if resolved["mesh"] not in MESH_NAMES:
            raise ConfigError(f"Неизвестное семейство сеток '{resolved['mesh']}'")
        if not resolved["nu"]:
            raise ConfigError("Не задан коэффициент Пуассона")
        for key in ("k", "level", "seed", "cells"):
            resolved[key] = int(resolved[key])
        for key in ("young", "rho", "edge_fraction"):
            resolved[key] = float(resolved[key])
        resolved["small_edges"] = bool(resolved["small_edges"])
        return resolved

    def study_config(self, resolved: Dict[str, Any], poisson: Optional[float] = None,
                     out: Optional[str] = None) -> StudyConfig:
        material = Material(young=resolved["young"],
                            poisson=resolved["nu"][0] if poisson is None else poisson,
                            density=resolved["rho"])
        return StudyConfig(
            domain=DOMAIN_NAMES[resolved["domain"]],
            mesh_kind=MESH_NAMES[resolved["mesh"]],
            degree=resolved["k"],
            levels=tuple(resolved["levels"]),
            material=material,
            stab=resolved["stab"],
            solution=resolved["solution"],
            out=out,
            seed=resolved["seed"],
            small_edges=resolved["small_edges"],
            edge_fraction=resolved["edge_fraction"],
            projector_residual=float(self.tolerances.get('projector_residual', 1e-9)),
            symmetry_tol=float(self.tolerances.get('symmetry', 1e-11)),
            solver_residual=float(self.tolerances.get('solver_residual', 1e-10)),
            cg_rtol=float(self.tolerances.get('cg_rtol', 1e-12)),
            dump_path=str(self.output_folder / "failed_system.txt"),
            method=resolved["method"],
        )

    def run_study(self, resolved: Dict[str, Any]) -> int:
        config = self.study_config(resolved, out=resolved["out"])
        if len(resolved["nu"]) > 1:
            table = locking_sweep(config, resolved["nu"], self.writer)
        else:
            table = self.writer.rows_to_frame(run_study(config, self.writer))
        print(table.to_string(index=False))
        return 0

    def run_solve(self, resolved: Dict[str, Any]) -> int:
        config = self.study_config(resolved)
        level = resolved["level"]
        mesh = load_mesh(resolved["mesh_file"]) if resolved["mesh_file"] else None
        mesh, dof_map, elements, result, solution = solve_level(config, level, mesh)
        err_l2, err_h1 = error_norms(mesh, dof_map, config.degree, config.material,
                                     solution, result.u, elements)
        out = Path(resolved["out"] or self.output_folder / "solution.csv")
        self.writer.write_solution(dof_map, result.u, out)
        cells, points, values = projected_samples(elements, dof_map, result.u)
        self.writer.write_samples(points, values, out.with_name(f"{out.stem}_samples{out.suffix or '.csv'}"),
                                  cells)
        print(json.dumps({"ndof": dof_map.n_dofs, "h": mesh_metrics(mesh).h,
                          "err_l2": err_l2, "err_h1": err_h1,
                          "solver": result.report.method, "iterations": result.report.iterations,
                          "residual": result.report.residual}, ensure_ascii=False))
        return 0

    def run_mesh(self, resolved: Dict[str, Any]) -> int:
        config = self.study_config({**resolved, "levels": [resolved["level"]]})
        mesh = study_mesh(config, resolved["level"])
        out = resolved["out"] or str(self.output_folder / "mesh.txt")
        save_mesh(mesh, out)
        metrics = mesh_metrics(mesh)
        print(json.dumps({"cells": mesh.n_cells, "vertices": mesh.n_vertices,
                          "h": metrics.h, "min_edge": metrics.min_edge, "file": out}, ensure_ascii=False))
        return 0

    def run_check(self, resolved: Dict[str, Any]) -> int:
        material = Material(young=resolved["young"], poisson=resolved["nu"][0], density=resolved["rho"])
        results = run_checks(n_cells=resolved["cells"], seed=resolved["seed"], material=material)
        for result in results:
            print(result)
        return 0 if all(r.passed for r in results) else 2

    def run(self, command: str, resolved: Dict[str, Any]) -> int:
        handlers = {"study": self.run_study, "solve": self.run_solve,
                    "mesh": self.run_mesh, "check": self.run_check}
        return handlers[command](resolved)


def _configure_logging(quiet: bool):
    level = os.getenv("VEM_LOG_LEVEL", "").upper() or "INFO"
    if quiet:
        level = "WARNING"
    logging.getLogger().setLevel(getattr(logging, level, logging.INFO))


def main(argv: Optional[List[str]] = None) -> int:
    """Точка входа в приложение; возвращает код завершения."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    app = ElasticityApp()
    _configure_logging(args.quiet)
    try:
        resolved = app.resolve(args)
        print(json.dumps({"resolved-config": {"command": args.command, **resolved}}, ensure_ascii=False))
        return app.run(args.command, resolved)
    except ValueError as e:
        logger.error(f"Ошибка конфигурации: {str(e)}")
        sys.stderr.write(f"ошибка: {e}\n")
        return 1
    except RuntimeError as e:
        logger.error(f"Численный сбой: {str(e)}")
        sys.stderr.write(f"численный сбой: {e}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
