"""
Utility classes for the Narses simulator: configuration loading, result files and logging
"""
import csv
import json
import logging
import os
from datetime import datetime
from typing import Any, Dict, List, Optional, Sequence

import yaml
from dotenv import load_dotenv


class ConfigManager:
    """Manages scenario configuration files and environment overrides"""

    ENV_OVERRIDES = {
        'model': 'NARSES_MODEL',
        'seed': 'NARSES_SEED',
        'flow_count': 'NARSES_FLOW_COUNT',
        'setup_delay': 'NARSES_SETUP_DELAY',
    }

    def __init__(self, env_file: Optional[str] = None):
        self.config: Dict[str, Any] = {}
        self.env_file = env_file

    def load_config(self, config_file: Optional[str] = None) -> Dict[str, Any]:
        """Load configuration from a .cfg, .json or .yaml file, then apply environment overrides"""
        if self.env_file:
            load_dotenv(self.env_file)
        else:
            load_dotenv()

        self.config = {}
        if config_file:
            with open(config_file, 'r', encoding='utf-8') as f:
                text = f.read()
            if config_file.endswith('.json'):
                self.config = json.loads(text)
            elif config_file.endswith('.yaml') or config_file.endswith('.yml'):
                self.config = yaml.safe_load(text) or {}
            else:
                self.config = self.parse_cfg(text)
            if not isinstance(self.config, dict):
                raise ValueError(f"{config_file}: top level must be a mapping")

        for key, variable in self.ENV_OVERRIDES.items():
            value = os.getenv(variable)
            if value is not None:
                self.config[key] = value

        return self.config

    @staticmethod
    def parse_cfg(text: str) -> Dict[str, str]:
        """Parse line-oriented `key = value` text; '#' starts a comment"""
        config = {}
        for line_no, raw in enumerate(text.splitlines(), start=1):
            line = raw.split('#', 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition('=')
            if not sep or not key.strip():
                raise ValueError(f"line {line_no}: expected 'key = value', got {raw.strip()!r}")
            config[key.strip()] = value.strip()
        return config


class ResultManager:
    """Writes and reads run outputs under one directory"""

    def __init__(self, output_directory: str = "results"):
        self.output_dir = output_directory
        os.makedirs(output_directory, exist_ok=True)

    def path(self, filename: str) -> str:
        return os.path.join(self.output_dir, filename)

    def save_csv(self, rows: Sequence[Sequence[Any]], filename: str, header: Sequence[str]) -> str:
        """Save rows under a header; newline is always '\\n'"""
        filepath = self.path(filename)
        with open(filepath, 'w', encoding='utf-8', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(header)
            writer.writerows(rows)
        return filepath

    def save_json(self, data: Any, filename: str) -> str:
        filepath = self.path(filename)
        with open(filepath, 'w', encoding='utf-8') as f:
            json.dump(data, f, indent=2, sort_keys=True)
            f.write('\n')
        return filepath

    def load_csv(self, filename: str) -> List[Dict[str, str]]:
        with open(self.path(filename), 'r', encoding='utf-8', newline='') as f:
            return list(csv.DictReader(f))

    def load_json(self, filename: str) -> Any:
        with open(self.path(filename), 'r', encoding='utf-8') as f:
            return json.load(f)


class Logger:
    """Logging for simulator runs with key=value context"""

    def __init__(self, name: str = 'narses', log_dir: Optional[str] = None):
        self._logger = logging.getLogger(name)
        level = getattr(logging, os.getenv('NARSES_LOG_LEVEL', 'INFO').upper(), logging.INFO)
        self._logger.setLevel(level)

        if not self._logger.handlers:
            console_handler = logging.StreamHandler()
            console_handler.setLevel(level)

            log_dir = log_dir or os.getenv('NARSES_LOG_DIR', 'results/logs')
            os.makedirs(log_dir, exist_ok=True)
            file_handler = logging.FileHandler(
                os.path.join(log_dir, f'narses_{datetime.now().strftime("%Y%m%d")}.log')
            )
            file_handler.setLevel(logging.DEBUG)

            formatter = logging.Formatter(
                '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
            )
            console_handler.setFormatter(formatter)
            file_handler.setFormatter(formatter)

            self._logger.addHandler(console_handler)
            self._logger.addHandler(file_handler)

    @staticmethod
    def format(message: str, **kwargs) -> str:
        context = " | ".join([f"{k}={v}" for k, v in kwargs.items()])
        return f"{message} | {context}" if context else message

    def info(self, message: str, **kwargs) -> None:
        self._logger.info(self.format(message, **kwargs))

    def warning(self, message: str, **kwargs) -> None:
        self._logger.warning(self.format(message, **kwargs))

    def error(self, message: str, **kwargs) -> None:
        self._logger.error(self.format(message, **kwargs))

    def debug(self, message: str, **kwargs) -> None:
        self._logger.debug(self.format(message, **kwargs))
