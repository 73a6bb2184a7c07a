import logging

import pytest
from loguru import logger

from tfrmt.utils.logger import LOG_NAME, get_logger, setup_logging


@pytest.fixture
def records(tmp_path):
    setup_logging("DEBUG", tmp_path)
    seen = []
    logger.add(lambda message: seen.append(message.record), level="DEBUG")
    yield seen
    logger.remove()


def test_stdlib_records_reach_loguru_with_their_logger_name(records, tmp_path):
    logging.getLogger("scipy.linalg").warning("hello %s", "ocean")
    record = records[0]
    assert record["message"] == "hello ocean"
    assert record["level"].name == "WARNING"
    assert record["extra"]["name"] == "scipy.linalg"
    assert record["function"] == "test_stdlib_records_reach_loguru_with_their_logger_name"
    logger.remove()
    assert "hello ocean" in (tmp_path / LOG_NAME).read_text(encoding="utf-8")


def test_stdlib_level_threshold_follows_setup(tmp_path):
    setup_logging("WARNING")
    seen = []
    logger.add(lambda message: seen.append(message.record["message"]), level="DEBUG")
    logging.getLogger("numpy").info("quiet")
    logging.getLogger("numpy").error("loud")
    logger.remove()
    assert seen == ["loud"]


def test_get_logger_binds_the_module_name(records):
    get_logger("tfrmt.pe").bind(k=1.5).info("stepped")
    get_logger().debug("default")
    assert [r["extra"]["name"] for r in records] == ["tfrmt.pe", "tfrmt"]
    assert records[0]["extra"]["k"] == 1.5
