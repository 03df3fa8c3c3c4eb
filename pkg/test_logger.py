"""
Logging tests for HeatCluster
"""

import logging

from utils.logger import ErrorLogger, PerformanceLogger, get_logger
from utils.errors import StudyError


def test_log_convergence_carries_the_level(log_records):
    get_logger().log_convergence("timestep_order2", 0.01, 2.5e-6, slope=2.0)
    assert log_records[-1].levelno == logging.INFO
    message = log_records[-1].getMessage()
    assert message.startswith("Convergence: timestep_order2 | run_id=")
    assert "level_value=0.01" in message
    assert "error=2.5e-06" in message


def test_context_keys_may_reuse_parameter_names(log_records):
    logger = get_logger()
    logger.info("Study level failed", level=3, message="inner")
    logger.warning("Clipped", level="sigma")
    assert "level=3 | message=inner" in log_records[-2].getMessage()
    assert log_records[-1].levelno == logging.WARNING


def test_solver_error_accepts_a_level(log_records):
    error = StudyError(0.05, ValueError("boom"))
    ErrorLogger(get_logger()).log_solver_error("rate_study", error, level=0.05)
    message = log_records[-1].getMessage()
    assert log_records[-1].levelno == logging.ERROR
    assert "error_type=StudyError" in message
    assert "level=0.05" in message


def test_condition_check_warns_when_violated(log_records):
    get_logger().log_condition_check("cluster", 5.7, False, M=512)
    assert log_records[-1].levelno == logging.WARNING
    assert "holds=False" in log_records[-1].getMessage()


def test_performance_timing(log_records):
    perf = PerformanceLogger(get_logger())
    assert perf.end_timing("never_started") == 0.0
    assert "No start time found" in log_records[-1].getMessage()
    perf.start_timing("assembly")
    assert perf.end_timing("assembly", panels=80) >= 0.0
    assert "metric_name=assembly" in log_records[-1].getMessage()
    assert "panels=80" in log_records[-1].getMessage()
