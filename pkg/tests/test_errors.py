import logging

import orjson

from splat_graph.core.errors import (
    EXIT_INPUT_ERROR,
    EXIT_RUNTIME_ERROR,
    ConfigurationError,
    DatasetError,
    PoseError,
    TrainingDivergedError,
    error_handler
)
from splat_graph.core.logging import ContextTextFormatter, CustomJsonFormatter
from splat_graph.core.monitoring import metrics_manager


def test_input_errors_map_to_exit_two():
    assert error_handler(DatasetError("missing", path='/nowhere')) == EXIT_INPUT_ERROR
    assert error_handler(ConfigurationError("bad key", ['a.b'])) == EXIT_INPUT_ERROR


def test_runtime_errors_map_to_exit_three():
    assert error_handler(PoseError("no pose", node_id='car')) == EXIT_RUNTIME_ERROR
    assert error_handler(TrainingDivergedError(12, 3)) == EXIT_RUNTIME_ERROR
    assert error_handler(RuntimeError("boom")) == EXIT_RUNTIME_ERROR


def test_diverged_error_details():
    error = TrainingDivergedError(12, 3)
    assert error.details == {'iteration': 12, 'rejected': 3}
    assert '12' in error.message


def test_json_formatter_carries_context_fields():
    record = logging.LogRecord('splat_graph.trainer', logging.INFO, __file__, 1, "step done", None, None)
    record.iteration = 40
    record.scene_id = 'tiny'
    payload = orjson.loads(CustomJsonFormatter('%(message)s').format(record))
    assert payload['message'] == "step done"
    assert payload['iteration'] == 40
    assert payload['scene_id'] == 'tiny'
    assert payload['level'] == 'INFO'


def test_text_formatter_appends_context_pairs():
    record = logging.LogRecord('splat_graph.trainer', logging.WARNING, __file__, 1, "rejected", None, None)
    record.node_id = 'vehicle_0'
    line = ContextTextFormatter('%(levelname)s %(message)s').format(record)
    assert line == "WARNING rejected [node_id=vehicle_0]"


def test_metrics_manager_counts_steps():
    labels = {'status': 'accepted'}
    before = metrics_manager.value('splat_train_steps_total', labels)
    metrics_manager.track_step(0.01, accepted=True)
    assert metrics_manager.value('splat_train_steps_total', labels) == before + 1.0
