import json
import os

import pytest

from motioncluster.annotations import MotionAnnotation, write_annotations
from motioncluster.cli import main
from motioncluster.shapes import load_dataset


@pytest.fixture
def dataset(tmp_path):
    out = str(tmp_path / 'data')
    assert(main(['-q', 'synth', '--family', 'hinged_door', '--count', '2', '--pose-level', '2',
                 '--out', out]) == 0)
    return out


def truth_file(data, path):
    """Predictions equal to the ground truth of a dataset."""
    annotations = {shape.id: [MotionAnnotation(pid, gt.type, gt.axis, gt.center, gt.range, 1.0)
                              for pid, gt in shape.ground_truth.items()]
                   for shape in load_dataset(data)}
    write_annotations(path, annotations)
    return path


def test_synth(dataset):
    shapes = load_dataset(dataset)
    assert([s.id for s in shapes] == ['hinged_door_000', 'hinged_door_001'])


def test_synth_bad_count(tmp_path):
    assert(main(['synth', '--family', 'laptop', '--count', '1', '--out', str(tmp_path)]) == 1)


def test_bad_arguments():
    with pytest.raises(SystemExit):
        main(['synth', '--family', 'toaster', '--count', '2', '--out', 'x'])
    with pytest.raises(SystemExit):
        main(['-v', '-q', 'gradcheck'])


def test_eval(dataset, tmp_path, capsys):
    pred = truth_file(dataset, str(tmp_path / 'pred.json'))
    report = str(tmp_path / 'out' / 'report.json')
    assert(main(['eval', '--pred', pred, '--gt', dataset, '--out', report]) == 0)
    data = json.load(open(report))
    assert(data['type_accuracy'] == 1.0)
    assert(data['mean_axis_error_deg'] < 1e-3)
    assert(data['mean_range_iou'] > 0.999)
    assert('hinged_door' in capsys.readouterr().out)


def test_eval_mismatch(dataset, tmp_path):
    path = str(tmp_path / 'pred.json')
    write_annotations(path, {'hinged_door_000': [MotionAnnotation('body', 'static')]})
    assert(main(['eval', '--pred', path, '--gt', dataset, '--out',
                 str(tmp_path / 'report.json')]) == 1)


def test_discover_input_errors(dataset, tmp_path):
    config = tmp_path / 'bad.yaml'
    config.write_text('selection:\n  lambda9: 1\n')
    assert(main(['discover', '--data', dataset, '--config', str(config),
                 '--out', str(tmp_path / 'run')]) == 1)
    empty = tmp_path / 'empty'
    empty.mkdir()
    assert(main(['discover', '--data', str(empty), '--out', str(tmp_path / 'run')]) == 1)
    assert(main(['discover', '--data', dataset, '--k', '0', '--out', str(tmp_path / 'run')]) == 1)


def test_export(dataset, tmp_path):
    pred = truth_file(dataset, str(tmp_path / 'pred.json'))
    out = str(tmp_path / 'door.obj')
    assert(main(['export', '--data', dataset, '--pred', pred, '--shape', 'hinged_door_001',
                 '--out', out]) == 0)
    assert(os.path.getsize(out) > 0)
    assert(main(['export', '--data', dataset, '--pred', pred, '--shape', 'nope',
                 '--out', out]) == 1)
