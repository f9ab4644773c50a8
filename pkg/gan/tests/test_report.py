#!/usr/bin/env python3
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent.parent))

from cgan.pgm_io import write_pgm
from cgan.report import REPORT_FILE, epoch_medians, render_report


def test_epoch_medians():
    rows = [
        {'epoch': '1', 'batch': '0', 'd_loss': '1.0', 'g_loss': '2.0'},
        {'epoch': '1', 'batch': '1', 'd_loss': '3.0', 'g_loss': '4.0'},
        {'epoch': '1', 'batch': '2', 'd_loss': '2.0', 'g_loss': '0.5'},
        {'epoch': '2', 'batch': '0', 'd_loss': '0.7', 'g_loss': '1.1'},
    ]
    medians = epoch_medians(rows)
    assert medians[0] == {'epoch': 1, 'batches': 3, 'd_loss': 2.0, 'g_loss': 2.0}
    assert medians[1]['epoch'] == 2 and medians[1]['d_loss'] == 0.7


def test_render_report(tmp_path):
    (tmp_path / 'losses.csv').write_text("epoch,batch,d_loss,g_loss\n1,0,1.25,0.75\n")
    (tmp_path / 'eval_report.csv').write_text("epoch,cb_energy,acc\n1,0.125,0.5\n")
    (tmp_path / 'config.echo').write_text("epochs = 1\n")
    write_pgm(tmp_path / 'grids' / 'grid_epoch_001.pgm', np.zeros((8, 8), dtype=np.uint8))

    path = render_report(tmp_path)
    assert path == tmp_path / REPORT_FILE
    html = path.read_text()
    assert 'report_images/grid_epoch_001.png' in html
    assert 'cb_energy' in html and '0.125' in html
    assert 'epochs = 1' in html
    assert (tmp_path / 'report_images' / 'grid_epoch_001.png').exists()


def test_render_report_on_empty_run(tmp_path):
    html = render_report(tmp_path).read_text()
    assert '<html' in html
