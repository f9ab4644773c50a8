"""HTML summary of a run directory: per-epoch median losses, eval rows and grid images."""
import csv
import logging
import os
from pathlib import Path
from statistics import median
from typing import Dict, List, Union

from jinja2 import Template

from .pgm_io import read_pgm, write_png

logger = logging.getLogger(__name__)

TEMPLATE_FILE = "report.html.j2"
REPORT_FILE = "report.html"
IMAGES_DIR = "report_images"


def _read_csv(path: Path) -> List[Dict[str, str]]:
    if not path.exists():
        return []
    with open(path, 'r', newline='', encoding='utf-8') as f:
        return list(csv.DictReader(f))


def epoch_medians(loss_rows: List[Dict[str, str]]) -> List[Dict[str, float]]:
    by_epoch: Dict[int, Dict[str, List[float]]] = {}
    for row in loss_rows:
        bucket = by_epoch.setdefault(int(row['epoch']), {'d': [], 'g': []})
        bucket['d'].append(float(row['d_loss']))
        bucket['g'].append(float(row['g_loss']))
    return [{'epoch': epoch, 'batches': len(b['d']), 'd_loss': median(b['d']), 'g_loss': median(b['g'])}
            for epoch, b in sorted(by_epoch.items())]


def render_report(out_dir: Union[str, Path]) -> Path:
    out_dir = Path(out_dir)
    template_path = Path(os.path.dirname(os.path.abspath(__file__))) / 'templates' / TEMPLATE_FILE
    with open(template_path, 'r', encoding='utf-8') as f:
        template = Template(f.read())

    grids = []
    for pgm in sorted((out_dir / 'grids').glob('*.pgm')):
        png = out_dir / IMAGES_DIR / f"{pgm.stem}.png"
        write_png(png, read_pgm(pgm))
        grids.append({'name': pgm.stem, 'src': f"{IMAGES_DIR}/{png.name}"})

    eval_rows = _read_csv(out_dir / 'eval_report.csv')
    config_path = out_dir / 'config.echo'
    html = template.render(
        run_dir=str(out_dir),
        config_text=config_path.read_text(encoding='utf-8') if config_path.exists() else '',
        losses=epoch_medians(_read_csv(out_dir / 'losses.csv')),
        eval_columns=list(eval_rows[0].keys()) if eval_rows else [],
        eval_rows=eval_rows,
        grids=grids,
    )
    report_path = out_dir / REPORT_FILE
    report_path.write_text(html, encoding='utf-8')
    logger.debug(f"Rendered report {report_path} with {len(grids)} grid images")
    return report_path
