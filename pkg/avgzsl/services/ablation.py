#!/usr/bin/env python3
"""
Loss-term ablation: the full objective and one run per dropped term
"""

import logging
from dataclasses import dataclass, replace
from typing import List, Sequence, Tuple

from .data import Dataset
from .evaluate import EvalReport, ModalityCondition, evaluate_classification
from .losses import TERMS
from .model import ArchitectureSpec
from .trainer import TrainConfig, train

logger = logging.getLogger(__name__)

ABLATION_ROWS: List[Tuple[str, Tuple[str, ...]]] = [('full', ())] + [(f'-L_{t.upper()}', (t,)) for t in TERMS]


@dataclass(frozen=True)
class AblationRow:
    name: str
    dropped: Tuple[str, ...]
    report: EvalReport


def ablate(dataset: Dataset, arch: ArchitectureSpec, base_config: TrainConfig, condition='both',
           split: str = 'test', rows: Sequence[Tuple[str, Tuple[str, ...]]] = ABLATION_ROWS) -> List[AblationRow]:
    """Train once per row with the same seed and score every run on `split`"""
    condition = ModalityCondition.parse(condition)
    records = dataset.splits.get(split)
    results = []
    for name, dropped in rows:
        config = replace(base_config, loss=base_config.loss.without(*dropped))
        params, _ = train(dataset, arch, config)
        report = evaluate_classification(params, dataset.manifest, records, condition)
        results.append(AblationRow(name, tuple(dropped), report))
        logger.info('Ablation row finished', extra={'row': name, 'HM': report.hm})
    return results


def format_table(rows: Sequence[AblationRow]) -> str:
    header = ('loss', 'S', 'U', 'HM')
    body = [(row.name, f'{row.report.seen:.2f}', f'{row.report.unseen:.2f}', f'{row.report.hm:.2f}')
            for row in rows]
    widths = [max(len(line[i]) for line in [header] + body) for i in range(len(header))]
    lines = []
    for line in [header] + body:
        cells = [line[0].ljust(widths[0])] + [cell.rjust(w) for cell, w in zip(line[1:], widths[1:])]
        lines.append('  '.join(cells))
    return '\n'.join(lines) + '\n'
