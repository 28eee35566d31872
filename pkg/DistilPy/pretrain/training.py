"""
The epoch loop shared by every training stage: Adam over minibatches drawn
from a seeded permutation, a per-epoch mean loss trace, and divergence
detection.
"""
import math

import torch
from tqdm import tqdm

from DistilPy.base import TrainingFailure, logger, progress_enabled
from DistilPy.core.seeding import torch_generator


def minibatches(count, batch_size, generator, min_size=1):
    """
    Index batches over a fresh permutation of ``range(count)``. A trailing
    batch smaller than ``min_size`` is folded into the previous one.
    """
    order = torch.randperm(count, generator=generator)
    batches = list(torch.split(order, batch_size))
    if len(batches) > 1 and len(batches[-1]) < min_size:
        tail = batches.pop()
        batches[-1] = torch.cat([batches[-1], tail])
    return batches


def run_epochs(stage, parameters, count, step, epochs, learning_rate, batch_size, seed,
               min_batch=1):
    """
    Minimizes ``step(indices) -> loss`` for ``epochs`` epochs and returns the
    per-epoch mean loss trace. A non-finite loss raises TrainingFailure naming
    the stage and the epoch.
    """
    parameters = [p for p in parameters if p.requires_grad]
    trace = []
    if epochs == 0 or count == 0:
        return trace
    optimizer = torch.optim.Adam(parameters, lr=learning_rate)
    generator = torch_generator(seed)

    epoch_range = tqdm(range(epochs), desc=stage, disable=not progress_enabled(), leave=False)
    for epoch in epoch_range:
        total, seen = 0.0, 0
        for indices in minibatches(count, batch_size, generator, min_batch):
            loss = step(indices)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise TrainingFailure(stage, epoch)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += value * len(indices)
            seen += len(indices)
        trace.append(total / seen)
        logger.debug("%s epoch %d loss %.6f", stage, epoch, trace[-1])
    return trace
