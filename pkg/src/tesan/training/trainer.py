from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from ..attention import ModelParams, init_params
from ..journeys import SampleSet, Vocabulary, sample_negatives_batch
from .backprop import forward_backward
from .checkpoint import Checkpoint, CheckpointError, save_checkpoint
from .config import TrainConfig
from .optim import OPTIMIZERS

logger = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


class Trainer:
    """Mini-batch training over a fixed :class:`SampleSet`.

    Each batch is cut into chunks of ``config.chunk_size`` samples whose
    gradients are summed in chunk order, so the result does not depend on
    how many worker threads computed the chunks.
    """

    def __init__(self, samples: SampleSet, vocab: Vocabulary, config: TrainConfig,
                 resume: Checkpoint | None = None) -> None:
        if len(samples) == 0:
            raise ValueError("no training samples")
        self.samples = samples
        self.vocab = vocab
        self.config = config
        self.dtype = np.dtype(config.dtype)
        self.history: list[float] = []
        if resume is None:
            self.rng = np.random.default_rng(config.seed)
            max_interval = config.max_interval
            if max_interval is None:
                max_interval = samples.max_interval()
            self.params = init_params(len(vocab), config.dim, max_interval, self.rng, config.mode,
                                      dual_tables=config.dual_tables, dtype=self.dtype)
            self.epoch = 0
            self.optimizer = OPTIMIZERS[config.optimizer](self.params, lr=config.learning_rate)
        else:
            if resume.vocab_digest != vocab.digest():
                raise CheckpointError("checkpoint was trained on a different vocabulary")
            self.params = resume.params.copy()
            self.rng = np.random.default_rng()
            self.rng.bit_generator.state = resume.rng_state
            self.epoch = resume.epoch
            self.optimizer = OPTIMIZERS[config.optimizer](self.params, lr=config.learning_rate)
            self.optimizer.load_state(resume.optimizer_state)

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            params=self.params.copy(),
            config=self.config,
            vocab_digest=self.vocab.digest(),
            epoch=self.epoch,
            rng_state=self.rng.bit_generator.state,
            optimizer_state={k: v.copy() for k, v in self.optimizer.state().items()},
        )

    def _chunk_grad(self, idx: np.ndarray, negatives: np.ndarray):
        s = self.samples
        mask = s.mask[idx]
        width = int(mask.sum(axis=1).max())
        return forward_backward(self.params, s.ids[idx, :width], s.days[idx, :width],
                                mask[:, :width], s.targets[idx], negatives)

    def _batch_grad(self, idx: np.ndarray, pool: ThreadPoolExecutor | None):
        negatives = sample_negatives_batch(self.vocab, self.samples.targets[idx],
                                           self.config.negatives, self.rng)
        step = self.config.chunk_size
        jobs = [(idx[k:k + step], negatives[k:k + step]) for k in range(0, len(idx), step)]
        if pool is None:
            results = [self._chunk_grad(*job) for job in jobs]
        else:
            results = list(pool.map(lambda job: self._chunk_grad(*job), jobs))
        loss, grads = results[0]
        grads = {k: v.copy() for k, v in grads.items()}
        for part_loss, part in results[1:]:
            loss += part_loss
            for k in grads:
                grads[k] += part[k]
        return loss, grads

    def run_epoch(self, pool: ThreadPoolExecutor | None = None) -> float:
        order = self.rng.permutation(len(self.samples))
        total = 0.0
        for start in range(0, len(order), self.config.batch_size):
            loss, grads = self._batch_grad(order[start:start + self.config.batch_size], pool)
            if not np.isfinite(loss):
                raise FloatingPointError("non-finite loss")
            self.optimizer.step(self.params, grads)
            total += loss
        self.epoch += 1
        return total / len(self.samples)

    def fit(self, checkpoint_path: str | Path | None = None) -> ModelParams:
        pool = ThreadPoolExecutor(self.config.workers) if self.config.workers > 1 else None
        try:
            while self.epoch < self.config.epochs:
                good = self.checkpoint()
                try:
                    mean = self.run_epoch(pool)
                except FloatingPointError as exc:
                    if checkpoint_path is not None:
                        save_checkpoint(good, checkpoint_path)
                    raise TrainingDivergedError(
                        f"training diverged in epoch {self.epoch + 1} ({exc}); "
                        f"last good state is epoch {good.epoch}"
                    ) from exc
                if not all(np.all(np.isfinite(a)) for _, a in self.params.tensors()):
                    if checkpoint_path is not None:
                        save_checkpoint(good, checkpoint_path)
                    raise TrainingDivergedError(f"parameters became non-finite in epoch {self.epoch}")
                self.history.append(mean)
                logger.info("epoch %d/%d  mean loss %.6f", self.epoch, self.config.epochs, mean)
                if checkpoint_path is not None:
                    save_checkpoint(self.checkpoint(), checkpoint_path)
        finally:
            if pool is not None:
                pool.shutdown()
        return self.params


def train(samples: SampleSet, vocab: Vocabulary, config: TrainConfig,
          checkpoint_path: str | Path | None = None) -> ModelParams:
    return Trainer(samples, vocab, config).fit(checkpoint_path)
