"""
Brute-force oracle suite behind `manage.py selftest`.

Each check recomputes a property of the pipeline the slow, obvious way and
compares. A check passes when it returns without raising `CheckFailed`.
"""
import logging
import time
from dataclasses import dataclass, replace

import numpy as np
from django.conf import settings

from analysis.cka import linear_cka
from descriptors.pipeline import extract_many
from descriptors.whitening import learn_whitening, matching_pairs
from dtop.config import ElmConfig, EncoderConfig, FusionConfig, HeadConfig, ModelConfig
from encoder.positions import PositionEmbedding, fold, resample_positions
from encoder.transformer import TokenSequence, encode
from encoder.weights import init_encoder_weights, normal_draw, zeros_draw
from kernels.ops import l2_normalize_rows
from pooling.elm import irb, waveblock
from pooling.fusion import fuse, orthogonal_residual
from pooling.model import DToPModel
from pooling.weights import init_elm_weights
from retrieval.metrics import compute_ap, evaluate
from retrieval.search import DescriptorIndex
from sampler.batching import group_batches

from .synthetic import make_corpus
from .tensorio import decode_tensor, encode_tensor

logger = logging.getLogger(__name__)


class CheckFailed(AssertionError):
    pass


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ''
    seconds: float = 0.0


def expect(condition, message):
    if not condition:
        raise CheckFailed(message)


def trapezoid_ap(ranking, positives, junk):
    cleaned = [item for item in ranking if item not in junk]
    hits = [rank for rank, item in enumerate(cleaned) if item in positives]
    area = 0.0
    for j, rank in enumerate(hits):
        area += ((1.0 if rank == 0 else j / rank) + (j + 1) / (rank + 1)) / 2
    return area / len(positives)


def check_average_precision(rng):
    worst = 0.0
    for _ in range(settings.DTOP['SELFTEST_AP_TRIALS']):
        n = int(rng.integers(1, 21))
        ranking = [str(v) for v in rng.permutation(n)]
        labels = rng.integers(0, 3, size=n)
        positives = {item for item, label in zip(ranking, labels) if label == 0} or {ranking[0]}
        junk = {item for item, label in zip(ranking, labels) if label == 1} - positives
        worst = max(worst, abs(compute_ap(ranking, positives, junk) - trapezoid_ap(ranking, positives, junk)))
    expect(worst <= 1e-12, f'AP deviates from the trapezoid oracle by {worst:.3g}')
    return f'max deviation {worst:.1e}'


def check_position_resampling(rng):
    pe = PositionEmbedding(cls_pos=rng.standard_normal(4), grid=rng.standard_normal((3, 5, 4)))
    stored = resample_positions(pe, 5, 3)
    expect(stored[1:].tobytes() == fold(pe.grid).tobytes(), 'resampling at the stored size is not the identity')
    line = PositionEmbedding(cls_pos=np.zeros(1), grid=np.array([[[2.0], [4.0]]]))
    expect(np.array_equal(resample_positions(line, 3, 1)[1:, 0], [2, 3, 4]), '2x1 -> 3x1 is not [2, 3, 4]')


def check_permutation_equivariance(rng):
    cfg = EncoderConfig(dim=32, depth=4, heads=4, use_stem=False, pos_grid=(3, 2))
    weights = init_encoder_weights(cfg, normal_draw(rng, 0.1))
    tokens = rng.standard_normal((7, 32)).astype(np.float32)
    perm = rng.permutation(6)
    permuted = np.concatenate([tokens[:1], tokens[1:][perm]])
    zeros = np.zeros((7, 32))
    base = encode(TokenSequence(tokens, 3, 2), zeros, weights, cfg.heads)
    moved = encode(TokenSequence(permuted, 3, 2), zeros, weights, cfg.heads)
    worst = max(np.abs(z[1:][perm] - z_perm[1:]).max() for z, z_perm in zip(base.layers, moved.layers))
    expect(worst < 1e-5, f'permutation deviation {worst:.3g}')
    rows = max(np.abs(a.astype(np.float64).sum(axis=-1) - 1).max() for a in base.attention)
    expect(rows < 1e-5, f'attention rows deviate from 1 by {rows:.3g}')
    return f'max deviation {worst:.1e}'


def check_fusion(rng):
    y = rng.standard_normal((3, 4, 8)).astype(np.float32)
    u = rng.standard_normal((3, 4, 8)).astype(np.float32)
    ones = np.ones_like(y)
    expect(np.array_equal(fuse(y, ones, FusionConfig(method='hadamard')), y), 'Hadamard with ones changed Y')
    for method in ('sum', 'hadamard'):
        cfg = FusionConfig(method=method)
        expect(np.array_equal(fuse(y, u, cfg), fuse(u, y, cfg)), f'{method} fusion is not commutative')
    residual = orthogonal_residual(y, u).astype(np.float64)
    dots = np.abs((residual * u).sum(axis=-1))
    bound = 1e-5 * np.linalg.norm(y, axis=-1) * np.linalg.norm(u, axis=-1)
    expect(np.all(dots <= bound), 'orthogonal residual is not orthogonal to U')
    cfg = FusionConfig(method='fast_normalized', v1=0.7, v2=0.7, eps=1e-4)
    expected = 0.7 * (y.astype(np.float64) + u) / (1.4 + 1e-4)
    expect(np.allclose(fuse(y, u, cfg), expected, atol=1e-6), 'fast-normalized fusion mismatch')


def check_locality_module(rng):
    y = rng.standard_normal((7, 7, 8)).astype(np.float32)
    cfg = ElmConfig()
    expect(waveblock(y, cfg, rng).tobytes() == y.tobytes(), 'inference WaveBlock is not the identity')
    weights = init_elm_weights(8, cfg, zeros_draw)
    expect(np.array_equal(irb(y, weights.irb), y), 'zero-weight IRB is not the identity')


def check_cka(rng):
    x = rng.standard_normal((50, 8))
    q, _ = np.linalg.qr(rng.standard_normal((8, 8)))
    expect(abs(linear_cka(x, x) - 1) < 1e-6, 'CKA(X, X) != 1')
    expect(abs(linear_cka(x, 3.5 * x @ q) - 1) < 1e-6, 'CKA is not rotation/scale invariant')
    independent = linear_cka(rng.standard_normal((500, 10)), rng.standard_normal((500, 10)))
    expect(independent < 0.1, f'independent features give CKA {independent:.3f}')


def check_whitening(rng):
    centers = rng.standard_normal((40, 16)) * 3
    spread = rng.standard_normal((16, 16)) * 0.3
    points = centers.repeat(25, axis=0) + rng.standard_normal((1000, 16)) @ spread
    pairs = np.asarray(matching_pairs(np.arange(40).repeat(25)))
    transform = learn_whitening(points, pairs)
    diffs = (points[pairs[:, 0]] - points[pairs[:, 1]]) @ transform.projection.astype(np.float64).T
    error = np.linalg.norm(diffs.T @ diffs / len(pairs) - np.eye(16)) / 4.0
    expect(error < 0.05, f'whitened pair covariance is {error:.1%} from identity')
    return f'{error:.2%} from identity'


def check_tensor_round_trip(rng):
    array = rng.standard_normal((3, 4, 5)).astype(np.float32)
    data = encode_tensor(array)
    decoded, end = decode_tensor(data)
    expect(end == len(data), 'DTT decoder left trailing bytes')
    expect(decoded.tobytes() == array.tobytes() and decoded.shape == array.shape, 'DTT round trip changed data')


def check_sampler(rng):
    metas = [(f'i{i}', int(w), int(h)) for i, (w, h) in enumerate(rng.integers(16, 1200, size=(97, 2)))]
    batches = group_batches(metas, 8, 384 * 384, 8, seed=int(rng.integers(1 << 30)))
    planned = sorted(i for batch in batches for i in batch.ids)
    expect(planned == sorted(m[0] for m in metas), 'batches do not partition the images')


E2E_CONFIG = ModelConfig(
    encoder=EncoderConfig(dim=32, depth=2, heads=2, use_stem=False, patch_size=8, pos_grid=(8, 8),
                          init_std=0.05),
    head=HeadConfig(k=2, out_dim=32, elm=ElmConfig(dilation_rates=(1, 2, 3))),
)


def synthetic_retrieval(seed=0, threads=1, permutations=20, config=E2E_CONFIG):
    """(mAP, chance mAP) of a seeded random-weight model on the pattern corpus."""
    corpus = make_corpus(seed=seed)
    model = DToPModel.initialize(replace(config, seed=seed))
    ids = corpus.ids
    descriptors = extract_many([(i, corpus.images[i]) for i in ids], model, (1.0,), threads)
    matrix = l2_normalize_rows(np.stack([d.values for d in descriptors]))
    truth = corpus.ground_truth()
    queries = {q.id: matrix[ids.index(q.id)] for q in truth}

    found = evaluate(DescriptorIndex(ids, matrix), queries, truth, 'medium').mean_ap
    rng = np.random.default_rng(seed)
    chance = np.mean([
        evaluate(DescriptorIndex(ids, matrix[rng.permutation(len(ids))]), queries, truth, 'medium').mean_ap
        for _ in range(permutations)
    ])
    return found, float(chance)


def check_synthetic_retrieval(rng):
    found, chance = synthetic_retrieval(seed=int(rng.integers(1 << 16)))
    expect(found >= 2 * chance, f'mAP {found:.3f} is below twice chance ({chance:.3f})')
    return f'mAP {found:.3f}, chance {chance:.3f}'


CHECKS = (
    ('average precision', check_average_precision),
    ('position resampling', check_position_resampling),
    ('permutation equivariance', check_permutation_equivariance),
    ('fusion', check_fusion),
    ('locality module', check_locality_module),
    ('cka', check_cka),
    ('whitening', check_whitening),
    ('tensor round trip', check_tensor_round_trip),
    ('sampler partition', check_sampler),
    ('synthetic retrieval', check_synthetic_retrieval),
)


def run_selftest(seed=0, checks=CHECKS):
    results = []
    for index, (name, check) in enumerate(checks):
        rng = np.random.default_rng([seed, index])
        started = time.perf_counter()
        try:
            detail = check(rng) or ''
            passed = True
        except Exception as exc:
            logger.debug('check %s failed', name, exc_info=True)
            detail, passed = f'{type(exc).__name__}: {exc}', False
        results.append(CheckResult(name, passed, detail, time.perf_counter() - started))
    return results
