"""Acceptance suite: one test per shipping criterion, in order.

Each test prints a single PASS line with its measured numbers once its
assertions hold, so a -s run reads as a checklist.  The expensive fixtures
(synthetic corpus, stage-1 and stage-2 training runs) are module-scoped and
shared across criteria.
"""

import json
import math
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from tamperscope import autodiff as ad
from tamperscope.autodiff import Tensor, grad_check, sigmoid
from tamperscope.cli import main
from tamperscope.forge import (
    composite_forgery,
    make_perturbation,
    make_triplet,
    render_face,
    sample_mask,
    synthesize_content,
)
from tamperscope.instruct import FuserConfig
from tamperscope.interpreter import InterpreterConfig
from tamperscope.maskdec import mask_loss
from tamperscope.metrics import bleu, cider, mask_iou_pr, plm, rouge_l
from tamperscope.prompter import (
    PrompterConfig,
    RegionPrompter,
    bce_loss,
    dice_loss,
    prompter_loss,
)
from tamperscope.qc import validate_triplet
from tamperscope.regions import DEFAULT_REGIONS, RegionRegistry, extract_region_labels
from tamperscope.train import (
    DatasetView,
    OptimConfig,
    eval_interpreter,
    eval_prompter,
    load_prompter,
    make_optimizer,
    train_interpreter,
    train_prompter,
    PromptCache,
    build_vocab,
)

pytestmark = pytest.mark.acceptance

REGISTRY = RegionRegistry(DEFAULT_REGIONS)

# Sparse-modification mix: most regions untouched per sample, so a random
# region-set guess scores low while a trained prompter has real headroom.
CRIT7_TOML = """
seed = 0
split_ratios = [8, 1, 1]

[data]
n = 2000
size = 48
full_face_prob = 0.07
method_probs = [0.22, 0.39, 0.39]
k_min = 1
k_max = 6

[optim_fpn]
lr = 3e-3
warmup_steps = 60
epochs = 5
batch = 8
samples_per_epoch = 1600

[optim_stage2]
lr = 1.5e-3
warmup_steps = 60
epochs = 6
batch = 8
samples_per_epoch = 1200
"""

TINY_TOML = """
seed = 3
split_ratios = [8, 1, 1]

[data]
n = 40
size = 32

[fpn]
image_size = 32
patch_size = 8
embed_dim = 16
depth = 1
heads = 2
m = 1
mlp_ratio = 2

[qformer]
num_query_tokens = 2
embed_dim = 16
heads = 2
depth = 1
decoder_depth = 1
max_caption_len = 40
max_seq_len = 120
mlp_ratio = 2
enc_depth = 1

[optim_fpn]
lr = 3e-3
warmup_steps = 4
epochs = 1
batch = 8
samples_per_epoch = 16

[optim_stage2]
lr = 1e-3
warmup_steps = 4
epochs = 1
batch = 4
samples_per_epoch = 8
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def crit7_dataset(workdir):
    config = workdir / "crit7.toml"
    config.write_text(CRIT7_TOML)
    ds = workdir / "data2000"
    assert main(["synth", "--config", str(config), "--out", str(ds)]) == 0
    return ds, config


@pytest.fixture(scope="module")
def crit7_run(workdir, crit7_dataset):
    ds, config = crit7_dataset
    out = workdir / "fpn_run"
    t0 = time.monotonic()
    assert main(["train-fpn", "--config", str(config), "--dataset", str(ds), "--out", str(out)]) == 0
    elapsed = time.monotonic() - t0
    report = json.loads((out / "report.json").read_text())
    return ds, out, report, elapsed


# ---------------------------------------------------------------------------
# 1. gradient suite
# ---------------------------------------------------------------------------


def test_c01_gradient_suite():
    t0 = time.monotonic()
    rng = np.random.default_rng(2024)
    worst: dict[str, float] = {}

    def check(name, fn, sampler, points=100):
        errs = [grad_check(fn, sampler()) for _ in range(points)]
        worst[name] = max(errs)
        assert worst[name] < 1e-4, f"{name}: max rel err {worst[name]:.2e}"

    w_small = Tensor(rng.normal(size=(3, 3)))
    emb_ids = [0, 2, 1, 2]
    conv_k = Tensor(rng.normal(size=(2, 1, 3, 3)) * 0.4)
    coord_k = Tensor(rng.normal(size=(2, 3, 3, 3)) * 0.4)

    ops = [
        ("add", lambda t: ad.tsum((t + t * 0.5) * w_small), lambda: rng.normal(size=(3, 3))),
        ("sub", lambda t: ad.tsum((t - 2.0 * t) * w_small), lambda: rng.normal(size=(3, 3))),
        ("mul", lambda t: ad.tsum(t * t * w_small), lambda: rng.normal(size=(3, 3))),
        ("div", lambda t: ad.tsum(w_small / (t * t + 2.0)), lambda: rng.normal(size=(3, 3))),
        ("neg", lambda t: ad.tsum(-t * w_small), lambda: rng.normal(size=(3, 3))),
        ("matmul", lambda t: ad.tsum(ad.matmul(t, w_small) * 0.7), lambda: rng.normal(size=(2, 3))),
        ("reshape", lambda t: ad.tsum(ad.reshape(t, (9,)) * ad.reshape(w_small, (9,))), lambda: rng.normal(size=(3, 3))),
        ("transpose", lambda t: ad.tsum(ad.transpose(t, (1, 0)) * w_small), lambda: rng.normal(size=(3, 3))),
        ("concat", lambda t: ad.tsum(ad.concat([t, t * 2.0], axis=0) * 1.3), lambda: rng.normal(size=(2, 3))),
        ("narrow", lambda t: ad.tsum(ad.narrow(t, 0, 1, 2) * ad.narrow(t, 0, 0, 2)), lambda: rng.normal(size=(3, 3))),
        ("sum", lambda t: ad.tsum(ad.tsum(t, axis=0) * ad.tsum(t, axis=1)), lambda: rng.normal(size=(3, 3))),
        ("mean", lambda t: ad.tmean(t * t), lambda: rng.normal(size=(3, 3))),
        ("softmax", lambda t: ad.tsum(ad.softmax(t, axis=-1) * w_small), lambda: rng.normal(size=(3, 3))),
        ("sigmoid", lambda t: ad.tsum(ad.sigmoid(t) * w_small), lambda: rng.normal(size=(3, 3))),
        ("sqrt", lambda t: ad.tsum(ad.sqrt(t * t + 1.0) * w_small), lambda: rng.normal(size=(3, 3))),
        ("gelu", lambda t: ad.tsum(ad.gelu(t) * w_small), lambda: rng.normal(size=(3, 3))),
        ("log_clamped", lambda t: ad.tsum(ad.log_clamped(t) * ad.log_clamped(1.0 - t)), lambda: rng.uniform(0.05, 0.95, size=(3, 3))),
        ("embedding", lambda t: ad.tsum(ad.embedding(t, emb_ids) * 1.1), lambda: rng.normal(size=(3, 4))),
        ("conv2d", lambda t: ad.tsum(ad.conv2d(t, conv_k, stride=2, padding=1) * 0.5), lambda: rng.normal(size=(1, 5, 5))),
        ("coordconv2d", lambda t: ad.tsum(ad.coordconv2d(t, coord_k, stride=1, padding=1) * 0.5), lambda: rng.normal(size=(1, 4, 4))),
    ]
    for name, fn, sampler in ops:
        check(name, fn, sampler)

    # full stage-1 forward plus its combined loss
    fpn_cfg = PrompterConfig(image_size=4, in_channels=1, patch_size=4, embed_dim=4, depth=1, heads=2, m=1, conv_strides=(1,), mlp_ratio=2)
    fpn = RegionPrompter(fpn_cfg, REGISTRY, np.random.default_rng(7))
    gt = np.zeros(21)
    gt[[2, 9, 17]] = 1.0

    def fpn_loss_fn(t):
        logits, _ = fpn.forward(t)
        return prompter_loss(sigmoid(logits), gt, 0.2)

    check("fpn_forward", fpn_loss_fn, lambda: rng.normal(size=(1, 4, 4)))

    # full stage-2 forward plus its joint loss
    from tamperscope.instruct import Vocabulary, build_instruction
    from tamperscope.interpreter import ForgeryInterpreter

    vocab = Vocabulary.from_texts(["the nose , chin look rough ."])
    icfg = InterpreterConfig(
        image_size=4, in_channels=1, patch_size=2, enc_depth=1,
        fuser=FuserConfig(num_query_tokens=1, embed_dim=4, heads=2, depth=1, decoder_depth=1, max_caption_len=8, max_seq_len=40, mlp_ratio=2),
    )
    interp = ForgeryInterpreter(icfg, len(vocab), np.random.default_rng(8))
    instr = build_instruction(["nose"], vocab)
    caption = vocab.encode("the nose look rough .")
    prompt_tokens = rng.normal(size=(2, 4))
    gt_mask = (np.random.default_rng(9).random((4, 4)) < 0.5).astype(float)

    def stage2_loss_fn(t):
        total, _, _ = interp.losses(t, instr.token_ids, prompt_tokens, caption, gt_mask)
        return total

    check("stage2_forward", stage2_loss_fn, lambda: rng.normal(size=(1, 4, 4)))

    elapsed = time.monotonic() - t0
    assert elapsed < 120.0, f"gradient suite took {elapsed:.1f}s"
    print(f"\nACCEPTANCE 1 PASS: {len(worst)} ops/forwards x100 points, "
          f"worst rel err {max(worst.values()):.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. loss identities
# ---------------------------------------------------------------------------


def test_c02_loss_identities():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        y = (rng.random(21) < rng.uniform(0.1, 0.9)).astype(float)
        if y.sum() == 0:
            y[int(rng.integers(0, 21))] = 1.0
        assert abs(dice_loss(Tensor(y), y).item()) <= 1e-6

    gt = (rng.random((6, 7)) < 0.5).astype(float)
    ln2 = mask_loss(Tensor(np.full((6, 7), 0.5)), gt).item()
    assert abs(ln2 - math.log(2.0)) <= 1e-9

    max_bce_gap = 0.0
    for _ in range(200):
        p = rng.uniform(0.02, 0.98, 21)
        y = (rng.random(21) < 0.4).astype(float)
        ours = bce_loss(Tensor(p), y, omega=1.0).item()
        plain = float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))
        max_bce_gap = max(max_bce_gap, abs(ours - plain))
    assert max_bce_gap <= 1e-12

    max_half_gap = 0.0
    for _ in range(200):
        p = rng.uniform(0.05, 0.95, 21)
        y = (rng.random(21) < 0.4).astype(float)
        a = bce_loss(Tensor(p), y, 0.2).item()
        b = dice_loss(Tensor(p), y).item()
        max_half_gap = max(max_half_gap, abs(prompter_loss(Tensor(p), y, 0.2).item() - (a + b) / 2.0))
    assert max_half_gap <= 1e-15

    print(f"\nACCEPTANCE 2 PASS: dice(Y,Y)=0 x1000, mask(0.5)=ln2 ({ln2:.12f}), "
          f"omega=1 gap {max_bce_gap:.1e}, half-sum gap {max_half_gap:.1e}")


# ---------------------------------------------------------------------------
# 3. PLM oracle
# ---------------------------------------------------------------------------


def test_c03_plm_oracle():
    rng = np.random.default_rng(8)
    names = list(REGISTRY.names)
    for _ in range(1000):
        a = {names[i] for i in rng.choice(21, size=int(rng.integers(0, 13)), replace=False)}
        b = {names[i] for i in rng.choice(21, size=int(rng.integers(0, 13)), replace=False)}
        inter = sum(1 for n in names if n in a and n in b)
        union = sum(1 for n in names if n in a or n in b)
        expected = 1.0 if union == 0 else inter / union
        assert plm(a, b, REGISTRY) == expected
    assert plm(set(), set(), REGISTRY) == 1.0
    print("\nACCEPTANCE 3 PASS: 1000 random pairs match exhaustive enumeration; both-empty -> 1.0")


# ---------------------------------------------------------------------------
# 4. caption metric oracles on a fixed 3-document corpus
# ---------------------------------------------------------------------------

ORACLE_CANDS = ["the nose looks very smooth", "a chin so warped", "eyes full of speckles"]
ORACLE_REFS = ["the nose looks very glossy", "a chin so blurred", "eyes full of grainy specks"]


def test_c04_caption_metric_oracles():
    # hand-counted clipped n-gram tallies over the three documents:
    #   doc1: 1g 4/5, 2g 3/4, 3g 2/3, 4g 1/2
    #   doc2: 1g 3/4, 2g 2/3, 3g 1/2, 4g 0/1
    #   doc3: 1g 3/4, 2g 2/3, 3g 1/2, 4g 0/1
    p1, p2, p3, p4 = 10 / 13, 7 / 10, 4 / 7, 1 / 4
    bp = math.exp(1.0 - 14 / 13)  # candidate tokens 13 < reference tokens 14
    expected_bleu = [
        bp * p1,
        bp * (p1 * p2) ** (1 / 2),
        bp * (p1 * p2 * p3) ** (1 / 3),
        bp * (p1 * p2 * p3 * p4) ** (1 / 4),
    ]
    for n, want in enumerate(expected_bleu, start=1):
        got = bleu(ORACLE_CANDS, ORACLE_REFS, n)
        assert abs(got - want) <= 1e-9, f"BLEU-{n}: {got} vs {want}"

    # ROUGE-L by hand: LCS 4/5&4/5, 3/4&3/4, 3/4&3/5, beta=1.2
    def f_measure(p, r, beta=1.2):
        return ((1 + beta**2) * p * r) / (r + beta**2 * p)

    expected_rouge = (f_measure(4 / 5, 4 / 5) + f_measure(3 / 4, 3 / 4) + f_measure(3 / 4, 3 / 5)) / 3.0
    got_rouge = float(np.mean([rouge_l(c, r) for c, r in zip(ORACLE_CANDS, ORACLE_REFS)]))
    assert abs(got_rouge - expected_rouge) <= 1e-9

    # CIDEr against an independent from-first-principles evaluation
    def cider_oracle(cands, refs, sigma=6.0):
        cand_toks = [c.split() for c in cands]
        ref_toks = [r.split() for r in refs]
        n_docs = len(ref_toks)

        def grams(tokens, order):
            out = {}
            for i in range(len(tokens) - order + 1):
                g = tuple(tokens[i : i + order])
                out[g] = out.get(g, 0) + 1
            return out

        scores = []
        for c, r in zip(cand_toks, ref_toks):
            per_order = []
            for order in range(1, 5):
                df = Counter()
                for doc in ref_toks:
                    df.update(set(grams(doc, order)))
                cg, rg = grams(c, order), grams(r, order)
                u = {g: k * math.log(n_docs / df.get(g, 1)) for g, k in cg.items()}
                v = {g: k * math.log(n_docs / df.get(g, 1)) for g, k in rg.items()}
                nu = math.sqrt(sum(x * x for x in u.values()))
                nv = math.sqrt(sum(x * x for x in v.values()))
                if nu == 0 or nv == 0:
                    per_order.append(0.0)
                    continue
                dot = sum(u[g] * v.get(g, 0.0) for g in u)
                per_order.append(dot / (nu * nv) * math.exp(-((len(c) - len(r)) ** 2) / (2 * sigma**2)))
            scores.append(10.0 * sum(per_order) / 4.0)
        return sum(scores) / len(scores), scores

    got_corpus, got_samples = cider(ORACLE_CANDS, ORACLE_REFS)
    want_corpus, want_samples = cider_oracle(ORACLE_CANDS, ORACLE_REFS)
    for got, want in zip(got_samples, want_samples):
        assert abs(got - want) <= 1e-9
    assert abs(got_corpus - want_corpus) <= 1e-9

    # self-evaluation is exactly 1.0 for BLEU and ROUGE
    for n in (1, 2, 3, 4):
        assert bleu(ORACLE_REFS, list(ORACLE_REFS), n) == 1.0
    assert all(rouge_l(r, r) == 1.0 for r in ORACLE_REFS)

    print(f"\nACCEPTANCE 4 PASS: BLEU-1..4 {[round(b, 6) for b in expected_bleu]}, "
          f"ROUGE-L {expected_rouge:.6f}, CIDEr {want_corpus:.6f} all match to 1e-9; self-eval exact 1.0")


# ---------------------------------------------------------------------------
# 5. compositing identities
# ---------------------------------------------------------------------------


def test_c05_compositing():
    kinds = ("blur", "noise", "color-shift", "geometry-warp", "texture-swap")
    rng = np.random.default_rng(13)
    for trial in range(100):
        image, layout = render_face(int(rng.integers(0, 10_000)), 32, REGISTRY)
        mask, _ = sample_mask(layout, np.random.default_rng(trial), REGISTRY, full_face_prob=0.1)
        spec = make_perturbation(kinds[trial % 5], rng)
        content_seed = int(rng.integers(0, 2**31))
        generated = synthesize_content(image, spec, np.random.default_rng(content_seed))
        forged = composite_forgery(image, mask, spec, np.random.default_rng(content_seed))
        expected = np.where(mask[..., None] > 0, generated, image)
        assert np.array_equal(forged, expected)
        assert np.array_equal(composite_forgery(image, np.zeros_like(mask), spec, np.random.default_rng(1)), image)
        full = composite_forgery(image, np.ones_like(mask), spec, np.random.default_rng(content_seed))
        assert np.array_equal(full, generated)
    print("\nACCEPTANCE 5 PASS: 100 random triplets composite bit-exactly; M=0 and M=1 identities hold")


# ---------------------------------------------------------------------------
# 6. mask sampler distribution
# ---------------------------------------------------------------------------


def test_c06_mask_sampler_distribution():
    _, layout = render_face(99, 48, REGISTRY)
    rng = np.random.default_rng(1234)
    n = 10_000
    full = 0
    k_counts = Counter()
    n_present = len(layout.present_regions(REGISTRY))
    for _ in range(n):
        _, regions = sample_mask(layout, rng, REGISTRY, full_face_prob=0.2)
        if len(regions) == n_present:
            full += 1
        else:
            k_counts[len(regions)] += 1
    frac = full / n
    assert abs(frac - 0.2) <= 0.02, f"full-face fraction {frac}"
    n_loc = n - full
    p = 1 / 11
    sigma = math.sqrt(n_loc * p * (1 - p))
    for k in range(1, 12):
        assert abs(k_counts[k] - n_loc * p) <= 3 * sigma, f"k={k}: {k_counts[k]} vs {n_loc * p:.0f}+/-{3 * sigma:.0f}"
    print(f"\nACCEPTANCE 6 PASS: full-face fraction {frac:.4f} in 0.2+/-0.02; "
          f"k histogram uniform over 1..11 within 3 sigma (sigma={sigma:.1f})")


# ---------------------------------------------------------------------------
# 7. toy end-to-end stage-1 training
# ---------------------------------------------------------------------------


def test_c07_toy_fpn_training(crit7_run):
    ds, out, report, elapsed = crit7_run
    best = report["best_val_plm"]
    assert elapsed < 600.0, f"training took {elapsed:.0f}s"
    assert best >= 0.6, f"held-out PLM {best:.4f} < 0.6"

    # random-set baseline, mean over 5 seeds
    view = DatasetView(ds)
    val_ids = view.ids("val")
    baselines = []
    for seed in range(5):
        rng = np.random.default_rng([seed, 77])
        scores = []
        for sid in val_ids:
            pred = {REGISTRY.names[i] for i in range(21) if rng.random() < 0.5}
            scores.append(plm(pred, view.records[sid]["regions"], REGISTRY))
        baselines.append(float(np.mean(scores)))
    baseline = float(np.mean(baselines))
    assert baseline <= 0.25, f"random baseline {baseline:.4f}"
    print(f"\nACCEPTANCE 7 PASS: trained held-out PLM {best:.4f} >= 0.6 in {elapsed:.0f}s (<600s); "
          f"random baseline {baseline:.4f} <= 0.25")


# ---------------------------------------------------------------------------
# 8. ablation ordering (directional)
# ---------------------------------------------------------------------------


def test_c08_ablation_ordering(workdir):
    from tamperscope.forge import generate_dataset, load_manifest
    from tamperscope.qc import split_dataset

    ds = workdir / "ablation"
    generate_dataset(ds, n=700, seed=21, registry=REGISTRY, size=32,
                     full_face_prob=0.05, method_probs=(0.12, 0.44, 0.44), k_min=1, k_max=5)
    ids = [r["id"] for r in load_manifest(ds)]
    train, val, test = split_dataset(ids, seed=21)
    (ds / "splits.json").write_text(json.dumps({"train": train, "val": val, "test": test}))
    view = DatasetView(ds)
    train_ids = view.ids("train")
    val_ids = view.ids("val")
    labels = {s: extract_region_labels(view.records[s]["caption"], view.registry).values for s in train_ids}

    def run_arm(seed, omega, m, use_dice):
        cfg = PrompterConfig(image_size=32, patch_size=8, m=m, omega=omega)
        model = RegionPrompter(cfg, view.registry, np.random.default_rng([seed, 0]))
        params = model.named_parameters()
        batch, epochs = 8, 3
        opt = make_optimizer(params, OptimConfig(lr=3e-3, warmup_steps=40, epochs=epochs, batch=batch), epochs * len(train_ids) // batch)
        order_rng = np.random.default_rng([seed, 1])
        from tamperscope.autodiff import backward

        for _ in range(epochs):
            order = order_rng.permutation(len(train_ids))
            for start in range(0, len(order), batch):
                opt.zero_grad()
                for i in order[start : start + batch]:
                    sid = train_ids[i]
                    image, _, _ = view.sample(sid)
                    logits, _ = model.forward(Tensor(image))
                    probs = sigmoid(logits)
                    if use_dice:
                        loss = prompter_loss(probs, labels[sid], omega)
                    else:
                        loss = bce_loss(probs, labels[sid], omega)
                    backward(loss)
                opt.step(1.0 / batch)
        return eval_prompter(model, view, val_ids, 0.5)

    fpn_scores, vit_scores, wins = [], [], 0
    for seed in range(5):
        fpn = run_arm(seed, omega=0.2, m=2, use_dice=True)
        vit = run_arm(seed, omega=1.0, m=0, use_dice=False)
        fpn_scores.append(fpn)
        vit_scores.append(vit)
        wins += fpn > vit
    mean_fpn, mean_vit = float(np.mean(fpn_scores)), float(np.mean(vit_scores))
    assert mean_fpn > mean_vit, f"mean ordering violated: {mean_fpn:.4f} vs {mean_vit:.4f}"
    assert wins >= 4, f"ordering held in only {wins}/5 seeds"
    print(f"\nACCEPTANCE 8 PASS: dual-branch+dice(omega=0.2) mean PLM {mean_fpn:.4f} > "
          f"plain-BCE(omega=1) {mean_vit:.4f}; ordering in {wins}/5 seeds")


# ---------------------------------------------------------------------------
# 9. toy stage-2: mask IoU, caption mention rate, GT-conditioning direction
# ---------------------------------------------------------------------------


def test_c09_toy_stage2(workdir, crit7_run):
    ds, fpn_out, _, _ = crit7_run
    view = DatasetView(ds)
    prompter = load_prompter(fpn_out / "fpn.ckpt", PrompterConfig(), view.registry)
    icfg = InterpreterConfig(image_size=48, patch_size=8, enc_depth=2, fuser=FuserConfig())
    result = train_interpreter(
        view, prompter, icfg,
        OptimConfig(lr=1.5e-3, warmup_steps=60, epochs=6, batch=8, samples_per_epoch=1200),
        seed=0, out_dir=workdir / "stage2", val_limit=30,
    )
    assert result["fpn_hash_before"] == result["fpn_hash_after"], "frozen prompter drifted"

    from tamperscope.checkpoint import load_checkpoint, restore_into
    from tamperscope.instruct import Vocabulary
    from tamperscope.interpreter import ForgeryInterpreter

    vocab = Vocabulary.from_json((workdir / "stage2" / "vocab.json").read_text())
    model = ForgeryInterpreter(icfg, len(vocab), np.random.default_rng(0))
    restore_into(model.named_parameters(), load_checkpoint(workdir / "stage2" / "stage2.ckpt"))

    test_ids = view.ids("test")[:40]
    predicted_cache = PromptCache(prompter, view, vocab, prompter.cfg.threshold, use_gt_regions=False)
    gt_cache = PromptCache(prompter, view, vocab, prompter.cfg.threshold, use_gt_regions=True)
    predicted_eval = eval_interpreter(model, predicted_cache, view, test_ids, vocab)
    gt_eval = eval_interpreter(model, gt_cache, view, test_ids, vocab)

    assert predicted_eval["iou"] >= 0.5, f"held-out IoU {predicted_eval['iou']:.4f}"
    assert predicted_eval["mention_rate"] >= 0.9, f"mention rate {predicted_eval['mention_rate']:.4f}"
    assert gt_eval["mention_rate"] >= predicted_eval["mention_rate"] - 1e-12, (
        f"GT conditioning {gt_eval['mention_rate']:.4f} < predicted {predicted_eval['mention_rate']:.4f}"
    )
    print(f"\nACCEPTANCE 9 PASS: frozen-prompter hash unchanged; held-out IoU {predicted_eval['iou']:.4f} >= 0.5; "
          f"mention rate {predicted_eval['mention_rate']:.4f} >= 0.9; "
          f"GT-conditioned rate {gt_eval['mention_rate']:.4f} >= predicted")


# ---------------------------------------------------------------------------
# 10. QC contract
# ---------------------------------------------------------------------------


def test_c10_qc_contract():
    from tamperscope.forge import Triplet

    def fixture(caption, seconds, regions):
        return Triplet(id="fx", image=np.zeros((8, 8, 3), dtype=np.uint8), mask=np.zeros((8, 8)),
                       caption=caption, method="inpaint-T", seed=0,
                       modified_regions=list(regions), annotation_seconds=seconds)

    long_caption = " ".join(["odd"] * 120 + ["nose"]) + "."
    over = validate_triplet(fixture(long_caption, 120, ["nose"]), REGISTRY)
    assert not over.passed and any(v["kind"] == "over-length" for v in over.violations)

    ok_caption = " ".join(["odd"] * 119 + ["nose"]) + "."
    ok = validate_triplet(fixture(ok_caption, 120, ["nose"]), REGISTRY)
    assert ok.passed

    fast = validate_triplet(fixture("The nose looks odd.", 59, ["nose"]), REGISTRY)
    assert not fast.passed and any(v["kind"] == "under-time" for v in fast.violations)
    slow = validate_triplet(fixture("The nose looks odd.", 60, ["nose"]), REGISTRY)
    assert slow.passed

    planted = fixture("The nose looks odd. The left ear seems shifted out of place.", 90, ["nose"])
    screened = validate_triplet(planted, REGISTRY)
    fps = [v for v in screened.violations if v["kind"] == "false-positive-region"]
    assert [v["region"] for v in fps] == ["left ear"]
    assert screened.screened_caption == "The nose looks odd."
    print("\nACCEPTANCE 10 PASS: 121-word fails / 120 passes; 59s fails / 60s passes; "
          "planted false positive removed and reported")


# ---------------------------------------------------------------------------
# 11. determinism of the full command chain
# ---------------------------------------------------------------------------


def test_c11_determinism(workdir):
    config = workdir / "tiny.toml"
    config.write_text(TINY_TOML)
    digests = []
    for run in ("one", "two"):
        base = workdir / f"det_{run}"
        ds = base / "data"
        assert main(["synth", "--config", str(config), "--out", str(ds)]) == 0
        fpn = base / "fpn"
        assert main(["train-fpn", "--config", str(config), "--dataset", str(ds), "--out", str(fpn)]) == 0
        st2 = base / "st2"
        assert main(["train-stage2", "--config", str(config), "--dataset", str(ds),
                     "--fpn", str(fpn / "fpn.ckpt"), "--out", str(st2)]) == 0
        preds = base / "preds"
        assert main(["infer", "--config", str(config), "--dataset", str(ds), "--split", "test",
                     "--fpn", str(fpn / "fpn.ckpt"), "--stage2", str(st2),
                     "--out", str(preds), "--max-len", "20"]) == 0
        report = base / "report.json"
        assert main(["eval", "--predictions", str(preds / "predictions.jsonl"),
                     "--dataset", str(ds), "--out", str(report)]) == 0
        digests.append(
            {
                "manifest": (ds / "manifest.jsonl").read_bytes(),
                "fpn_ckpt": (fpn / "fpn.ckpt").read_bytes(),
                "fpn_report": (fpn / "report.json").read_bytes(),
                "stage2_ckpt": (st2 / "stage2.ckpt").read_bytes(),
                "predictions": (preds / "predictions.jsonl").read_bytes(),
                "metrics": report.read_bytes(),
            }
        )
    for key in digests[0]:
        assert digests[0][key] == digests[1][key], f"{key} differs between identical runs"
    print("\nACCEPTANCE 11 PASS: synth + train-fpn + train-stage2 + infer + eval "
          "byte-identical across two seeded runs (manifest, checkpoints, predictions, reports)")
