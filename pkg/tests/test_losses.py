import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings, strategies as st
from torch import nn

from src.losses import (
    LabelBatch, classifier_ce, fused_ce, generator_loss, perceptual_mse, pixel_mse, routed_ce,
)
from src.fusion import predict_logits
from src.nets.bundle import build_bundle
from src.nets.perceptual import PerceptualNet
from tests.conftest import micro_config

H = 1e-4


def _nested_mse(a: np.ndarray, b: np.ndarray) -> float:
    """逐元素循环的参考实现"""
    total, count = 0.0, 0
    B, C, Hh, W = a.shape
    for i in range(B):
        for c in range(C):
            for y in range(Hh):
                for x in range(W):
                    d = float(a[i, c, y, x]) - float(b[i, c, y, x])
                    total += d * d
                    count += 1
    return total / count


def _ce_oracle(row: np.ndarray, label: int) -> float:
    """单行 logits 的交叉熵参考实现"""
    p = np.exp(row - row.max())
    p /= p.sum()
    return -math.log(float(p[label]))


class TestSimilarityLosses:
    """测试像素与感知相似项"""

    def test_pixel_mse_matches_reference(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            shape = (int(rng.integers(1, 3)), 3, int(rng.integers(1, 5)), int(rng.integers(1, 5)))
            a, b = rng.random(shape), rng.random(shape)
            got = float(pixel_mse(torch.from_numpy(a), torch.from_numpy(b)))
            ref = _nested_mse(a, b)
            assert abs(got - ref) <= 1e-6 * max(abs(ref), 1e-12)

    def test_perceptual_mse_matches_reference(self):
        pnet = PerceptualNet("relu2_2", width=0.125).to(torch.float64)
        rng = np.random.default_rng(1)
        for _ in range(100):
            a = torch.from_numpy(rng.random((1, 3, 8, 8)))
            b = torch.from_numpy(rng.random((1, 3, 8, 8)))
            ref = _nested_mse(pnet(a).numpy(), pnet(b).numpy())
            got = float(perceptual_mse(pnet, a, b))
            assert abs(got - ref) <= 1e-6 * max(abs(ref), 1e-12)

    def test_identical_images_zero(self):
        X = torch.rand(2, 3, 8, 8)
        assert float(pixel_mse(X, X.clone())) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            pixel_mse(torch.rand(1, 3, 8, 8), torch.rand(1, 3, 8, 4))


class TestClassificationLosses:
    """测试分类交叉熵与路由交叉熵"""

    def test_classifier_ce_sums_streams(self):
        """各流的平均交叉熵之和"""
        logits = torch.randn(2, 5, 3, dtype=torch.float64)
        labels = torch.tensor([0, 2, 1, 1, 0])
        expected = sum(F.cross_entropy(logits[s], labels) for s in range(2))
        assert torch.allclose(classifier_ce(logits, labels), expected)

    def test_routed_ce_masks_other_classes(self):
        """只统计真实类别为 k 的样本，但除以整个批大小"""
        logits = torch.randn(4, 2, dtype=torch.float64)
        labels = torch.tensor([0, 1, 1, 0])
        log_p = F.log_softmax(logits, dim=-1)
        expected = -(log_p[1, 1] + log_p[2, 1]) / 4
        assert torch.allclose(routed_ce(logits, labels, 1), expected)

    def test_classifier_ce_hand_values(self):
        """两个流都均匀时为 2ln2；一个流是真实类别的 one-hot 时只剩 ln2"""
        uniform = torch.zeros(2, 1, 2, dtype=torch.float64)
        label = torch.tensor([0])
        assert float(classifier_ce(uniform, label)) == pytest.approx(2 * math.log(2), rel=1e-12)
        one_hot = uniform.clone()
        one_hot[0, 0, 1] = -math.inf
        assert float(classifier_ce(one_hot, label)) == pytest.approx(math.log(2), rel=1e-12)

    def test_classifier_ce_duplicated_batch(self):
        """把批次复制一份，损失不变"""
        g = torch.Generator().manual_seed(3)
        logits = torch.randn(3, 4, 3, generator=g, dtype=torch.float64)
        labels = torch.tensor([0, 2, 1, 1])
        doubled = classifier_ce(torch.cat([logits, logits], dim=1), torch.cat([labels, labels]))
        assert torch.allclose(doubled, classifier_ce(logits, labels), rtol=1e-12, atol=0)

    def test_classifier_ce_is_sum_of_stream_ce(self):
        """等于逐流逐样本计算的交叉熵之和"""
        rng = np.random.default_rng(4)
        for _ in range(20):
            s, b, n = (int(v) for v in rng.integers(1, 6, size=3) + [0, 0, 1])
            logits = rng.normal(scale=3.0, size=(s, b, n))
            labels = rng.integers(0, n, size=b)
            expected = sum(sum(_ce_oracle(logits[k, j], labels[j]) for j in range(b)) / b
                           for k in range(s))
            got = classifier_ce(torch.from_numpy(logits), torch.from_numpy(labels))
            assert float(got) == pytest.approx(expected, rel=1e-9)

    def test_routed_ce_uniform(self):
        """B=1、标签为 k、均匀 logits 时为 ln2"""
        logits = torch.zeros(1, 2, dtype=torch.float64)
        assert float(routed_ce(logits, torch.tensor([1]), 1)) == pytest.approx(math.log(2), rel=1e-12)

    def test_routed_ce_masked_oracle(self):
        """与按掩码逐样本累加的参考值一致，也等于类别 k 子批次的交叉熵按比例缩放"""
        rng = np.random.default_rng(5)
        for _ in range(30):
            b, n = int(rng.integers(1, 8)), int(rng.integers(2, 5))
            logits = rng.normal(scale=2.0, size=(b, n))
            labels = rng.integers(0, n, size=b)
            for k in range(n):
                expected = sum(_ce_oracle(logits[j], k) for j in range(b) if labels[j] == k) / b
                got = float(routed_ce(torch.from_numpy(logits), torch.from_numpy(labels), k))
                assert got == pytest.approx(expected, rel=1e-9, abs=1e-15)
                sub = labels == k
                if sub.any():
                    sub_ce = classifier_ce(torch.from_numpy(logits[sub])[None],
                                           torch.from_numpy(labels[sub]))
                    assert got == pytest.approx(float(sub_ce) * sub.sum() / b, rel=1e-9)

    def test_softmax_rows_normalised(self, micro_bundle):
        """每个流每张图像的 softmax 概率之和为 1"""
        X = torch.rand(5, 3, 8, 8)
        logits = predict_logits(micro_bundle, X).double()
        extreme = torch.tensor([[[1000.0, -1000.0]], [[-50.0, 700.0]]], dtype=torch.float64)
        for value in (logits, extreme):
            sums = F.log_softmax(value, dim=-1).exp().sum(dim=-1)
            assert torch.allclose(sums, torch.ones_like(sums), rtol=0, atol=1e-6)

    def test_routed_ce_absent_class(self):
        logits = torch.randn(3, 2)
        assert float(routed_ce(logits, torch.tensor([1, 1, 1]), 0)) == 0.0

    def test_fused_ce_hand_value(self):
        """真实类别的概率质量为 exp(2)+exp(3) / (exp(2)+exp(-1)+exp(0.5)+exp(3))"""
        logits = torch.tensor([[[2.0, -1.0]], [[0.5, 3.0]]], dtype=torch.float64)
        mass = (math.exp(2.0) + math.exp(0.5)) / sum(math.exp(v) for v in (2.0, -1.0, 0.5, 3.0))
        assert float(fused_ce(logits, torch.tensor([0]))) == pytest.approx(-math.log(mass))

    def test_label_validation(self):
        with pytest.raises(ValueError):
            LabelBatch(torch.tensor([0, 2]), 2)
        with pytest.raises(ValueError):
            routed_ce(torch.randn(2, 2), torch.tensor([0, 1]), 2)
        assert LabelBatch(torch.tensor([1, 0]), 2).one_hot.tolist() == [[0, 1], [1, 0]]


class TestGeneratorLoss:
    """测试生成器组合损失"""

    def test_total_recomposes(self, micro_batch):
        bundle = build_bundle(micro_config()).to(torch.float64)
        X, labels = micro_batch
        X = X.double()
        Xp = bundle.generators[1](X)
        parts = generator_loss(X, Xp, bundle.classifier(Xp), labels, 1, 0.05, bundle.perceptual)
        recomposed = parts.l_mse + 0.006 * parts.l_perceptual + 0.05 * parts.l_ce_routed
        assert abs(float(parts.total) - float(recomposed)) < 1e-9
        row = parts.to_row(step=7)
        assert row["k"] == 1 and row["lambda"] == 0.05 and row["step"] == 7

    def test_negative_lambda(self, micro_bundle, micro_batch):
        X, labels = micro_batch
        Xp = micro_bundle.generators[0](X)
        with pytest.raises(ValueError):
            generator_loss(X, Xp, micro_bundle.classifier(Xp), labels, 0, -0.1, micro_bundle.perceptual)

    @settings(max_examples=25, deadline=None)
    @given(lam=st.floats(min_value=0, max_value=10))
    def test_lambda_scales_routed_term_only(self, lam):
        """lambda 只影响路由交叉熵项"""
        pnet = PerceptualNet("relu2_2", width=0.125)
        g = torch.Generator().manual_seed(0)
        X, Xp = torch.rand(2, 3, 8, 8, generator=g), torch.rand(2, 3, 8, 8, generator=g)
        logits = torch.randn(2, 2, generator=g)
        a = generator_loss(X, Xp, logits, torch.tensor([0, 1]), 0, lam, pnet)
        b = generator_loss(X, Xp, logits, torch.tensor([0, 1]), 0, 0.0, pnet)
        assert torch.equal(a.l_mse, b.l_mse) and torch.equal(a.l_perceptual, b.l_perceptual)
        assert float(a.total - b.total) == pytest.approx(lam * float(a.l_ce_routed), rel=1e-5, abs=1e-6)


class KinkRecorder:
    """记录 ReLU/PReLU 的输入符号和最大池化的选择位置，用于识别跨过不可导点的扰动"""

    def __init__(self, *modules: nn.Module):
        self.records = []
        self.handles = []
        for module in modules:
            for m in module.modules():
                if isinstance(m, (nn.ReLU, nn.PReLU, nn.MaxPool2d)):
                    self.handles.append(m.register_forward_pre_hook(self._hook))

    def _hook(self, module, inputs):
        x = inputs[0].detach()
        if isinstance(module, nn.MaxPool2d):
            _, idx = F.max_pool2d(x, module.kernel_size, module.stride, module.padding,
                                  return_indices=True)
            self.records.append(idx)
        else:
            self.records.append(x > 0)

    def take(self):
        records, self.records = self.records, []
        return records

    def close(self):
        for h in self.handles:
            h.remove()


def _same_pattern(a, b) -> bool:
    return len(a) == len(b) and all(torch.equal(x, y) for x, y in zip(a, b))


def _gradient_check(loss_fn, params, recorder, n_samples, seed):
    """中心差分与解析梯度比较，返回 (最大相对误差, 检查的参数个数)"""
    for p in params:
        p.grad = None
    loss_fn().backward()
    analytic = [p.grad.detach().clone() for p in params]

    rng = np.random.default_rng(seed)
    sizes = np.array([p.numel() for p in params])
    worst, checked = 0.0, 0
    with torch.no_grad():
        for _ in range(n_samples):
            i = int(rng.choice(len(params), p=sizes / sizes.sum()))
            j = int(rng.integers(sizes[i]))
            flat = params[i].data.view(-1)
            orig = float(flat[j])
            flat[j] = orig + H
            recorder.take()
            up = float(loss_fn())
            up_pattern = recorder.take()
            flat[j] = orig - H
            down = float(loss_fn())
            down_pattern = recorder.take()
            flat[j] = orig
            if not _same_pattern(up_pattern, down_pattern):
                continue
            numeric = (up - down) / (2 * H)
            a = float(analytic[i].view(-1)[j])
            # 梯度很小时以 1e-4 为分母下限
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-4)
            worst = max(worst, err)
            checked += 1
    return worst, checked


class TestGradients:
    """解析梯度与有限差分一致（float64，步长 1e-4）"""

    @pytest.fixture
    def double_setup(self):
        torch.manual_seed(0)
        bundle = build_bundle(micro_config(lambda_=0.5)).to(torch.float64)
        bundle.train()
        X = torch.rand(3, 3, 8, 8, dtype=torch.float64)
        labels = torch.tensor([0, 1, 1])
        recorder = KinkRecorder(bundle.generators, bundle.classifier, bundle.perceptual)
        yield bundle, X, labels, recorder
        recorder.close()

    def test_generator_loss_gradients(self, double_setup):
        bundle, X, labels, recorder = double_setup
        k = 1
        gen = bundle.generators[k]

        def loss():
            Xp = gen(X)
            return generator_loss(X, Xp, bundle.classifier(Xp), labels, k, 0.5,
                                  bundle.perceptual).total

        worst, checked = _gradient_check(loss, list(gen.parameters()), recorder, 260, seed=1)
        assert checked >= 200
        assert worst < 1e-3

    def test_classifier_ce_gradients(self, double_setup):
        bundle, X, labels, recorder = double_setup
        with torch.no_grad():
            streams = [g(X) for g in bundle.generators]

        def loss():
            return classifier_ce(torch.stack([bundle.classifier(s) for s in streams]), labels)

        params = list(bundle.classifier.parameters())
        worst, checked = _gradient_check(loss, params, recorder, 260, seed=2)
        assert checked >= 200
        assert worst < 1e-3
