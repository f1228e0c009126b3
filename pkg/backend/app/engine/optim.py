"""
Adam 优化器与损失函数
"""

from typing import Dict, Optional, Tuple

import numpy as np

from app.schemas import AdamConfig


class Adam:
    """按参数名维护一阶、二阶矩估计；无权重衰减"""

    def __init__(self, config: Optional[AdamConfig] = None):
        config = config or AdamConfig()
        self.lr = config.lr
        self.beta1 = config.beta1
        self.beta2 = config.beta2
        self.eps = config.eps
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        step_size = self.lr / bc1

        # 固定的参数名顺序
        for name in sorted(params):
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])

            self.m[name] *= self.beta1
            self.m[name] += (1.0 - self.beta1) * g
            self.v[name] *= self.beta2
            self.v[name] += (1.0 - self.beta2) * (g * g)

            denom = np.sqrt(self.v[name] * (1.0 / bc2)) + self.eps
            params[name] -= step_size * self.m[name] / denom

    def state_dict(self) -> dict:
        return {"t": self.t, "m": dict(self.m), "v": dict(self.v)}


def mse_loss(prediction: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """均方误差及其对预测的梯度"""
    prediction = np.asarray(prediction, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64).reshape(prediction.shape)
    diff = prediction - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy_loss(logits: np.ndarray, labels: np.ndarray,
                       mask: Optional[np.ndarray] = None) -> Tuple[float, np.ndarray]:
    """softmax 交叉熵，mask 选出参与损失的节点"""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    mask = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    grad = np.zeros_like(logits)
    if count == 0:
        return 0.0, grad

    probs = softmax(logits)
    idx = np.flatnonzero(mask)
    picked = probs[idx, labels[idx]]
    loss = float(-np.mean(np.log(np.maximum(picked, 1e-300))))
    grad[idx] = probs[idx]
    grad[idx, labels[idx]] -= 1.0
    return loss, grad / count


def accuracy(logits: np.ndarray, labels: np.ndarray, mask: Optional[np.ndarray] = None) -> float:
    pred = np.asarray(logits).argmax(axis=1)
    labels = np.asarray(labels)
    mask = np.ones(labels.shape[0], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        return 0.0
    return float(np.mean(pred[mask] == labels[mask]))
