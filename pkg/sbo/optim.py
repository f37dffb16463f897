"""
adaptive-moment (Adam) optimizer over a dict of numpy parameter arrays

shared by the BPR recommender and the attacker network; parameters are updated in place
"""
import numpy as np


class Adam():
    """
    Adam with bias correction

    USAGE
        opt = Adam({'W': W, 'b': b}, learning_rate=1e-3)
        opt.step({'W': dW, 'b': db})
    """
    def __init__(s, params, learning_rate=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        s.params = params
        s.learning_rate = learning_rate
        s.beta1 = beta1
        s.beta2 = beta2
        s.eps = eps
        s.t = 0
        s.m = {k: np.zeros_like(v) for k, v in params.items()}
        s.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(s, grads):
        """one update; `grads` maps (a subset of) parameter names to full-shape gradients"""
        s.t += 1
        correction1 = 1.0 - s.beta1 ** s.t
        correction2 = 1.0 - s.beta2 ** s.t
        for name, grad in grads.items():
            m, v = s.m[name], s.v[name]
            m *= s.beta1
            m += (1.0 - s.beta1) * grad
            v *= s.beta2
            v += (1.0 - s.beta2) * grad * grad
            s.params[name] -= s.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + s.eps)
