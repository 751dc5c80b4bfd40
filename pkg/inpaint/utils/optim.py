from dataclasses import dataclass

import torch


@dataclass
class AdamState:
    exp_avg: torch.Tensor
    exp_avg_sq: torch.Tensor
    step: int = 0

    @classmethod
    def zeros_like(cls, param):
        return cls(torch.zeros_like(param), torch.zeros_like(param), 0)


def adam_update(param, grad, state, lr, betas=(0.9, 0.999), eps=1e-8):
    """One Adam step with bias correction.

    Args:
        param (torch.Tensor): current value.
        grad (torch.Tensor): gradient, same shape.
        state (AdamState): moments and step count before this update.
        lr (float): learning rate.

    Returns:
        (torch.Tensor, AdamState): new value and new state. Inputs are not
        modified.
    """
    if grad.shape != param.shape:
        raise ValueError(f'gradient shape {tuple(grad.shape)} does not match '
                         f'parameter shape {tuple(param.shape)}')
    beta1, beta2 = betas
    step = state.step + 1

    exp_avg = beta1 * state.exp_avg + (1 - beta1) * grad
    exp_avg_sq = beta2 * state.exp_avg_sq + (1 - beta2) * grad * grad
    m_hat = exp_avg / (1 - beta1 ** step)
    v_hat = exp_avg_sq / (1 - beta2 ** step)
    new_param = param - lr * m_hat / (v_hat.sqrt() + eps)
    return new_param, AdamState(exp_avg, exp_avg_sq, step)


class Adam:
    """Applies `adam_update` to every trainable parameter of a module, in
    `named_parameters` order."""

    def __init__(self, module, lr, betas=(0.9, 0.999), eps=1e-8):
        self.module = module
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.states = {name: AdamState.zeros_like(p.detach())
                       for name, p in module.named_parameters() if p.requires_grad}

    @property
    def step_count(self):
        return max((s.step for s in self.states.values()), default=0)

    def step(self, grads):
        """
        Args:
            grads (dict of str to torch.Tensor): gradient per parameter name;
                a missing name is treated as a zero gradient.
        """
        with torch.no_grad():
            for name, param in self.module.named_parameters():
                if name not in self.states:
                    continue
                grad = grads.get(name)
                if grad is None:
                    grad = torch.zeros_like(param)
                new_param, self.states[name] = adam_update(param.detach(), grad.detach(),
                                                           self.states[name], self.lr,
                                                           self.betas, self.eps)
                param.copy_(new_param)

    def state_tensors(self, prefix):
        tensors = {}
        for name, state in self.states.items():
            tensors[f'{prefix}.exp_avg.{name}'] = state.exp_avg
            tensors[f'{prefix}.exp_avg_sq.{name}'] = state.exp_avg_sq
        return tensors

    def state_steps(self):
        return {name: state.step for name, state in self.states.items()}

    def load_state(self, tensors, steps, prefix):
        for name in self.states:
            self.states[name] = AdamState(tensors[f'{prefix}.exp_avg.{name}'].clone(),
                                          tensors[f'{prefix}.exp_avg_sq.{name}'].clone(),
                                          int(steps[name]))
