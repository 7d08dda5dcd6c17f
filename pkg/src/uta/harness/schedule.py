def lr_schedule(step: int, total_steps: int, max_lr: float, warmup_frac: float = 0.05) -> float:
    """Linear warm-up from 0 to ``max_lr``, then linear decay to 0 at ``total_steps``."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warm = warmup_frac * total_steps
    if warm > 0 and step < warm:
        return max_lr * step / warm
    if step >= total_steps:
        return 0.0
    return max_lr * (total_steps - step) / (total_steps - warm)
