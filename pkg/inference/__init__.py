from .interleave import InferenceMode, InterleaveEngine, Rollout, grid_png

__all__ = ['InferenceMode', 'InterleaveEngine', 'Rollout', 'grid_png']
