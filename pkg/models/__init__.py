"""
Latent codec, sequence layouts, the two-expert transformer, losses and flow
"""

from .codec import CodecParams, choose_latent_dim, decode, encode, fit_codec
from .flow import FlowPoint, euler_integrate, euler_sample, make_flow_point
from .layout import IGNORE_INDEX, ImageSlot, Kind, Role, SequenceLayout, concat_layouts
from .losses import image_loss, text_loss, total_loss
from .transformer import TwoExpertTransformer, param_partition

__all__ = [
    'CodecParams',
    'fit_codec',
    'choose_latent_dim',
    'encode',
    'decode',
    'FlowPoint',
    'make_flow_point',
    'euler_integrate',
    'euler_sample',
    'IGNORE_INDEX',
    'ImageSlot',
    'Kind',
    'Role',
    'SequenceLayout',
    'concat_layouts',
    'text_loss',
    'image_loss',
    'total_loss',
    'TwoExpertTransformer',
    'param_partition'
]
