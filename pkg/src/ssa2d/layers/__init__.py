"""Spatio-temporal layer implementations."""

from .atrous import AtrousBlock, atrous_block
from .base import Layer, layer_rng
from .conv import Conv3D, Conv3DParams, ConvBlock, Deconv3D, conv3d, deconv3d
from .pooling import maxpool3d
from .resample import resize_nearest, upsample_trilinear

__all__ = [
	"Layer",
	"layer_rng",
	"Conv3D",
	"Conv3DParams",
	"ConvBlock",
	"Deconv3D",
	"AtrousBlock",
	"conv3d",
	"deconv3d",
	"maxpool3d",
	"upsample_trilinear",
	"resize_nearest",
	"atrous_block",
]
