"""Coarse-to-fine generator and multiscale patch discriminators."""

from __future__ import annotations

from torch import nn
from torch.nn import functional as F


def _norm(ch: int) -> nn.Module:
    return nn.InstanceNorm2d(ch, affine=False)


class ResBlock(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.ReflectionPad2d(1), nn.Conv2d(ch, ch, 3), _norm(ch), nn.ReLU(True),
            nn.ReflectionPad2d(1), nn.Conv2d(ch, ch, 3), _norm(ch),
        )

    def forward(self, x):
        return x + self.body(x)


class GlobalGenerator(nn.Module):
    """Downsampling stack -> residual blocks -> upsampling stack.

    ``features`` stops before the output convolution so the enhancer can
    add its own full-resolution features on top.
    """

    def __init__(self, in_ch: int, out_ch: int, ngf: int, n_down: int, n_blocks: int):
        super().__init__()
        layers = [nn.ReflectionPad2d(3), nn.Conv2d(in_ch, ngf, 7), _norm(ngf), nn.ReLU(True)]
        for i in range(n_down):
            c = ngf * 2 ** i
            layers += [nn.Conv2d(c, 2 * c, 3, 2, 1), _norm(2 * c), nn.ReLU(True)]
        c = ngf * 2 ** n_down
        layers += [ResBlock(c) for _ in range(n_blocks)]
        for i in range(n_down):
            c = ngf * 2 ** (n_down - i)
            layers += [nn.ConvTranspose2d(c, c // 2, 3, 2, 1, output_padding=1), _norm(c // 2), nn.ReLU(True)]
        self.features = nn.Sequential(*layers)
        self.head = nn.Sequential(nn.ReflectionPad2d(3), nn.Conv2d(ngf, out_ch, 7), nn.Tanh())

    def forward(self, x):
        return self.head(self.features(x))


class LocalEnhancer(nn.Module):
    """Full-resolution wrapper around a global generator run at half resolution.

    The global subnet has twice the enhancer's channels; its last feature map
    is added to the enhancer's downsampled features before the enhancer's
    residual blocks and upsampling. Output is mapped to [0, 1].
    """

    def __init__(self, in_ch: int = 1, out_ch: int = 1, ngf: int = 16, n_down: int = 2,
                 n_blocks: int = 3, n_local_blocks: int = 1):
        super().__init__()
        self.global_net = GlobalGenerator(in_ch, out_ch, 2 * ngf, n_down, n_blocks)
        self.down = nn.Sequential(
            nn.ReflectionPad2d(3), nn.Conv2d(in_ch, ngf, 7), _norm(ngf), nn.ReLU(True),
            nn.Conv2d(ngf, 2 * ngf, 3, 2, 1), _norm(2 * ngf), nn.ReLU(True),
        )
        self.up = nn.Sequential(
            *[ResBlock(2 * ngf) for _ in range(n_local_blocks)],
            nn.ConvTranspose2d(2 * ngf, ngf, 3, 2, 1, output_padding=1), _norm(ngf), nn.ReLU(True),
            nn.ReflectionPad2d(3), nn.Conv2d(ngf, out_ch, 7), nn.Tanh(),
        )

    def forward(self, x):
        coarse = F.avg_pool2d(x, 3, 2, 1, count_include_pad=False)
        h = self.down(x) + self.global_net.features(coarse)
        return 0.5 * (self.up(h) + 1.0)


class PatchDiscriminator(nn.Module):
    """Strided conv classifier returning every intermediate activation.

    The last entry of ``forward``'s list is the per-patch logit map.
    """

    def __init__(self, in_ch: int = 2, ndf: int = 16, n_layers: int = 3):
        super().__init__()
        blocks = [nn.Sequential(nn.Conv2d(in_ch, ndf, 4, 2, 2), nn.LeakyReLU(0.2, True))]
        c = ndf
        for n in range(1, n_layers):
            nc = min(2 * c, 8 * ndf)
            blocks.append(nn.Sequential(nn.Conv2d(c, nc, 4, 2, 2), _norm(nc), nn.LeakyReLU(0.2, True)))
            c = nc
        nc = min(2 * c, 8 * ndf)
        blocks.append(nn.Sequential(nn.Conv2d(c, nc, 4, 1, 2), _norm(nc), nn.LeakyReLU(0.2, True)))
        blocks.append(nn.Conv2d(nc, 1, 4, 1, 2))
        self.blocks = nn.ModuleList(blocks)

    def forward(self, x):
        feats = []
        for b in self.blocks:
            x = b(x)
            feats.append(x)
        return feats


class MultiscaleDiscriminator(nn.Module):
    """``num_d`` discriminators; number k (from 0) sees the input at 1/2^k scale."""

    def __init__(self, in_ch: int = 2, ndf: int = 16, n_layers: int = 3, num_d: int = 3):
        super().__init__()
        self.nets = nn.ModuleList([PatchDiscriminator(in_ch, ndf, n_layers) for _ in range(num_d)])

    @staticmethod
    def downsample(x):
        return F.avg_pool2d(x, 3, 2, 1, count_include_pad=False)

    def pyramid(self, x):
        out = []
        for _ in self.nets:
            out.append(x)
            x = self.downsample(x)
        return out

    def forward(self, x):
        return [net(inp) for net, inp in zip(self.nets, self.pyramid(x))]
