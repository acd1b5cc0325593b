"""Writes a 3-channel identity backbone (1x1 conv, global average pool) as ONNX.

Its pooled output is the per-channel mean of the normalized input, which the
extractor tests compute independently.
"""
import sys

import torch


class Identity(torch.nn.Module):
    def __init__(self):
        super().__init__()
        self.conv = torch.nn.Conv2d(3, 3, 1, bias=False)
        with torch.no_grad():
            self.conv.weight.copy_(torch.eye(3).reshape(3, 3, 1, 1))
        self.pool = torch.nn.AdaptiveAvgPool2d(1)

    def forward(self, x):
        return self.pool(self.conv(x))


out = sys.argv[1] if len(sys.argv) > 1 else "identity_backbone.onnx"
torch.onnx.export(Identity().eval(), torch.zeros(1, 3, 32, 32), out, opset_version=11,
                  input_names=["input"], output_names=["pooled"], dynamo=False)
